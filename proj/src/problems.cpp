#include "byzopt/problems.hpp"

#include "byzopt/kernels.hpp"
#include "byzopt/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace byzopt {

Vector NodeLoss::batch_gradient(const Vector&, std::span<const Index>) const {
  throw InvalidArgument("loss has no sample data; use a gaussian_iid oracle");
}

Vector NodeLoss::masked_gradient(const Vector&, bool, double) const {
  throw InvalidArgument("bernoulli_chain oracle requires a chain loss");
}

// ---- QuadraticLoss -------------------------------------------------------

QuadraticLoss::QuadraticLoss(Vector curvature, Vector offset)
    : curvature_(std::move(curvature)), offset_(std::move(offset)) {
  require(curvature_.size() == offset_.size(), "quadratic: curvature/offset size mismatch");
  require((curvature_.array() > 0.0).all(), "quadratic: curvature must be positive");
}

double QuadraticLoss::value(const Vector& x) const {
  require_same_dim(x, dim(), "quadratic value");
  return 0.5 * x.cwiseProduct(curvature_).dot(x) - offset_.dot(x);
}

Vector QuadraticLoss::gradient(const Vector& x) const {
  require_same_dim(x, dim(), "quadratic gradient");
  return curvature_.cwiseProduct(x) - offset_;
}

// ---- LogisticLoss --------------------------------------------------------

LogisticLoss::LogisticLoss(std::shared_ptr<const Matrix> features, std::vector<int> labels, std::vector<Index> rows,
                           int classes, double l2)
    : features_(std::move(features)), labels_(std::move(labels)), rows_(std::move(rows)), classes_(classes), l2_(l2) {
  require(features_ != nullptr, "logistic: features missing");
  require(!rows_.empty(), "logistic: empty shard");
  require(labels_.size() == rows_.size(), "logistic: label/row count mismatch");
  require(classes_ >= 2, "logistic: need at least two classes");
  require(l2_ >= 0.0, "logistic: l2 must be nonnegative");
  for (int y : labels_) require(y >= 0 && y < classes_, "logistic: label out of range");
  for (Index r : rows_) require(r >= 0 && r < features_->rows(), "logistic: row out of range");
}

namespace {
// Row-wise softmax in place, shifted by the row max.
void softmax_rows(Matrix& logits) {
  for (Index r = 0; r < logits.rows(); ++r) {
    const double top = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - top).exp();
    logits.row(r) /= logits.row(r).sum();
  }
}
}  // namespace

double LogisticLoss::value(const Vector& x) const {
  require_same_dim(x, dim(), "logistic value");
  const Index p = features_->cols();
  const Eigen::Map<const Matrix> W(x.data(), p, classes_);
  double total = 0.0;
  for (std::size_t k = 0; k < rows_.size(); ++k) {
    const Eigen::RowVectorXd z = features_->row(rows_[k]) * W;
    const double top = z.maxCoeff();
    const double lse = top + std::log((z.array() - top).exp().sum());
    total += lse - z[labels_[k]];
  }
  return total / static_cast<double>(rows_.size()) + 0.5 * l2_ * x.squaredNorm();
}

Vector LogisticLoss::gradient_over(const Vector& x, std::span<const Index> local) const {
  require_same_dim(x, dim(), "logistic gradient");
  const Index p = features_->cols();
  const auto count = static_cast<Index>(local.size());
  Matrix batch(count, p);
  for (Index k = 0; k < count; ++k) batch.row(k) = features_->row(rows_[local[k]]);
  const Eigen::Map<const Matrix> W(x.data(), p, classes_);
  Matrix probs = batch * W;
  softmax_rows(probs);
  for (Index k = 0; k < count; ++k) probs(k, labels_[local[k]]) -= 1.0;
  Vector grad(dim());
  Eigen::Map<Matrix> G(grad.data(), p, classes_);
  G.noalias() = batch.transpose() * probs / static_cast<double>(count);
  grad += l2_ * x;
  return grad;
}

Vector LogisticLoss::gradient(const Vector& x) const {
  std::vector<Index> all(rows_.size());
  std::iota(all.begin(), all.end(), Index{0});
  return gradient_over(x, all);
}

Vector LogisticLoss::batch_gradient(const Vector& x, std::span<const Index> samples) const {
  require(!samples.empty(), "logistic: empty batch");
  for (Index s : samples) require(s >= 0 && s < sample_count(), "logistic: sample index out of range");
  return gradient_over(x, samples);
}

double LogisticLoss::smoothness_bound() const {
  const Index p = features_->cols();
  Matrix gram = Matrix::Zero(p, p);
  Matrix shard(static_cast<Index>(rows_.size()), p);
  for (std::size_t k = 0; k < rows_.size(); ++k) shard.row(static_cast<Index>(k)) = features_->row(rows_[k]);
  gram.noalias() = shard.transpose() * shard / static_cast<double>(rows_.size());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  // The softmax Hessian with respect to the logits, diag(p) - pp^T, has spectral norm <= 1/2.
  return 0.5 * eig.eigenvalues().maxCoeff() + l2_;
}

// ---- WavyLoss ------------------------------------------------------------

WavyLoss::WavyLoss(Index d, double amplitude, double coupling, Vector offset)
    : amplitude_(amplitude), coupling_(coupling), offset_(std::move(offset)) {
  require(offset_.size() == d && d >= 1, "wavy: offset dimension mismatch");
  require(amplitude_ >= 0.0 && coupling_ >= 0.0, "wavy: amplitude and coupling must be nonnegative");
}

double WavyLoss::value(const Vector& x) const {
  require_same_dim(x, dim(), "wavy value");
  double v = 0.5 * x.squaredNorm() + amplitude_ * x.array().cos().sum() - offset_.dot(x);
  for (Index j = 0; j + 1 < x.size(); ++j) v += 0.5 * coupling_ * (x[j + 1] - x[j]) * (x[j + 1] - x[j]);
  return v;
}

Vector WavyLoss::gradient(const Vector& x) const {
  require_same_dim(x, dim(), "wavy gradient");
  Vector g = x - amplitude_ * x.array().sin().matrix() - offset_;
  for (Index j = 0; j + 1 < x.size(); ++j) {
    const double diff = coupling_ * (x[j + 1] - x[j]);
    g[j] -= diff;
    g[j + 1] += diff;
  }
  return g;
}

// ---- Problem -------------------------------------------------------------

bool Problem::is_honest(int node) const { return std::binary_search(honest.begin(), honest.end(), node); }

std::vector<int> Problem::byzantine() const {
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (!is_honest(i)) out.push_back(i);
  return out;
}

const NodeLoss& Problem::loss(int node) const {
  if (node < 0 || node >= n) throw InvalidArgument("node index out of range");
  if (!is_honest(node) || !losses[static_cast<std::size_t>(node)])
    throw InvalidArgument("node " + std::to_string(node) + " is not honest; Byzantine nodes have no honest loss");
  return *losses[static_cast<std::size_t>(node)];
}

void Problem::validate() const {
  require(n >= 1 && d >= 1, "problem: empty");
  require(std::is_sorted(honest.begin(), honest.end()) &&
              std::adjacent_find(honest.begin(), honest.end()) == honest.end(),
          "problem: honest set must be sorted and unique");
  require(!honest.empty() && honest.front() >= 0 && honest.back() < n, "problem: honest ids out of range");
  require(static_cast<int>(losses.size()) == n, "problem: losses must be indexed by node");
  require(delta >= 0.0 && delta < 0.5, "problem: delta must lie in [0, 0.5)");
  require(2 * honest_count() > n, "problem: honest nodes must be a strict majority");
  require(static_cast<double>(honest_count()) >= (1.0 - delta) * n - 1e-9,
          "problem: |H| must be at least (1 - delta) n");
  require(L >= 0.0 && mu >= 0.0 && zeta_sq >= 0.0, "problem: constants must be nonnegative");
  require(mu <= L * (1.0 + 1e-12) || mu == 0.0, "problem: mu must not exceed L");
  for (int i : honest) {
    require(losses[static_cast<std::size_t>(i)] != nullptr, "problem: honest node without loss");
    require(losses[static_cast<std::size_t>(i)]->dim() == d, "problem: loss dimension mismatch");
  }
  require(poisoned.empty() || static_cast<int>(poisoned.size()) == n, "problem: poisoned losses must be indexed by node");
}

Vector gradient(const Problem& problem, int node, const Vector& x) {
  require_same_dim(x, problem.d, "gradient");
  return problem.loss(node).gradient(x);
}

std::vector<Vector> honest_gradients(const Problem& problem, const Vector& x) {
  require_same_dim(x, problem.d, "gradient");
  std::vector<Vector> grads(problem.honest.size());
  kernels::for_each_index(static_cast<Index>(grads.size()), [&](Index k) {
    grads[static_cast<std::size_t>(k)] = problem.loss(problem.honest[static_cast<std::size_t>(k)]).gradient(x);
  });
  return grads;
}

Vector full_gradient(const Problem& problem, const Vector& x) {
  const auto grads = honest_gradients(problem, x);
  Vector acc = Vector::Zero(problem.d);
  for (const auto& g : grads) acc += g;  // node order, independent of threads
  return acc / static_cast<double>(grads.size());
}

double full_value(const Problem& problem, const Vector& x) {
  require_same_dim(x, problem.d, "value");
  std::vector<double> vals(problem.honest.size());
  kernels::for_each_index(static_cast<Index>(vals.size()), [&](Index k) {
    vals[static_cast<std::size_t>(k)] = problem.loss(problem.honest[static_cast<std::size_t>(k)]).value(x);
  });
  double acc = 0.0;
  for (double v : vals) acc += v;
  return acc / static_cast<double>(vals.size());
}

double measure_heterogeneity(const Problem& problem, std::span<const Vector> xs) {
  double worst = 0.0;
  for (const auto& x : xs) {
    const auto grads = honest_gradients(problem, x);
    Vector mean = Vector::Zero(problem.d);
    for (const auto& g : grads) mean += g;
    mean /= static_cast<double>(grads.size());
    double spread = 0.0;
    for (const auto& g : grads) spread += (g - mean).squaredNorm();
    worst = std::max(worst, spread / static_cast<double>(grads.size()));
  }
  return worst;
}

double estimate_heterogeneity(const Problem& problem, const Vector& x0, int probes, std::uint64_t seed) {
  require(probes >= 1, "heterogeneity probe count must be positive");
  std::vector<Vector> xs;
  xs.reserve(static_cast<std::size_t>(probes));
  for (int k = 0; k < probes; ++k) {
    KeyedStream rng(derive_seed(seed, 0x7e7e), static_cast<std::uint32_t>(k), 0, 0);
    Vector x = x0;
    for (Index j = 0; j < x.size(); ++j) x[j] += rng.normal();
    xs.push_back(std::move(x));
  }
  xs.push_back(x0);
  return measure_heterogeneity(problem, xs);
}

// ---- quadratic families --------------------------------------------------

Problem make_quadratic_problem(const QuadraticFamily& family, int n, double delta) {
  const auto h = static_cast<int>(family.offsets.size());
  require(h >= 1 && h <= n, "quadratic: honest count must be in [1, n]");
  const Index d = family.curvature.size();
  Problem p;
  p.d = d;
  p.n = n;
  p.delta = delta;
  p.losses.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < h; ++i) {
    require_same_dim(family.offsets[static_cast<std::size_t>(i)], d, "quadratic offset");
    p.honest.push_back(i);
    p.losses[static_cast<std::size_t>(i)] =
        std::make_shared<QuadraticLoss>(family.curvature, family.offsets[static_cast<std::size_t>(i)]);
  }
  p.L = family.curvature.maxCoeff();
  p.mu = family.curvature.minCoeff();
  // Gradients differ by constant offsets, so heterogeneity is exact and x-independent.
  Vector bbar = Vector::Zero(d);
  for (const auto& b : family.offsets) bbar += b;
  bbar /= h;
  double spread = 0.0;
  for (const auto& b : family.offsets) spread += (b - bbar).squaredNorm();
  p.zeta_sq = spread / h;
  Optimum opt;
  opt.x = bbar.cwiseQuotient(family.curvature);
  opt.value = -0.5 * opt.x.dot(bbar);
  p.optimum = std::move(opt);
  p.validate();
  return p;
}

int lemma1_shifted_count(int n, double delta) {
  return static_cast<int>(std::floor(delta * n + 1e-9));
}

QuadraticFamily lemma1_family(bool second, int nodes, double delta, double zeta, double rho, double alpha_min) {
  require(nodes >= 1, "lemma1: need at least one node");
  require(delta > 0.0 && delta < 0.5, "lemma1: delta must lie in (0, 0.5)");
  require(zeta >= 0.0 && rho >= 0.0 && alpha_min >= 0.0, "lemma1: parameters must be nonnegative");
  QuadraticFamily fam;
  fam.kind = second ? QuadraticKind::lemma1_second : QuadraticKind::lemma1_first;
  fam.curvature = Vector::Ones(1);
  const int shifted = lemma1_shifted_count(nodes, delta);
  const double extra = second ? alpha_min * std::sqrt(rho) * std::sqrt(delta) * zeta : 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double b = (i < shifted ? zeta / std::sqrt(delta) : 0.0);
    // grad = x - b + extra, i.e. offset b - extra.
    fam.offsets.push_back(Vector::Constant(1, b - extra));
  }
  return fam;
}

QuadraticFamily lemma6_family(int nodes, double L, double eps) {
  require(nodes >= 1 && L > 0.0, "lemma6: need nodes >= 1 and L > 0");
  QuadraticFamily fam;
  fam.kind = QuadraticKind::lemma6;
  fam.curvature = Vector::Constant(1, L);
  for (int i = 0; i < nodes; ++i) fam.offsets.push_back(Vector::Constant(1, -2.0 * eps));
  return fam;
}

// ---- data-driven ---------------------------------------------------------

Problem make_logistic_problem(std::shared_ptr<const Matrix> features, const std::vector<int>& labels, int classes,
                              int n, double l2, const PartitionPlan& partition) {
  require(features != nullptr, "logistic: features missing");
  require(static_cast<Index>(labels.size()) == features->rows(), "logistic: one label per sample required");
  const auto h = static_cast<int>(partition.shards.size());
  require(h >= 1 && h <= n, "logistic: shard count must be in [1, n]");
  std::vector<int> owner(labels.size(), -1);
  for (int k = 0; k < h; ++k) {
    require(!partition.shards[static_cast<std::size_t>(k)].empty(), "logistic: empty shard for node " + std::to_string(k));
    for (Index r : partition.shards[static_cast<std::size_t>(k)]) {
      require(r >= 0 && r < features->rows(), "logistic: partition row out of range");
      require(owner[static_cast<std::size_t>(r)] < 0, "logistic: sample assigned twice");
      owner[static_cast<std::size_t>(r)] = k;
    }
  }
  require(std::none_of(owner.begin(), owner.end(), [](int o) { return o < 0; }),
          "logistic: every sample must be assigned to a node");

  Problem p;
  p.n = n;
  p.d = features->cols() * classes;
  p.delta = static_cast<double>(n - h) / n;
  p.losses.resize(static_cast<std::size_t>(n));
  p.poisoned.resize(static_cast<std::size_t>(n));
  double L = 0.0;
  auto shard_labels = [&](int k, bool flip) {
    std::vector<int> ys;
    for (Index r : partition.shards[static_cast<std::size_t>(k)]) {
      const int y = labels[static_cast<std::size_t>(r)];
      ys.push_back(flip ? classes - 1 - y : y);
    }
    return ys;
  };
  for (int k = 0; k < h; ++k) {
    auto loss = std::make_shared<LogisticLoss>(features, shard_labels(k, false),
                                               partition.shards[static_cast<std::size_t>(k)], classes, l2);
    L = std::max(L, loss->smoothness_bound());
    p.honest.push_back(k);
    p.losses[static_cast<std::size_t>(k)] = std::move(loss);
  }
  for (int b = h; b < n; ++b) {
    const int src = (b - h) % h;
    p.poisoned[static_cast<std::size_t>(b)] = std::make_shared<LogisticLoss>(
        features, shard_labels(src, true), partition.shards[static_cast<std::size_t>(src)], classes, l2);
  }
  p.L = L;
  p.mu = l2;
  p.zeta_sq = estimate_heterogeneity(p, Vector::Zero(p.d), 32, 0x5eed);
  p.validate();
  return p;
}

Problem make_wavy_problem(Index d, int n, int honest, double amplitude, double coupling) {
  require(honest >= 1 && honest <= n, "wavy: honest count must be in [1, n]");
  Problem p;
  p.d = d;
  p.n = n;
  p.delta = static_cast<double>(n - honest) / n;
  p.losses.resize(static_cast<std::size_t>(n));
  Vector offset = Vector::LinSpaced(d, 0.3, 0.6);
  auto loss = std::make_shared<WavyLoss>(d, amplitude, coupling, offset);
  for (int i = 0; i < honest; ++i) {
    p.honest.push_back(i);
    p.losses[static_cast<std::size_t>(i)] = loss;
  }
  p.L = loss->smoothness();
  p.mu = 0.0;
  p.zeta_sq = 0.0;
  p.validate();
  return p;
}

}  // namespace byzopt
