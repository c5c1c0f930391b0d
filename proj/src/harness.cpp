#include "byzopt/harness.hpp"

#include "byzopt/kernels.hpp"
#include "byzopt/oracles.hpp"
#include "byzopt/rng.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace byzopt::harness {

// ---- IDX / MNIST ------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_maybe_gz(const fs::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw InvalidArgument("cannot open '" + path.string() + "'");
  std::vector<unsigned char> out;
  std::vector<unsigned char> buf(1 << 16);
  for (;;) {
    const int got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (got < 0) {
      gzclose(f);
      throw RuntimeFailure("read error in '" + path.string() + "'");
    }
    if (got == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + got);
  }
  gzclose(f);
  return out;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  if (at + 4 > b.size()) throw InvalidArgument("truncated IDX header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

fs::path find_idx(const fs::path& dir, std::initializer_list<const char*> stems) {
  for (const char* stem : stems)
    for (const char* ext : {".gz", ""}) {
      fs::path p = dir / (std::string(stem) + ext);
      if (fs::exists(p)) return p;
    }
  throw InvalidArgument("missing '" + std::string(*stems.begin()) + "' under '" + dir.string() + "'");
}

}  // namespace

Matrix read_idx_images(const fs::path& path) {
  const auto bytes = read_maybe_gz(path);
  if (be32(bytes, 0) != 0x803) throw InvalidArgument("'" + path.string() + "' is not an IDX image file");
  const std::size_t count = be32(bytes, 4), rows = be32(bytes, 8), cols = be32(bytes, 12);
  const std::size_t pixels = rows * cols;
  if (bytes.size() < 16 + count * pixels) throw InvalidArgument("truncated IDX image data");
  Matrix out(static_cast<Index>(count), static_cast<Index>(pixels));
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < pixels; ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) = bytes[16 + i * pixels + j] / 255.0;
  return out;
}

std::vector<int> read_idx_labels(const fs::path& path) {
  const auto bytes = read_maybe_gz(path);
  if (be32(bytes, 0) != 0x801) throw InvalidArgument("'" + path.string() + "' is not an IDX label file");
  const std::size_t count = be32(bytes, 4);
  if (bytes.size() < 8 + count) throw InvalidArgument("truncated IDX label data");
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

Dataset load_mnist(const fs::path& dir, Index train_limit, Index test_limit) {
  Matrix xtr = read_idx_images(find_idx(dir, {"train-images-idx3-ubyte"}));
  std::vector<int> ytr = read_idx_labels(find_idx(dir, {"train-labels-idx1-ubyte"}));
  Matrix xte = read_idx_images(find_idx(dir, {"t10k-images-idx3-ubyte", "test-images-idx3-ubyte"}));
  std::vector<int> yte = read_idx_labels(find_idx(dir, {"t10k-labels-idx1-ubyte", "test-labels-idx1-ubyte"}));
  require(static_cast<Index>(ytr.size()) == xtr.rows() && static_cast<Index>(yte.size()) == xte.rows(),
          "mnist: image and label counts differ");
  auto take = [](Matrix& x, std::vector<int>& y, Index limit) {
    if (limit > 0 && limit < x.rows()) {
      x.conservativeResize(limit, Eigen::NoChange);
      y.resize(static_cast<std::size_t>(limit));
    }
  };
  take(xtr, ytr, train_limit);
  take(xte, yte, test_limit);
  Dataset ds;
  ds.train_x = std::make_shared<const Matrix>(std::move(xtr));
  ds.train_y = std::move(ytr);
  ds.test_x = std::make_shared<const Matrix>(std::move(xte));
  ds.test_y = std::move(yte);
  const int top = std::max(*std::max_element(ds.train_y.begin(), ds.train_y.end()),
                           *std::max_element(ds.test_y.begin(), ds.test_y.end()));
  ds.classes = top + 1;
  return ds;
}

PartitionPlan partition_heterogeneous(const std::vector<int>& labels, int honest_count, std::uint64_t seed) {
  require(honest_count >= 1, "partition: honest_count must be at least 1");
  const auto total = static_cast<Index>(labels.size());
  require(total >= honest_count, "partition: fewer samples than nodes");
  std::vector<Index> order(labels.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
  });
  PartitionPlan plan;
  plan.shards.resize(static_cast<std::size_t>(honest_count));
  for (int k = 0; k < honest_count; ++k) {
    const Index lo = total * k / honest_count, hi = total * (k + 1) / honest_count;
    auto& shard = plan.shards[static_cast<std::size_t>(k)];
    shard.assign(order.begin() + lo, order.begin() + hi);
    KeyedStream rng(derive_seed(seed, 0x5a4dULL), static_cast<std::uint32_t>(k), 0, 0);
    for (std::size_t i = shard.size(); i > 1; --i) std::swap(shard[i - 1], shard[rng.below(i)]);
  }
  return plan;
}

double classification_accuracy(const Vector& x, const Matrix& features, const std::vector<int>& labels, int classes) {
  require(x.size() == features.cols() * classes, "accuracy: parameter size mismatch");
  require(static_cast<Index>(labels.size()) == features.rows() && !labels.empty(), "accuracy: label count mismatch");
  const Eigen::Map<const Matrix> W(x.data(), features.cols(), classes);
  const Matrix scores = features * W;
  Index correct = 0;
  for (Index i = 0; i < scores.rows(); ++i) {
    Index best = 0;
    scores.row(i).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

// ---- config parsing ------------------------------------------------------------

namespace {

/// Reads fields out of one JSON object and rejects anything left unread.
class Fields {
 public:
  Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw InvalidArgument(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw InvalidArgument(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() || it->is_null() ? nullptr : &*it;
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw InvalidArgument(where_ + ": unknown field '" + it.key() + "'");
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string, std::less<>> seen_;
};

}  // namespace

ExperimentConfig parse_experiment(const json& doc) {
  ExperimentConfig cfg;
  Fields top(doc, "config");
  int schema = 0;
  top.get("schema", schema);
  if (schema != 1) throw InvalidArgument("config: schema must be 1");
  top.get("name", cfg.name);
  top.get("seed", cfg.seed);
  top.get("nodes", cfg.nodes);
  top.get("byzantine", cfg.byzantine);
  top.get("out_dir", cfg.out_dir);

  if (const json* p = top.sub("problem")) {
    Fields f(*p, "problem");
    auto& d = cfg.problem;
    f.get("kind", d.kind);
    f.get("data_dir", d.data_dir);
    f.get("train_limit", d.train_limit);
    f.get("test_limit", d.test_limit);
    f.get("l2", d.l2);
    f.get("partition_seed", d.partition_seed);
    f.get("dim", d.dim);
    f.get("kappa", d.kappa);
    f.get("zeta", d.zeta);
    f.get("amplitude", d.amplitude);
    f.get("coupling", d.coupling);
    f.get("family_delta", d.family_delta);
    f.get("family_rho", d.family_rho);
    f.get("sigma_sq", d.sigma_sq);
    f.finish();
    static const std::set<std::string> kinds{"logistic", "quadratic", "lemma1", "wavy"};
    if (!kinds.count(d.kind)) throw InvalidArgument("problem.kind: unknown kind '" + d.kind + "'");
  }

  if (const json* p = top.sub("optimizer")) {
    Fields f(*p, "optimizer");
    auto& o = cfg.optimizer;
    std::string method = std::string(to_string(o.method));
    f.get("method", method);
    o.method = parse_method(method);
    f.get("schedule", o.schedule);
    f.get("eta", o.eta);
    f.get("theta", o.theta);
    f.get("beta", o.beta);
    f.get("alpha", o.alpha);
    f.get("momentum", o.momentum);
    f.get("batch", o.batch);
    f.get("m0", o.m0);
    f.get("eps", o.eps);
    f.get("R", o.R);
    f.get("Delta", o.Delta);
    f.get("output", o.output);
    f.finish();
    static const std::set<std::string> schedules{"manual", "strongly_convex", "nonconvex", "restart"};
    if (!schedules.count(o.schedule)) throw InvalidArgument("optimizer.schedule: unknown '" + o.schedule + "'");
    if (o.output != "last" && o.output != "random") throw InvalidArgument("optimizer.output: 'last' or 'random'");
    if (o.schedule != "manual" && o.method != Method::byrd_nester)
      throw InvalidArgument("optimizer.schedule: only byrd_nester has derived schedules");
  }

  if (const json* p = top.sub("aggregator")) {
    Fields f(*p, "aggregator");
    auto& a = cfg.aggregator;
    std::string rule = std::string(to_string(a.rule));
    f.get("rule", rule);
    a.rule = parse_rule(rule);
    cfg.delta_given = f.has("delta");
    f.get("delta", a.delta);
    if (const json* w = f.sub("weiszfeld")) {
      Fields g(*w, "aggregator.weiszfeld");
      g.get("tolerance", a.weiszfeld.tolerance);
      g.get("max_iterations", a.weiszfeld.max_iterations);
      g.get("guard", a.weiszfeld.guard);
      g.finish();
    }
    if (const json* c = f.sub("clipping")) {
      Fields g(*c, "aggregator.clipping");
      std::string mode = a.clipping.mode == ClippingParams::Threshold::fixed ? "fixed" : "adaptive";
      g.get("mode", mode);
      if (mode == "fixed") {
        a.clipping.mode = ClippingParams::Threshold::fixed;
      } else if (mode == "adaptive") {
        a.clipping.mode = ClippingParams::Threshold::adaptive;
      } else {
        throw InvalidArgument("aggregator.clipping.mode: 'adaptive' or 'fixed'");
      }
      g.get("tau", a.clipping.tau);
      g.finish();
    }
    f.finish();
  }

  if (const json* p = top.sub("attack")) {
    Fields f(*p, "attack");
    auto& a = cfg.attack;
    std::string kind = std::string(to_string(a.kind));
    f.get("kind", kind);
    a.kind = parse_attack(kind);
    f.get("gaussian_sigma", a.gaussian_sigma);
    f.get("sign_flip_scale", a.sign_flip_scale);
    f.get("ipm_epsilon", a.ipm_epsilon);
    if (f.has("alie_z")) {
      double z = 0.0;
      f.get("alie_z", z);
      a.alie_z = z;
    } else {
      f.sub("alie_z");
    }
    f.finish();
  }

  if (const json* p = top.sub("budget")) {
    Fields f(*p, "budget");
    f.get("epochs", cfg.budget.epochs);
    f.get("rounds", cfg.budget.rounds);
    f.finish();
  }

  if (const json* p = top.sub("metrics")) {
    Fields f(*p, "metrics");
    f.get("eval_every", cfg.metrics.eval_every);
    f.get("tail_fraction", cfg.metrics.tail_fraction);
    f.finish();
  }

  if (const json* p = top.sub("caps")) {
    Fields f(*p, "caps");
    f.get("max_queries", cfg.caps.max_queries);
    f.finish();
  }
  top.finish();

  if (!cfg.delta_given) cfg.aggregator.delta = cfg.nodes > 0 ? static_cast<double>(cfg.byzantine) / cfg.nodes : 0.0;
  require(cfg.nodes >= 1, "config: nodes must be at least 1");
  require(cfg.byzantine >= 0, "config: byzantine must be non-negative");
  require(cfg.byzantine < cfg.nodes - cfg.byzantine, "config: byzantine count must be below the honest count");
  require(cfg.optimizer.batch >= 1 && cfg.optimizer.m0 >= 0, "optimizer: batch >= 1 and m0 >= 0 required");
  require(cfg.budget.epochs >= 0 && cfg.budget.rounds >= 0, "budget: counts must be non-negative");
  require(cfg.metrics.tail_fraction > 0.0 && cfg.metrics.tail_fraction <= 1.0, "metrics.tail_fraction must be in (0, 1]");
  require(cfg.metrics.eval_every >= 0, "metrics.eval_every must be non-negative");
  if (cfg.problem.kind == "logistic") {
    require(!cfg.problem.data_dir.empty(), "problem.data_dir is required for logistic problems");
    require(cfg.budget.epochs > 0 || cfg.budget.rounds > 0, "budget: epochs or rounds required");
  } else {
    require(cfg.budget.rounds > 0 || cfg.optimizer.schedule != "manual", "budget.rounds required for synthetic problems");
  }
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  const auto& p = cfg.problem;
  const auto& o = cfg.optimizer;
  const auto& a = cfg.aggregator;
  json problem = {{"kind", p.kind}, {"sigma_sq", p.sigma_sq}, {"partition_seed", p.partition_seed}};
  if (p.kind == "logistic") {
    problem.update({{"data_dir", p.data_dir}, {"train_limit", p.train_limit}, {"test_limit", p.test_limit}, {"l2", p.l2}});
  } else if (p.kind == "quadratic") {
    problem.update({{"dim", p.dim}, {"kappa", p.kappa}, {"zeta", p.zeta}});
  } else if (p.kind == "lemma1") {
    problem.update({{"zeta", p.zeta}, {"family_delta", p.family_delta}, {"family_rho", p.family_rho}});
  } else {
    problem.update({{"dim", p.dim}, {"amplitude", p.amplitude}, {"coupling", p.coupling}});
  }
  json attack = {{"kind", std::string(to_string(cfg.attack.kind))},
                 {"gaussian_sigma", cfg.attack.gaussian_sigma},
                 {"sign_flip_scale", cfg.attack.sign_flip_scale},
                 {"ipm_epsilon", cfg.attack.ipm_epsilon},
                 {"alie_z", cfg.attack.alie_z ? json(*cfg.attack.alie_z) : json(nullptr)}};
  json aggregator = {{"rule", std::string(to_string(a.rule))},
                     {"delta", a.delta},
                     {"weiszfeld",
                      {{"tolerance", a.weiszfeld.tolerance},
                       {"max_iterations", a.weiszfeld.max_iterations},
                       {"guard", a.weiszfeld.guard}}},
                     {"clipping",
                      {{"mode", a.clipping.mode == ClippingParams::Threshold::fixed ? "fixed" : "adaptive"},
                       {"tau", a.clipping.tau}}}};
  return {{"schema", 1},
          {"name", cfg.name},
          {"seed", cfg.seed},
          {"nodes", cfg.nodes},
          {"byzantine", cfg.byzantine},
          {"problem", problem},
          {"optimizer",
           {{"method", std::string(to_string(o.method))},
            {"schedule", o.schedule},
            {"eta", o.eta},
            {"theta", o.theta},
            {"beta", o.beta},
            {"alpha", o.alpha},
            {"momentum", o.momentum},
            {"batch", o.batch},
            {"m0", o.m0},
            {"eps", o.eps},
            {"R", o.R},
            {"Delta", o.Delta},
            {"output", o.output}}},
          {"aggregator", aggregator},
          {"attack", attack},
          {"budget", {{"epochs", cfg.budget.epochs}, {"rounds", cfg.budget.rounds}}},
          {"metrics", {{"eval_every", cfg.metrics.eval_every}, {"tail_fraction", cfg.metrics.tail_fraction}}},
          {"caps", {{"max_queries", cfg.caps.max_queries}}},
          {"out_dir", cfg.out_dir}};
}

GridConfig parse_grid(const json& doc) {
  Fields f(doc, "grid");
  int schema = 0;
  f.get("schema", schema);
  if (schema != 1) throw InvalidArgument("grid: schema must be 1");
  GridConfig g;
  const json* base = f.sub("base");
  if (base == nullptr) throw InvalidArgument("grid: 'base' experiment required");
  g.base = *base;
  if (const json* axes = f.sub("axes")) {
    if (!axes->is_object()) throw InvalidArgument("grid.axes: expected an object of path -> values");
    for (auto it = axes->begin(); it != axes->end(); ++it) {
      if (!it->is_array() || it->empty()) throw InvalidArgument("grid.axes." + it.key() + ": expected a non-empty list");
      g.axes.emplace_back(it.key(), *it);
    }
  }
  f.get("out_dir", g.out_dir);
  f.finish();
  return g;
}

// ---- metrics ----------------------------------------------------------------------

std::vector<double> RunMetrics::accuracies() const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (!std::isnan(r.accuracy)) out.push_back(r.accuracy);
  return out;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_line(const MetricsRow& r) {
  return std::to_string(r.round) + "," + std::to_string(r.oracle_queries) + "," + fmt(r.grad_norm) + "," + fmt(r.f_gap) +
         "," + fmt(r.agg_deviation) + "," + fmt(r.accuracy);
}

double parse_num(const std::string& s) {
  if (s == "nan" || s == "NaN" || s.empty()) return kNaN;
  return std::stod(s);
}

}  // namespace

void write_csv(const RunMetrics& metrics, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
  out << kCsvHeader << '\n';
  for (const auto& r : metrics.rows) out << csv_line(r) << '\n';
}

RunMetrics read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != kCsvHeader) throw InvalidArgument("'" + path.string() + "': unexpected metrics header");
  RunMetrics m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() != 6) throw InvalidArgument("'" + path.string() + "': malformed row");
    MetricsRow r;
    r.round = static_cast<std::uint32_t>(std::stoul(cells[0]));
    r.oracle_queries = std::stoll(cells[1]);
    r.grad_norm = parse_num(cells[2]);
    r.f_gap = parse_num(cells[3]);
    r.agg_deviation = parse_num(cells[4]);
    r.accuracy = parse_num(cells[5]);
    m.rows.push_back(r);
  }
  return m;
}

double estimate_byzantine_floor(const RunMetrics& metrics, double tail_fraction) {
  require(tail_fraction > 0.0 && tail_fraction <= 1.0, "floor: tail_fraction must be in (0, 1]");
  std::vector<double> g;
  for (const auto& r : metrics.rows)
    if (!std::isnan(r.grad_norm)) g.push_back(r.grad_norm);
  if (g.empty()) return kNaN;
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tail_fraction * g.size() - 1e-9)));
  return *std::min_element(g.end() - static_cast<std::ptrdiff_t>(std::min(keep, g.size())), g.end());
}

double worst_case_max_accuracy(const std::vector<std::vector<double>>& per_attack) {
  require(!per_attack.empty(), "worst_case_max_accuracy: no attacks");
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& series : per_attack) {
    require(!series.empty(), "worst_case_max_accuracy: empty series");
    worst = std::min(worst, *std::max_element(series.begin(), series.end()));
  }
  return worst;
}

// ---- problem construction -------------------------------------------------------

namespace {

std::string data_key(const ProblemDesc& d) {
  return d.data_dir + "|" + std::to_string(d.train_limit) + "|" + std::to_string(d.test_limit);
}

Problem build_quadratic(const ProblemDesc& d, int n, int h) {
  require(d.dim >= 1 && d.kappa >= 1.0 && d.zeta >= 0.0, "quadratic: dim >= 1, kappa >= 1, zeta >= 0 required");
  QuadraticFamily fam;
  fam.curvature = d.dim == 1 ? Vector(Vector::Constant(1, 1.0)) : Vector(Vector::LinSpaced(d.dim, 1.0 / d.kappa, 1.0));
  KeyedStream base_rng(derive_seed(d.partition_seed, 0xb0ULL), 0, 0, 0);
  Vector b(d.dim);
  for (Index j = 0; j < d.dim; ++j) b[j] = base_rng.normal();
  std::vector<Vector> dev(static_cast<std::size_t>(h), Vector::Zero(d.dim));
  Vector mean = Vector::Zero(d.dim);
  for (int k = 0; k < h; ++k) {
    KeyedStream rng(derive_seed(d.partition_seed, 0xb1ULL), static_cast<std::uint32_t>(k), 0, 0);
    for (Index j = 0; j < d.dim; ++j) dev[static_cast<std::size_t>(k)][j] = rng.normal();
    mean += dev[static_cast<std::size_t>(k)];
  }
  mean /= h;
  double spread = 0.0;
  for (auto& e : dev) {
    e -= mean;
    spread += e.squaredNorm();
  }
  spread /= h;
  const double scale = spread > 0.0 ? d.zeta / std::sqrt(spread) : 0.0;
  for (auto& e : dev) fam.offsets.push_back(b + scale * e);
  return make_quadratic_problem(fam, n, static_cast<double>(n - h) / n);
}

}  // namespace

std::shared_ptr<const Dataset> ProblemCache::dataset(const ProblemDesc& desc) {
  const std::string key = data_key(desc);
  std::lock_guard lock(mu_);
  auto it = data_.find(key);
  if (it != data_.end()) return it->second;
  auto ds = std::make_shared<const Dataset>(load_mnist(desc.data_dir, desc.train_limit, desc.test_limit));
  data_.emplace(key, ds);
  return ds;
}

std::shared_ptr<const Problem> ProblemCache::problem(const ExperimentConfig& cfg) {
  const json key_doc = {{"problem", to_json(cfg)["problem"]}, {"nodes", cfg.nodes}, {"byzantine", cfg.byzantine}};
  const std::string key = key_doc.dump();
  {
    std::lock_guard lock(mu_);
    auto it = problems_.find(key);
    if (it != problems_.end()) return it->second;
  }
  const ProblemDesc& d = cfg.problem;
  const int n = cfg.nodes, h = cfg.nodes - cfg.byzantine;
  std::shared_ptr<const Problem> built;
  if (d.kind == "logistic") {
    auto ds = dataset(d);
    const PartitionPlan plan = partition_heterogeneous(ds->train_y, h, d.partition_seed);
    built = std::make_shared<const Problem>(make_logistic_problem(ds->train_x, ds->train_y, ds->classes, n, d.l2, plan));
  } else if (d.kind == "quadratic") {
    built = std::make_shared<const Problem>(build_quadratic(d, n, h));
  } else if (d.kind == "lemma1") {
    const QuadraticFamily fam = lemma1_family(false, h, d.family_delta, d.zeta, d.family_rho, 1.0);
    built = std::make_shared<const Problem>(make_quadratic_problem(fam, n, static_cast<double>(n - h) / n));
  } else {
    built = std::make_shared<const Problem>(make_wavy_problem(d.dim, n, h, d.amplitude, d.coupling));
  }
  std::lock_guard lock(mu_);
  return problems_.emplace(key, built).first->second;
}

// ---- single run -------------------------------------------------------------------

namespace {

struct Resolved {
  MethodConfig method;
  std::optional<RestartSchedule> restart;
  ClampRecord clamp;
  int rounds_per_epoch = 0;
  int eval_every = 1;
  double rho_delta = 0.0;
  double R = 0.0;
  double Delta = 0.0;
};

Resolved resolve(const ExperimentConfig& cfg, const Problem& pb, const Vector& x0, double sigma_sq) {
  const auto& o = cfg.optimizer;
  Resolved r;
  r.rho_delta = robustness_coefficient(cfg.aggregator.rule, cfg.aggregator.delta, pb.honest_count());
  r.R = o.R > 0.0 ? o.R : (pb.optimum ? (x0 - pb.optimum->x).norm() : 1.0);
  r.Delta = o.Delta > 0.0 ? o.Delta : (pb.optimum ? full_value(pb, x0) - pb.optimum->value : 1.0);

  int rounds = cfg.budget.rounds;
  if (cfg.problem.kind == "logistic") {
    Index shard = std::numeric_limits<Index>::max();
    for (int id : pb.honest) shard = std::min(shard, pb.loss(id).sample_count());
    r.rounds_per_epoch = static_cast<int>((shard + o.batch - 1) / o.batch);
    if (cfg.budget.epochs > 0) rounds = cfg.budget.epochs * r.rounds_per_epoch;
  }

  r.method.method = o.method;
  r.method.momentum = o.momentum;
  auto& p = r.method.params;
  if (o.schedule == "manual") {
    p.eta = o.eta;
    p.theta = o.theta;
    p.beta = o.beta;
    p.alpha = o.alpha;
    p.m = o.batch;
    p.m0 = o.m0 > 0 ? o.m0 : o.batch;
    p.T = rounds;
  } else if (o.schedule == "strongly_convex") {
    require(pb.mu > 0.0, "strongly_convex schedule needs mu > 0");
    const Schedule s = strongly_convex_defaults(pb.L, pb.mu, sigma_sq, pb.delta, pb.n, r.rho_delta, o.eps, r.R, cfg.caps);
    p = s.params;
    r.clamp = s.clamp;
    if (rounds > 0) p.T = rounds;
  } else if (o.schedule == "nonconvex") {
    require(rounds > 0, "nonconvex schedule needs budget.rounds");
    const Schedule s = nonconvex_defaults(pb.L, pb.delta, pb.n, r.rho_delta, sigma_sq, rounds, r.Delta, o.batch, cfg.caps);
    p = s.params;
    r.clamp = s.clamp;
  } else {
    require(pb.mu > 0.0, "restart schedule needs mu > 0");
    r.restart = make_restart_schedule(pb.L, pb.mu, sigma_sq, pb.delta, pb.n, r.rho_delta, o.eps, r.R, cfg.caps);
    p = r.restart->base;
    p.T = std::accumulate(r.restart->T_list.begin(), r.restart->T_list.end(), 0);
  }
  require(p.T >= 1, "resolved budget has no rounds");
  if (cfg.metrics.eval_every > 0) {
    r.eval_every = cfg.metrics.eval_every;
  } else {
    r.eval_every = r.rounds_per_epoch > 0 ? r.rounds_per_epoch : 1;
  }
  return r;
}

json params_json(const ByrdNesterParams& p) {
  return {{"eta", p.eta}, {"theta", p.theta}, {"beta", p.beta}, {"alpha", p.alpha},
          {"m", p.m},     {"m0", p.m0},       {"T", p.T},       {"q", p.q}};
}

}  // namespace

CellResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, ProblemCache* cache) {
  const auto start = std::chrono::steady_clock::now();
  ProblemCache local;
  ProblemCache& pc = cache != nullptr ? *cache : local;
  CellResult res;
  res.id = cfg.name;

  const auto problem = pc.problem(cfg);
  const Problem& pb = *problem;
  std::shared_ptr<const Dataset> data;
  if (cfg.problem.kind == "logistic") data = pc.dataset(cfg.problem);

  OracleSpec ospec;
  ospec.seed = derive_seed(cfg.seed, 0x0a11ceULL);
  if (cfg.problem.kind == "logistic") {
    ospec.noise_kind = NoiseKind::sample_subsampling;
  } else {
    ospec.noise_kind = NoiseKind::gaussian_iid;
    ospec.sigma_sq = cfg.problem.sigma_sq;
  }
  const Oracle oracle(ospec);
  const RuleAggregator aggregator(cfg.aggregator);

  Environment env;
  env.problem = &pb;
  env.oracle = &oracle;
  env.aggregator = &aggregator;
  env.attack = cfg.attack;
  env.seed = derive_seed(cfg.seed, 0xe7ULL);

  const Vector x0 = Vector::Zero(pb.d);
  const Resolved rs = resolve(cfg, pb, x0, ospec.sigma_sq);

  std::ofstream csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    csv.open(out_dir / "metrics.csv");
    if (!csv) throw RuntimeFailure("cannot write metrics under '" + out_dir.string() + "'");
    csv << kCsvHeader << '\n' << std::flush;
  }

  std::uint32_t global_round = 0;
  bool first_call = true;
  auto observe = [&](const RoundInfo& info) {
    if (info.t == 0 && !first_call) return;  // restart calls: the start point was already logged
    if (info.t == 0) first_call = false;
    MetricsRow row;
    row.round = global_round++;
    row.oracle_queries = info.queries;
    row.agg_deviation = row.round == 0 ? kNaN : info.state->agg_deviation;
    const bool last = static_cast<int>(row.round) == rs.method.params.T;
    if (row.round % static_cast<std::uint32_t>(rs.eval_every) == 0 || last) {
      const Vector& x = info.state->x;
      row.grad_norm = full_gradient(pb, x).norm();
      if (pb.optimum) row.f_gap = full_value(pb, x) - pb.optimum->value;
      if (data) row.accuracy = classification_accuracy(x, *data->test_x, data->test_y, data->classes);
    }
    if (!res.metrics.rows.empty() && row.oracle_queries < res.metrics.rows.back().oracle_queries)
      throw RuntimeFailure("oracle query count decreased");
    res.metrics.rows.push_back(row);
    if (csv.is_open()) csv << csv_line(row) << '\n' << std::flush;
  };

  const OutputMode mode = cfg.optimizer.output == "random" ? OutputMode::nonconvex : OutputMode::strongly_convex;
  Vector output;
  std::int64_t queries = 0;
  json restart_info = nullptr;
  std::uint32_t output_round = 0;
  if (rs.restart) {
    // Restart calls restart their own round counter; accumulate queries across calls.
    std::int64_t base = 0, last = 0;
    auto wrap = [&](const RoundInfo& info) {
      if (info.t == 0 && !first_call) base = last;
      RoundInfo shifted = info;
      shifted.queries = base + info.queries;
      last = shifted.queries;
      observe(shifted);
    };
    const RestartResult rr = run_byrd_renester(env, x0, *rs.restart, wrap);
    output = rr.output;
    queries = rr.queries;
    output_round = global_round - 1;
    restart_info = {{"P", rs.restart->P},
                    {"T", rs.restart->T_list},
                    {"m", rs.restart->m_list},
                    {"eps1_sq", rs.restart->eps1_sq},
                    {"per_call_queries", rr.per_call_queries}};
  } else {
    RunOptions opts;
    opts.output = mode;
    opts.observer = observe;
    const RunResult rr = run_method(rs.method, env, x0, opts);
    output = rr.output;
    queries = rr.queries;
    output_round = rr.output_round;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const auto accs = res.metrics.accuracies();
  json terminal = {
      {"rounds", res.metrics.rows.empty() ? 0 : res.metrics.rows.back().round},
      {"oracle_queries", queries},
      {"output_round", output_round},
      {"output_grad_norm", full_gradient(pb, output).norm()},
      {"floor_estimate", estimate_byzantine_floor(res.metrics, cfg.metrics.tail_fraction)},
      {"wall_seconds", wall},
  };
  if (pb.optimum) terminal["output_f_gap"] = full_value(pb, output) - pb.optimum->value;
  if (!accs.empty()) {
    terminal["max_accuracy"] = *std::max_element(accs.begin(), accs.end());
    terminal["final_accuracy"] = accs.back();
    terminal["output_accuracy"] = classification_accuracy(output, *data->test_x, data->test_y, data->classes);
  }
  for (auto& [k, v] : terminal.items())
    if (v.is_number_float() && std::isnan(v.get<double>())) v = nullptr;

  json resolved = {{"method", std::string(to_string(rs.method.method))},
                   {"params", params_json(rs.method.params)},
                   {"momentum", rs.method.momentum},
                   {"rho_delta", rs.rho_delta},
                   {"R", rs.R},
                   {"Delta", rs.Delta},
                   {"rounds_per_epoch", rs.rounds_per_epoch},
                   {"eval_every", rs.eval_every},
                   {"clamp",
                    {{"clamped", rs.clamp.clamped},
                     {"raw_m", rs.clamp.raw_m},
                     {"raw_m0", rs.clamp.raw_m0},
                     {"raw_T", rs.clamp.raw_T},
                     {"note", rs.clamp.note}}},
                   {"restart", restart_info},
                   {"initialization", "zeros"},
                   {"step_schedule", "constant"},
                   {"oracle", cfg.problem.kind == "logistic" ? "sample_subsampling" : "gaussian_iid"},
                   {"L", pb.L},
                   {"mu", pb.mu},
                   {"zeta_sq", pb.zeta_sq}};
  if (cfg.attack.kind == AttackKind::alie)
    resolved["alie_z"] = cfg.attack.alie_z ? *cfg.attack.alie_z : alie_default_z(pb.n, pb.byzantine_count());

  res.summary = {{"id", res.id}, {"status", "ok"}, {"config", to_json(cfg)}, {"resolved", resolved}, {"terminal", terminal}};
  if (!out_dir.empty()) {
    std::ofstream(out_dir / "summary.json") << res.summary.dump(2) << '\n';
  }
  return res;
}

// ---- grids ------------------------------------------------------------------------

namespace {

void set_path(json& doc, const std::string& path, const json& value) {
  json* cur = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw InvalidArgument("grid: malformed axis path '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::string label_of(const json& v) {
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_') c = '_';
  return s;
}

}  // namespace

std::vector<std::pair<std::string, json>> expand_grid(const GridConfig& grid) {
  std::vector<std::pair<std::string, json>> cells{{"", grid.base}};
  for (const auto& [path, values] : grid.axes) {
    std::string leaf = path.substr(path.rfind('.') == std::string::npos ? 0 : path.rfind('.') + 1);
    std::vector<std::pair<std::string, json>> next;
    for (const auto& [id, doc] : cells) {
      for (const auto& v : values) {
        json d = doc;
        set_path(d, path, v);
        next.emplace_back((id.empty() ? "" : id + "__") + leaf + "=" + label_of(v), std::move(d));
      }
    }
    cells = std::move(next);
  }
  if (cells.size() == 1 && cells[0].first.empty()) cells[0].first = "base";
  return cells;
}

std::vector<CellResult> run_grid(const GridConfig& grid, const fs::path& out_dir, bool resume) {
  const auto cells = expand_grid(grid);
  std::vector<CellResult> results(cells.size());
  ProblemCache cache;
  std::atomic<std::size_t> next{0};
  // Cells run concurrently; node-level kernels stay serial inside each worker.
  const int workers = std::max(1, std::min<int>(kernels::max_threads(), static_cast<int>(cells.size())));

  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const auto& [id, doc] = cells[i];
      CellResult& r = results[i];
      r.id = id;
      const fs::path dir = out_dir.empty() ? fs::path{} : out_dir / id;
      try {
        ExperimentConfig cfg = parse_experiment(doc);
        cfg.name = id;
        cfg.seed = derive_seed(cfg.seed, fnv1a(id));
        const json expect = to_json(cfg);
        if (resume && !dir.empty() && fs::exists(dir / "summary.json") && fs::exists(dir / "metrics.csv")) {
          std::ifstream in(dir / "summary.json");
          json prior = json::parse(in, nullptr, false);
          if (!prior.is_discarded() && prior.value("status", "") == "ok" && prior["config"] == expect) {
            r.summary = prior;
            r.metrics = read_csv(dir / "metrics.csv");
            r.status = "skipped";
            continue;
          }
        }
        CellResult done = run_experiment(cfg, dir, &cache);
        r.metrics = std::move(done.metrics);
        r.summary = std::move(done.summary);
        r.status = "ok";
      } catch (const std::exception& e) {
        r.status = "failed";
        r.error = e.what();
        r.summary = {{"id", id}, {"status", "failed"}, {"error", r.error}, {"config", doc}};
        if (!dir.empty()) {
          std::error_code ec;
          fs::create_directories(dir, ec);
          std::ofstream(dir / "summary.json") << r.summary.dump(2) << '\n';
        }
      }
    }
  };

  const bool outer_parallel = workers > 1;
  const bool saved = kernels::parallel_enabled();
  if (outer_parallel) kernels::set_parallel(false);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (outer_parallel) kernels::set_parallel(saved);

  if (!out_dir.empty()) {
    json index = json::array();
    for (const auto& r : results) {
      json entry = {{"id", r.id}, {"status", r.status}};
      if (!r.error.empty()) entry["error"] = r.error;
      if (r.summary.contains("terminal")) entry["terminal"] = r.summary["terminal"];
      index.push_back(entry);
    }
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "grid.json") << index.dump(2) << '\n';
  }
  return results;
}

// ---- aggregator verification ------------------------------------------------------

std::vector<RuleTally> verify_aggregators(const std::vector<Rule>& rules, int trials, std::uint64_t seed, int n,
                                          int honest, double delta) {
  require(trials >= 1 && honest >= 1 && honest <= n, "verify_aggregators: invalid sizes");
  const int b = n - honest;
  const auto attacks = all_attacks();
  std::vector<RuleTally> out;
  for (Rule rule : rules) {
    RuleTally tally;
    tally.rule = rule;
    AggregatorConfig cfg;
    cfg.rule = rule;
    cfg.delta = delta;
    std::vector<char> held(static_cast<std::size_t>(trials), 0), pre_bad(static_cast<std::size_t>(trials), 0);
    std::vector<double> ratio(static_cast<std::size_t>(trials), 0.0);
    kernels::for_each_index(trials, [&](Index trial) {
      const auto k = static_cast<std::uint32_t>(trial);
      KeyedStream rng(derive_seed(seed, 0x7e57ULL), k, 0, 0);
      const auto d = static_cast<Index>(1 + rng.below(16));
      const double centre = std::exp(3.0 * (2.0 * rng.uniform() - 1.0));
      const double spread = std::exp(3.0 * (2.0 * rng.uniform() - 1.0));
      Vector mean(d);
      for (Index j = 0; j < d; ++j) mean[j] = centre * rng.normal();
      std::vector<Vector> h(static_cast<std::size_t>(honest), Vector(d));
      for (auto& v : h)
        for (Index j = 0; j < d; ++j) v[j] = mean[j] + spread * rng.normal();
      AttackConfig ac;
      ac.kind = attacks[static_cast<std::size_t>(trial) % attacks.size()];
      AttackContext ctx;
      ctx.round = k;
      ctx.seed = derive_seed(seed, 0xa7ULL);
      ctx.byzantine = b;
      const std::vector<Vector> byz = craft(ac, h, ctx);
      const RobustnessCheck chk = check_robustness(cfg, h, byz);
      held[static_cast<std::size_t>(trial)] = chk.holds;
      if (chk.cc_precondition && !*chk.cc_precondition) pre_bad[static_cast<std::size_t>(trial)] = 1;
      ratio[static_cast<std::size_t>(trial)] = chk.rhs > 0.0 ? chk.lhs / chk.rhs
                                              : (chk.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    });
    tally.trials = trials;
    tally.held = std::count(held.begin(), held.end(), 1);
    tally.cc_precondition_violations = std::count(pre_bad.begin(), pre_bad.end(), 1);
    tally.worst_ratio = *std::max_element(ratio.begin(), ratio.end());
    out.push_back(tally);
  }
  return out;
}

}  // namespace byzopt::harness
