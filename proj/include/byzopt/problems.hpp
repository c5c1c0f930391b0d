#pragma once

// Distributed objectives: per-node differentiable losses together with the
// smoothness / strong-convexity / heterogeneity constants that the
// optimizers and the lower-bound gadgets consume.

#include "byzopt/types.hpp"

#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace byzopt {

/// One node's loss f_i. Implementations are immutable after construction.
class NodeLoss {
 public:
  virtual ~NodeLoss() = default;

  virtual Index dim() const = 0;
  virtual double value(const Vector& x) const = 0;
  virtual Vector gradient(const Vector& x) const = 0;

  /// Number of data samples backing the loss (0 for analytic losses).
  virtual Index sample_count() const { return 0; }
  /// Average gradient over the listed samples (with repetition).
  virtual Vector batch_gradient(const Vector& x, std::span<const Index> samples) const;
  /// Bernoulli-masked gradient of the chain construction; only chain-backed losses support it.
  virtual Vector masked_gradient(const Vector& x, bool success, double p) const;
};

/// f(x) = 1/2 sum_j a_j x_j^2 - b^T x (diagonal curvature a > 0).
class QuadraticLoss final : public NodeLoss {
 public:
  QuadraticLoss(Vector curvature, Vector offset);

  Index dim() const override { return curvature_.size(); }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;

  const Vector& curvature() const { return curvature_; }
  const Vector& offset() const { return offset_; }
  Vector minimizer() const { return offset_.cwiseQuotient(curvature_); }

 private:
  Vector curvature_;
  Vector offset_;
};

/// Multi-class logistic regression (softmax cross-entropy) on one shard,
/// plus (l2/2)||x||^2. Parameters are a features x classes matrix stored
/// column-major in x; there is no bias term.
class LogisticLoss final : public NodeLoss {
 public:
  LogisticLoss(std::shared_ptr<const Matrix> features, std::vector<int> labels, std::vector<Index> rows,
               int classes, double l2);

  Index dim() const override { return features_->cols() * classes_; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  Index sample_count() const override { return static_cast<Index>(rows_.size()); }
  Vector batch_gradient(const Vector& x, std::span<const Index> samples) const override;

  /// Upper bound on the smoothness constant of this shard's loss.
  double smoothness_bound() const;
  int classes() const { return classes_; }

 private:
  Vector gradient_over(const Vector& x, std::span<const Index> local) const;

  std::shared_ptr<const Matrix> features_;  // samples x features, shared across shards
  std::vector<int> labels_;                 // per shard row
  std::vector<Index> rows_;                 // global row ids of this shard
  int classes_;
  double l2_;
};

/// Smooth non-convex toy: sum_j (x_j^2/2 + a cos x_j) + (c/2) sum_j (x_{j+1} - x_j)^2 - b^T x.
/// Second derivative is bounded, so it is globally L-smooth with L = 1 + a + 4c.
class WavyLoss final : public NodeLoss {
 public:
  WavyLoss(Index d, double amplitude, double coupling, Vector offset);

  Index dim() const override { return offset_.size(); }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  double smoothness() const { return 1.0 + amplitude_ + 4.0 * coupling_; }

 private:
  double amplitude_;
  double coupling_;
  Vector offset_;
};

struct Optimum {
  Vector x;
  double value = 0.0;
};

/// Assignment of data samples to honest nodes; shards[k] belongs to honest node k.
struct PartitionPlan {
  std::vector<std::vector<Index>> shards;
};

/// A distributed objective over n nodes, of which `honest` carry losses.
struct Problem {
  Index d = 0;
  int n = 0;
  double delta = 0.0;
  std::vector<int> honest;                                   // sorted node ids
  std::vector<std::shared_ptr<const NodeLoss>> losses;       // size n, null at Byzantine ids
  std::vector<std::shared_ptr<const NodeLoss>> poisoned;     // empty or size n; label-flip losses at Byzantine ids
  double L = 0.0;
  double mu = 0.0;
  double zeta_sq = 0.0;
  std::optional<Optimum> optimum;

  int honest_count() const { return static_cast<int>(honest.size()); }
  int byzantine_count() const { return n - honest_count(); }
  bool is_honest(int node) const;
  std::vector<int> byzantine() const;
  const NodeLoss& loss(int node) const;

  /// Checks the structural invariants (honest majority, mu <= L, sizes).
  void validate() const;
};

/// Exact gradient of honest node `node`.
Vector gradient(const Problem& problem, int node, const Vector& x);
/// Honest-average gradient (1/|H|) sum_{i in H} grad f_i(x).
Vector full_gradient(const Problem& problem, const Vector& x);
/// Honest-average objective value.
double full_value(const Problem& problem, const Vector& x);
/// Per-honest-node gradients, in honest-set order.
std::vector<Vector> honest_gradients(const Problem& problem, const Vector& x);
/// max over xs of (1/|H|) sum_i ||grad f_i(x) - grad f(x)||^2.
double measure_heterogeneity(const Problem& problem, std::span<const Vector> xs);
/// Empirical heterogeneity over `probes` Gaussian points around x0.
double estimate_heterogeneity(const Problem& problem, const Vector& x0, int probes, std::uint64_t seed);

// ---- quadratic families -------------------------------------------------

enum class QuadraticKind { homogeneous, lemma1_first, lemma1_second, lemma6 };

struct QuadraticFamily {
  QuadraticKind kind = QuadraticKind::homogeneous;
  Vector curvature;              // diagonal, shared by all nodes
  std::vector<Vector> offsets;   // b_i per honest node
};

/// Quadratic problem with honest nodes 0..h-1 and Byzantine nodes h..n-1.
/// Constants L, mu, zeta_sq and the optimum are computed exactly.
Problem make_quadratic_problem(const QuadraticFamily& family, int n, double delta);

/// Number of nodes carrying the shifted gradient in a Lemma-1 instance: floor(delta * n).
int lemma1_shifted_count(int n, double delta);

/// One-dimensional two-problem family: first has gradients x - delta^{-1/2} zeta on the
/// first floor(delta n) nodes and x elsewhere; second adds alpha_min rho^{1/2} delta^{1/2} zeta.
QuadraticFamily lemma1_family(bool second, int nodes, double delta, double zeta, double rho, double alpha_min);

/// One-dimensional f_i(x) = (L/2) x^2 + 2 eps x on every node.
QuadraticFamily lemma6_family(int nodes, double L, double eps);

// ---- data-driven problems -----------------------------------------------

/// Logistic regression over shared features; shard k of `partition` goes to honest node k,
/// Byzantine nodes (ids >= shards) get label-flipped copies of honest shards.
Problem make_logistic_problem(std::shared_ptr<const Matrix> features, const std::vector<int>& labels,
                              int classes, int n, double l2, const PartitionPlan& partition);

/// Homogeneous non-convex toy problem over n nodes (h honest).
Problem make_wavy_problem(Index d, int n, int honest, double amplitude, double coupling);

}  // namespace byzopt
