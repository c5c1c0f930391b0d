#pragma once

// Executable lower-bound constructions: the two-problem indistinguishability
// gadget, the stuck zero aggregator with its batch-size threshold, and the
// chain function with its Bernoulli progress oracle.

#include "byzopt/aggregators.hpp"
#include "byzopt/optimizers.hpp"
#include "byzopt/problems.hpp"
#include "byzopt/rng.hpp"

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

namespace byzopt::lowerbound {

// ---- chain function -----------------------------------------------------------

double psi(double a);
double psi_prime(double a);
/// sqrt(e) * integral_{-inf}^a exp(-t^2/2) dt, via std::erf.
double phi(double a);
double phi_prime(double a);

struct ChainInstance {
  Index d = 1;
  double d_formula = 1.0;  // floor(L Delta / (7296 eps^2)) before the cap
  double nu = 1.0;         // (152/L) * 2 eps
  double p = 1.0;          // 1/p = sigma^2 / (2116 eps^2) + 1
  double L = 1.0;
  double Delta = 1.0;
  double eps = 1.0;
  double sigma_sq = 0.0;
};

/// Chain length from the formula, capped at `d_cap` (at least 1).
ChainInstance make_chain_instance(double L, double Delta, double eps, double sigma_sq, Index d_cap = 64);
/// Same constants with an explicit chain length.
ChainInstance make_chain_instance_with_dim(Index d, double L, double eps, double sigma_sq);

/// h(u) = -Psi(1) Phi(u_1) + sum_{j>=2} [Psi(-u_{j-1}) Phi(-u_j) - Psi(u_{j-1}) Phi(u_j)].
std::pair<double, Vector> chain_h(const Vector& u);

/// f(x) = (L nu^2 / 152) h(x / nu) and its gradient.
std::pair<double, Vector> chain_value_and_gradient(const ChainInstance& inst, const Vector& x);

/// Largest 1-based j with |x_j / nu| > 1/2, or 0.
Index prog_half(const ChainInstance& inst, const Vector& x);

/// Gradient with coordinates beyond prog scaled by xi / p (xi = success).
Vector chain_masked_gradient(const ChainInstance& inst, const Vector& x, bool success);

/// One oracle draw with xi ~ Bernoulli(p) taken from `rng`.
Vector chain_stochastic_gradient(const ChainInstance& inst, const Vector& x, KeyedStream& rng);

class ChainLoss final : public NodeLoss {
 public:
  explicit ChainLoss(ChainInstance inst) : inst_(inst) {}
  Index dim() const override { return inst_.d; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  Vector masked_gradient(const Vector& x, bool success, double p) const override;
  const ChainInstance& instance() const { return inst_; }

 private:
  ChainInstance inst_;
};

/// n identical honest chain nodes (no Byzantine nodes); pair with a bernoulli_chain oracle.
Problem make_chain_problem(const ChainInstance& inst, int n, double delta);

/// Running tally of deviation-bound certificates evaluated by a gadget.
struct CertificateLog {
  std::int64_t calls = 0;
  std::int64_t held = 0;
  double worst_ratio = 0.0;  // max lhs / rhs seen (inf when rhs = 0 < lhs)
};

/// Mean of the inputs with the frontier coordinate (the last coordinate any
/// input touches) set to zero whenever that output still satisfies the
/// deviation bound with the given rho*delta; otherwise the plain mean.
class FrontierZeroingAggregator final : public Aggregator {
 public:
  explicit FrontierZeroingAggregator(double rho_delta) : rho_delta_(rho_delta) {}
  Vector aggregate(std::span<const Vector> inputs, const AggregationContext& ctx) const override;
  std::string name() const override { return "frontier_zeroing"; }
  CertificateLog log() const;
  std::int64_t zeroed() const { return zeroed_; }

 private:
  double rho_delta_;
  mutable std::mutex mu_;
  mutable CertificateLog log_;
  mutable std::atomic<std::int64_t> zeroed_{0};
};

// ---- stuck aggregator ----------------------------------------------------------

/// Always returns the zero vector; records the in-round certificate with rho*delta.
class ZeroAggregator final : public Aggregator {
 public:
  explicit ZeroAggregator(double rho_delta = 0.0) : rho_delta_(rho_delta) {}
  Vector aggregate(std::span<const Vector> inputs, const AggregationContext& ctx) const override;
  std::string name() const override { return "zero"; }
  CertificateLog log() const;

 private:
  double rho_delta_;
  mutable std::mutex mu_;
  mutable CertificateLog log_;
};

/// Smallest integer batch size exceeding rho_delta (n-1) sigma^2 / (4 eps^2 n) - sigma^2 / (4 eps^2 n).
int lemma6_escape_threshold(double L, double eps, double sigma_sq, int n, double delta, double rho_delta);

struct Lemma6Sides {
  int m = 1;
  double lhs = 0.0;  // E[wbar^2]
  double rhs = 0.0;  // E[(rho delta / n) sum_i (w_i - wbar)^2]
};

/// Monte-Carlo estimates of both sides at x = 0 for batch sizes 1..max_m with
/// uniform weights 1/m; xi ~ N(eps, sigma^2/4) drawn per node and sample,
/// shared across batch sizes (nested batches).
std::vector<Lemma6Sides> lemma6_monte_carlo(double eps, double sigma_sq, int n, double rho_delta, int max_m,
                                            int draws, std::uint64_t seed);

/// First m at which the Monte-Carlo lhs exceeds rhs, or nullopt.
std::optional<int> lemma6_empirical_flip(const std::vector<Lemma6Sides>& sides);

// ---- indistinguishable pair ----------------------------------------------------

struct Lemma1Params {
  int n = 8;
  double delta = 0.25;
  double zeta = 1.0;
  double rho = 4.0;
  double alpha_min = 1.0;
  double grid = 0x1.0p-32;  // output lattice that absorbs rounding differences between the two problems
};

/// Outputs wbar_1 + (a/2) alpha_min rho^{1/2} delta^{1/2} zeta on the first problem's inputs
/// and wbar_2 - (same) on the second's, snapped to a fixed lattice. The stream weight a is
/// recovered from the honest spread, which equals a^2 times the spread of the raw gradients.
class Lemma1Aggregator final : public Aggregator {
 public:
  Lemma1Aggregator(Lemma1Params params, bool second);
  Vector aggregate(std::span<const Vector> inputs, const AggregationContext& ctx) const override;
  std::string name() const override { return second_ ? "lemma1_second" : "lemma1_first"; }
  CertificateLog log() const;
  double shift() const { return shift_; }

 private:
  Lemma1Params params_;
  bool second_;
  double shift_;        // alpha_min rho^{1/2} delta^{1/2} zeta
  double unit_spread_;  // spread of the gradients (weight 1)
  mutable std::mutex mu_;
  mutable CertificateLog log_;
};

struct Lemma1Gadget {
  Lemma1Params params;
  Problem first;
  Problem second;
  std::shared_ptr<Lemma1Aggregator> agg_first;
  std::shared_ptr<Lemma1Aggregator> agg_second;

  double bound() const;  // (alpha_min / 2) rho^{1/2} delta^{1/2} zeta
};

Lemma1Gadget make_lemma1_gadget(const Lemma1Params& params);

/// Produces the iterate sequence x^0..x^T of some method in the given environment.
using TrajectoryRunner = std::function<std::vector<Vector>(const Environment&)>;
TrajectoryRunner method_runner(const MethodConfig& cfg);

struct Lemma1Report {
  bool identical = false;
  std::optional<std::size_t> first_divergent_round;
  double best_grad_norm_p1 = 0.0;  // min over t of |f_1'(x^t)|
  double best_grad_norm_p2 = 0.0;
  double final_floor = 0.0;        // max_j |f_j'(x^T)|
  double best_floor = 0.0;         // min over t of max_j |f_j'(x^t)|
  double bound = 0.0;
  bool floor_holds = false;
  CertificateLog certificates_first;
  CertificateLog certificates_second;
};

/// Runs the method on both problems with identical seeds and compares trajectories.
/// With `swap` the second problem is run first (the report keeps problem labels).
Lemma1Report lemma1_floor_check(const Lemma1Params& params, const TrajectoryRunner& runner, std::uint64_t seed,
                                bool swap = false);

}  // namespace byzopt::lowerbound
