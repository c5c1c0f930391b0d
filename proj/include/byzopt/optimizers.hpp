#pragma once

// Server/node round structure for DSGD, DSGDm, Byrd-Nester, the restarted
// variant and the inexact proximal point wrapper, plus the parameter
// schedules that drive them.

#include "byzopt/aggregators.hpp"
#include "byzopt/attacks.hpp"
#include "byzopt/oracles.hpp"
#include "byzopt/problems.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace byzopt {

struct ByrdNesterParams {
  double eta = 0.1;
  double theta = 1.0;
  double beta = 0.0;
  double alpha = 0.0;
  int m = 1;
  int m0 = 1;
  int T = 1;
  double q = 1.0;

  void validate() const;
};

/// What a schedule asked for before caps were applied.
struct ClampRecord {
  bool clamped = false;
  double raw_m = 0.0;
  double raw_m0 = 0.0;
  double raw_T = 0.0;
  std::string note;
};

struct Caps {
  std::int64_t max_queries = 1'000'000;  // bound on m0 + m T for one run
};

struct Schedule {
  ByrdNesterParams params;
  ClampRecord clamp;
};

/// Everything a round reads besides the optimizer state.
struct Environment {
  const Problem* problem = nullptr;
  const Oracle* oracle = nullptr;
  const Aggregator* aggregator = nullptr;
  AttackConfig attack{};
  std::uint64_t seed = 0;         // attacks and output selection
  QueryLedger* ledger = nullptr;  // optional

  int byzantine_messages() const;
};

struct OptimizerState {
  Vector x;
  Vector x_prev;
  Vector y;
  Vector s_hat;
  Vector s_server;
  std::vector<Vector> s_honest;     // per honest node, honest-set order
  std::vector<Vector> s_byzantine;  // label-flip momentum of Byzantine nodes
  std::uint32_t t = 0;
  double agg_deviation = 0.0;       // ||s_hat - s_hat_ideal|| of the last round

  static OptimizerState at(const Vector& x0);
};

/// x <- x - eta A({g_i}), g_i mini-batch gradients at x.
void dsgd_step(OptimizerState& state, const Environment& env, double eta, int m);

/// s_i <- beta_m s_i + (1 - beta_m) g_i, x <- x - eta A({s_i}).
void dsgdm_step(OptimizerState& state, const Environment& env, double eta, double beta_m, int m);

/// Sets y0 = x and s_hat = s_i = mini-batch of size m0 at y0 (the init stream).
/// With `count_queries` false the batch is not recorded in the ledger.
void byrd_nester_init(OptimizerState& state, const Environment& env, const ByrdNesterParams& params,
                      bool count_queries = true);

/// One Byrd-Nester round (node momentum, two aggregations, descent, extrapolation).
void byrd_nester_round(OptimizerState& state, const Environment& env, const ByrdNesterParams& params);

enum class OutputMode { strongly_convex, nonconvex };

struct RoundInfo {
  std::uint32_t t = 0;
  const OptimizerState* state = nullptr;
  std::int64_t queries = 0;
};
using RoundObserver = std::function<void(const RoundInfo&)>;

struct RunResult {
  Vector output;
  OptimizerState state;
  std::int64_t queries = 0;
  std::uint32_t output_round = 0;  // t' in non-convex mode, T otherwise
};

struct RunOptions {
  OutputMode output = OutputMode::strongly_convex;
  bool count_init_batch = true;
  RoundObserver observer;  // called after init (t = 0) and after every round
};

RunResult run_byrd_nester(const Environment& env, const Vector& x0, const ByrdNesterParams& params,
                          const RunOptions& options = {});

enum class Method { dsgd, dsgdm, byrd_nester };
std::string_view to_string(Method method);
Method parse_method(std::string_view name);

/// Uniform driver over the three methods. DSGD and DSGDm read eta, m and T
/// from `params`; DSGDm uses `momentum`.
struct MethodConfig {
  Method method = Method::byrd_nester;
  ByrdNesterParams params{};
  double momentum = 0.9;
};

RunResult run_method(const MethodConfig& cfg, const Environment& env, const Vector& x0, const RunOptions& options = {});

// ---- schedules ------------------------------------------------------------

/// alpha = 0, theta = 1, beta from kappa, eta = 1/L,
/// T = ceil(2 sqrt(kappa) log(4 L^2 R^2 / eps^2)),
/// m = m0 = ceil(64 kappa (3 rd (1 + 1/((1-delta) n)) + 1/((1-delta) n)) sigma^2 / eps^2), at least 1.
Schedule strongly_convex_defaults(double L, double mu, double sigma_sq, double delta, int n, double rho_delta,
                                  double eps, double R, const Caps& caps = {});

/// eta from the non-convex step-size rule, beta = 1 - 12 L eta, theta = 1 - beta,
/// alpha = 1, m0 = ceil(m / (L eta)^2).
Schedule nonconvex_defaults(double L, double delta, int n, double rho_delta, double sigma_sq, int T, double Delta,
                            int m = 1, const Caps& caps = {});

struct RestartSchedule {
  double eps1_sq = 0.0;
  std::vector<int> T_list;
  std::vector<int> m_list;
  int P = 1;
  ByrdNesterParams base;  // alpha, theta, beta, eta shared by every call

  std::int64_t total_queries() const;
};

RestartSchedule make_restart_schedule(double L, double mu, double sigma_sq, double delta, int n, double rho_delta,
                                      double eps, double R, const Caps& caps = {});

struct RestartResult {
  Vector output;
  RestartSchedule schedule;
  std::int64_t queries = 0;
  std::vector<std::int64_t> per_call_queries;
};

/// P calls of Byrd-Nester; call p starts at the previous output with T(p) and
/// m = m0 = m(p). The initial batch of a call is the first round's batch (both
/// sample at y0 with the same draws), so each call costs m(p) T(p) queries.
RestartResult run_byrd_renester(const Environment& env, const Vector& x0, const RestartSchedule& schedule,
                                const RoundObserver& observer = {});

/// Problem-constant inputs to the restart schedule.
struct RestartKnobs {
  double eps = 1e-3;
  double R = 1.0;         // ||x0 - x*|| or an estimate
  double rho_delta = 0.0;
  Caps caps{};
};

RestartResult run_byrd_renester(const Environment& env, const Vector& x0, const RestartKnobs& knobs,
                                const RoundObserver& observer = {});

struct ProxParams {
  int Gamma = 1;
  double prox_weight = 1.0;  // L in f_i + L ||z - center||^2
  ClampRecord clamp;
};

/// Gamma = ceil(32 L Delta / eps^2), clamped to `max_gamma`.
ProxParams make_prox_params(double L, double Delta, double eps, int max_gamma = 10'000);

/// f_i(z) + w ||z - center||^2; forwards batch and masked gradients of the base loss.
class ProxSurrogate final : public NodeLoss {
 public:
  ProxSurrogate(std::shared_ptr<const NodeLoss> base, Vector center, double weight);

  Index dim() const override { return base_->dim(); }
  double value(const Vector& z) const override;
  Vector gradient(const Vector& z) const override;
  Index sample_count() const override { return base_->sample_count(); }
  Vector batch_gradient(const Vector& z, std::span<const Index> samples) const override;
  Vector masked_gradient(const Vector& z, bool success, double p) const override;

 private:
  std::shared_ptr<const NodeLoss> base_;
  Vector center_;
  double weight_;
};

/// The surrogate problem around `center`: smoothness 3L, strong convexity L.
Problem make_prox_problem(const Problem& base, const Vector& center, double weight);

struct ProxResult {
  Vector output;
  int chosen = 0;                // gamma' in [1, Gamma]
  std::vector<Vector> centers;   // kappa^0 .. kappa^Gamma
  std::int64_t queries = 0;
  ProxParams prox;
};

/// Inner solver settings. R is the configured distance estimate for each surrogate.
struct ProxKnobs {
  double inner_eps = 1e-3;
  double inner_R = 1.0;
  double rho_delta = 0.0;
  Caps caps{};
};

ProxResult run_inexact_prox(const Environment& env, const Vector& x0, const ProxParams& prox, const ProxKnobs& knobs);

}  // namespace byzopt
