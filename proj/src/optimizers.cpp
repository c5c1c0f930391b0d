#include "byzopt/optimizers.hpp"

#include "byzopt/rng.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace byzopt {

namespace {

// Oracle draws of round t are keyed by t - 1, so the initial batch (key 0)
// and the first round's batch sample the same xi^(0, l) at y0.
std::uint32_t oracle_key(std::uint32_t t) { return t == 0 ? 0 : t - 1; }

bool uses_poisoned(const Environment& env) {
  return env.attack.kind == AttackKind::label_flip && !env.problem->poisoned.empty() && env.byzantine_messages() > 0;
}

void charge(const Environment& env, int m) {
  if (env.ledger) env.ledger->record(m);
}

Vector plain_mean(const std::vector<Vector>& xs) {
  Vector m = Vector::Zero(xs.front().size());
  for (const auto& v : xs) m += v;
  return m / static_cast<double>(xs.size());
}

/// Honest messages followed by the crafted Byzantine ones, then aggregated.
Vector aggregate_stream(const Environment& env, const std::vector<Vector>& honest, Stream stream, std::uint32_t round,
                        const std::vector<Vector>* poisoned) {
  AttackContext actx;
  actx.round = round;
  actx.stream = stream;
  actx.seed = env.seed;
  actx.byzantine = env.byzantine_messages();
  actx.poisoned = poisoned;
  std::vector<Vector> inputs = honest;
  for (auto& v : craft(env.attack, honest, actx)) inputs.push_back(std::move(v));
  AggregationContext ctx;
  ctx.round = round;
  ctx.stream = stream;
  ctx.honest_count = static_cast<int>(honest.size());
  return env.aggregator->aggregate(inputs, ctx);
}

void check_env(const Environment& env) {
  require(env.problem && env.oracle && env.aggregator, "optimizer: environment is incomplete");
}

std::uint32_t pick_round(std::uint64_t seed, std::uint32_t tag, std::uint32_t count) {
  KeyedStream rng(derive_seed(seed, 0x07a11ULL), tag, 0, 0);
  return static_cast<std::uint32_t>(rng.below(count));
}

double ceil_pos(double v) { return std::max(1.0, std::ceil(v)); }

}  // namespace

void ByrdNesterParams::validate() const {
  require(eta > 0.0 && std::isfinite(eta), "byrd-nester: eta must be positive");
  require(theta > 0.0 && theta <= 1.0, "byrd-nester: theta must lie in (0, 1]");
  require(beta >= 0.0 && beta < 1.0, "byrd-nester: beta must lie in [0, 1)");
  require(alpha >= 0.0 && alpha <= 1.0, "byrd-nester: alpha must lie in [0, 1]");
  require(m >= 1 && m0 >= 1, "byrd-nester: batch sizes must be at least 1");
  require(T >= 1, "byrd-nester: T must be at least 1");
  require(q >= 1.0, "byrd-nester: q must be at least 1");
}

int Environment::byzantine_messages() const {
  if (attack.kind == AttackKind::none) return 0;
  return problem->byzantine_count();
}

OptimizerState OptimizerState::at(const Vector& x0) {
  OptimizerState s;
  s.x = x0;
  s.x_prev = x0;
  s.y = x0;
  s.s_hat = Vector::Zero(x0.size());
  s.s_server = Vector::Zero(x0.size());
  return s;
}

// ---- baselines --------------------------------------------------------------

void dsgd_step(OptimizerState& state, const Environment& env, double eta, int m) {
  check_env(env);
  require(eta > 0.0, "dsgd: eta must be positive");
  const std::uint32_t t = state.t + 1;
  const auto g = env.oracle->honest_minibatch(*env.problem, state.x, m, oracle_key(t), nullptr);
  charge(env, m);
  std::vector<Vector> pg;
  if (uses_poisoned(env)) pg = env.oracle->poisoned_minibatch(*env.problem, state.x, m, oracle_key(t));
  const Vector a = aggregate_stream(env, g, Stream::gradient, t, pg.empty() ? nullptr : &pg);
  state.agg_deviation = (a - plain_mean(g)).norm();
  state.s_hat = a;
  state.x_prev = state.x;
  state.x = state.x - eta * a;
  state.y = state.x;
  state.t = t;
}

void dsgdm_step(OptimizerState& state, const Environment& env, double eta, double beta_m, int m) {
  check_env(env);
  require(eta > 0.0, "dsgdm: eta must be positive");
  require(beta_m >= 0.0 && beta_m < 1.0, "dsgdm: momentum must lie in [0, 1)");
  const std::uint32_t t = state.t + 1;
  const auto g = env.oracle->honest_minibatch(*env.problem, state.x, m, oracle_key(t), nullptr);
  charge(env, m);
  if (state.s_honest.empty()) state.s_honest.assign(g.size(), Vector::Zero(state.x.size()));
  for (std::size_t k = 0; k < g.size(); ++k) state.s_honest[k] = beta_m * state.s_honest[k] + (1.0 - beta_m) * g[k];
  const bool lf = uses_poisoned(env);
  if (lf) {
    const auto pg = env.oracle->poisoned_minibatch(*env.problem, state.x, m, oracle_key(t));
    if (state.s_byzantine.empty()) state.s_byzantine.assign(pg.size(), Vector::Zero(state.x.size()));
    for (std::size_t k = 0; k < pg.size(); ++k)
      state.s_byzantine[k] = beta_m * state.s_byzantine[k] + (1.0 - beta_m) * pg[k];
  }
  const Vector a = aggregate_stream(env, state.s_honest, Stream::momentum, t, lf ? &state.s_byzantine : nullptr);
  state.agg_deviation = (a - plain_mean(state.s_honest)).norm();
  state.s_hat = a;
  state.x_prev = state.x;
  state.x = state.x - eta * a;
  state.y = state.x;
  state.t = t;
}

// ---- Byrd-Nester ------------------------------------------------------------

void byrd_nester_init(OptimizerState& state, const Environment& env, const ByrdNesterParams& params,
                      bool count_queries) {
  check_env(env);
  params.validate();
  state.y = state.x;
  state.x_prev = state.x;
  state.t = 0;
  const auto g = env.oracle->honest_minibatch(*env.problem, state.y, params.m0, 0, nullptr);
  if (count_queries) charge(env, params.m0);
  state.s_honest = g;
  state.s_byzantine.clear();
  const bool lf = uses_poisoned(env);
  if (lf) state.s_byzantine = env.oracle->poisoned_minibatch(*env.problem, state.y, params.m0, 0);
  state.s_hat = aggregate_stream(env, g, Stream::init, 0, lf ? &state.s_byzantine : nullptr);
  state.s_server = state.s_hat;
  state.agg_deviation = (state.s_hat - plain_mean(g)).norm();
}

void byrd_nester_round(OptimizerState& state, const Environment& env, const ByrdNesterParams& params) {
  check_env(env);
  const std::uint32_t t = state.t + 1;
  const double beta = params.beta, theta = params.theta, alpha = params.alpha;
  const auto g = env.oracle->honest_minibatch(*env.problem, state.y, params.m, oracle_key(t), nullptr);
  charge(env, params.m);
  for (std::size_t k = 0; k < g.size(); ++k) state.s_honest[k] = beta * state.s_honest[k] + theta * g[k];

  const bool lf = uses_poisoned(env);
  std::vector<Vector> pg;
  if (lf) {
    pg = env.oracle->poisoned_minibatch(*env.problem, state.y, params.m, oracle_key(t));
    for (std::size_t k = 0; k < pg.size(); ++k) state.s_byzantine[k] = beta * state.s_byzantine[k] + theta * pg[k];
  }

  // alpha = 1 voids the server-level term and alpha = 0 the node-level one;
  // the voided aggregation is skipped.
  const Index d = state.x.size();
  Vector ag = Vector::Zero(d), as = Vector::Zero(d);
  Vector dev = Vector::Zero(d);
  if (alpha < 1.0) {
    ag = aggregate_stream(env, g, Stream::gradient, t, lf ? &pg : nullptr);
    dev += (1.0 - alpha) * theta * (ag - plain_mean(g));
  }
  if (alpha > 0.0) {
    as = aggregate_stream(env, state.s_honest, Stream::momentum, t, lf ? &state.s_byzantine : nullptr);
    dev += alpha * (as - plain_mean(state.s_honest));
  }
  state.s_server = beta * state.s_hat + theta * ag;
  if (alpha == 0.0) {
    state.s_hat = state.s_server;
  } else if (alpha == 1.0) {
    state.s_hat = as;
  } else {
    state.s_hat = (1.0 - alpha) * state.s_server + alpha * as;
  }
  state.agg_deviation = dev.norm();
  state.x_prev = state.x;
  state.x = state.x - params.eta * state.s_hat;
  state.y = state.x + beta * (state.x - state.x_prev);
  state.t = t;
}

namespace {

/// Runs `body` with a private ledger and forwards its entries to the caller's.
template <class Body>
std::int64_t with_ledger(const Environment& env, Body&& body) {
  QueryLedger local;
  Environment inner = env;
  inner.ledger = &local;
  body(inner);
  if (env.ledger)
    for (auto q : local.per_round()) env.ledger->record(q);
  return local.count();
}

}  // namespace

RunResult run_byrd_nester(const Environment& env, const Vector& x0, const ByrdNesterParams& params,
                          const RunOptions& options) {
  check_env(env);
  params.validate();
  require_same_dim(x0, env.problem->d, "run_byrd_nester");
  RunResult res;
  const std::uint32_t T = static_cast<std::uint32_t>(params.T);
  const std::uint32_t chosen = options.output == OutputMode::nonconvex ? pick_round(env.seed, 1, T) : T;
  Vector picked;
  res.queries = with_ledger(env, [&](const Environment& e) {
    OptimizerState st = OptimizerState::at(x0);
    byrd_nester_init(st, e, params, options.count_init_batch);
    if (options.observer) options.observer({0, &st, e.ledger->count()});
    if (chosen == 0) picked = st.y;
    for (std::uint32_t t = 1; t <= T; ++t) {
      byrd_nester_round(st, e, params);
      if (options.observer) options.observer({t, &st, e.ledger->count()});
      if (t == chosen && options.output == OutputMode::nonconvex) picked = st.y;
    }
    res.state = std::move(st);
  });
  res.output_round = chosen;
  res.output = options.output == OutputMode::nonconvex ? picked : res.state.x;
  return res;
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::dsgd: return "dsgd";
    case Method::dsgdm: return "dsgdm";
    case Method::byrd_nester: return "byrd_nester";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "dsgd") return Method::dsgd;
  if (name == "dsgdm") return Method::dsgdm;
  if (name == "byrd_nester" || name == "byrd-nester") return Method::byrd_nester;
  throw InvalidArgument("unknown method '" + std::string(name) + "'");
}

RunResult run_method(const MethodConfig& cfg, const Environment& env, const Vector& x0, const RunOptions& options) {
  if (cfg.method == Method::byrd_nester) return run_byrd_nester(env, x0, cfg.params, options);
  check_env(env);
  require_same_dim(x0, env.problem->d, "run_method");
  require(cfg.params.T >= 1 && cfg.params.m >= 1, "run_method: T and m must be at least 1");
  RunResult res;
  const auto T = static_cast<std::uint32_t>(cfg.params.T);
  const std::uint32_t chosen = options.output == OutputMode::nonconvex ? pick_round(env.seed, 1, T) : T;
  Vector picked = x0;
  res.queries = with_ledger(env, [&](const Environment& e) {
    OptimizerState st = OptimizerState::at(x0);
    if (options.observer) options.observer({0, &st, 0});
    for (std::uint32_t t = 1; t <= T; ++t) {
      if (cfg.method == Method::dsgd) {
        dsgd_step(st, e, cfg.params.eta, cfg.params.m);
      } else {
        dsgdm_step(st, e, cfg.params.eta, cfg.momentum, cfg.params.m);
      }
      if (options.observer) options.observer({t, &st, e.ledger->count()});
      if (t == chosen && options.output == OutputMode::nonconvex) picked = st.x;
    }
    res.state = std::move(st);
  });
  res.output_round = chosen;
  res.output = options.output == OutputMode::nonconvex ? picked : res.state.x;
  return res;
}

// ---- schedules ----------------------------------------------------------------

namespace {

double variance_factor(double delta, int n, double rho_delta) {
  const double inv = 1.0 / ((1.0 - delta) * n);
  return 3.0 * rho_delta * (1.0 + inv) + inv;
}

void apply_caps(double raw_m0, double raw_m, double raw_T, const Caps& caps, ByrdNesterParams& p, ClampRecord& rec) {
  rec.raw_m0 = raw_m0;
  rec.raw_m = raw_m;
  rec.raw_T = raw_T;
  const auto cap = static_cast<double>(caps.max_queries);
  double m0 = raw_m0, m = raw_m, T = raw_T;
  std::ostringstream note;
  if (m0 + m * T > cap) {
    rec.clamped = true;
    if (T + 1.0 > cap) {
      T = std::max(1.0, cap - 1.0);
      note << "T clamped from " << raw_T << " to " << T << "; ";
    }
    if (m0 + m * T > cap) {
      // Keep m0 = m when the schedule ties them, otherwise shrink both proportionally.
      const double scale = cap / (m0 + m * T);
      m = std::max(1.0, std::floor(m * scale));
      m0 = std::max(1.0, std::floor(m0 * scale));
      while (m0 + m * T > cap && (m > 1.0 || m0 > 1.0)) {
        if (m > 1.0) m -= 1.0;
        if (m0 > 1.0 && m0 + m * T > cap) m0 -= 1.0;
      }
      note << "batch clamped from (m0=" << raw_m0 << ", m=" << raw_m << ") to (m0=" << m0 << ", m=" << m << ")";
    }
  }
  rec.note = note.str();
  p.m0 = static_cast<int>(m0);
  p.m = static_cast<int>(m);
  p.T = static_cast<int>(T);
}

double kappa_beta(double kappa) { return (std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0); }

}  // namespace

Schedule strongly_convex_defaults(double L, double mu, double sigma_sq, double delta, int n, double rho_delta,
                                  double eps, double R, const Caps& caps) {
  if (!(mu > 0.0)) throw InvalidArgument("strongly convex schedule needs mu > 0");
  require(L >= mu, "strongly convex schedule needs mu <= L");
  require(eps > 0.0 && R >= 0.0 && sigma_sq >= 0.0 && n >= 1 && delta >= 0.0 && delta < 0.5 && rho_delta >= 0.0,
          "strongly convex schedule: invalid inputs");
  const double kappa = L / mu;
  Schedule s;
  s.params.alpha = 0.0;
  s.params.theta = 1.0;
  s.params.q = kappa;
  s.params.beta = kappa_beta(kappa);
  s.params.eta = 1.0 / L;
  const double raw_T = ceil_pos(2.0 * std::sqrt(kappa) * std::log(4.0 * L * L * R * R / (eps * eps)));
  const double raw_m = ceil_pos(64.0 * kappa * variance_factor(delta, n, rho_delta) * sigma_sq / (eps * eps));
  apply_caps(raw_m, raw_m, raw_T, caps, s.params, s.clamp);
  return s;
}

Schedule nonconvex_defaults(double L, double delta, int n, double rho_delta, double sigma_sq, int T, double Delta,
                            int m, const Caps& caps) {
  require(L > 0.0 && T >= 1 && m >= 1 && n >= 1 && delta >= 0.0 && delta < 0.5 && rho_delta >= 0.0 &&
              sigma_sq >= 0.0 && Delta >= 0.0,
          "non-convex schedule: invalid inputs");
  const double cap_eta = 1.0 / (24.0 * L);
  double eta = cap_eta;
  Schedule s;
  if (sigma_sq > 0.0) {
    const double hn = (1.0 - delta) * n;
    const double num = Delta + sigma_sq / (L * hn * m);
    const double den = T * (1.0 / hn + rho_delta * (1.0 + 1.0 / hn)) * L * sigma_sq / m;
    const double first = std::sqrt(num / den);
    if (first < cap_eta) {
      eta = first;
    } else {
      s.clamp.note = "step size limited by 1/(24L) so that beta >= 1/2; ";
    }
  }
  require(eta > 0.0, "non-convex schedule: step size vanished (Delta = 0?)");
  s.params.eta = eta;
  s.params.beta = 1.0 - 12.0 * L * eta;
  s.params.theta = 1.0 - s.params.beta;
  s.params.alpha = 1.0;
  s.params.q = 1.0;
  const double raw_m0 = ceil_pos(m / (L * L * eta * eta));
  const std::string pre = s.clamp.note;
  apply_caps(raw_m0, m, T, caps, s.params, s.clamp);
  s.clamp.note = pre + s.clamp.note;
  return s;
}

std::int64_t RestartSchedule::total_queries() const {
  std::int64_t k = 0;
  for (std::size_t p = 0; p < T_list.size(); ++p) k += static_cast<std::int64_t>(T_list[p]) * m_list[p];
  return k;
}

RestartSchedule make_restart_schedule(double L, double mu, double sigma_sq, double delta, int n, double rho_delta,
                                      double eps, double R, const Caps& caps) {
  if (!(mu > 0.0)) throw InvalidArgument("restart schedule needs mu > 0");
  require(L >= mu && eps > 0.0 && R >= 0.0 && sigma_sq >= 0.0 && n >= 1 && delta >= 0.0 && delta < 0.5 &&
              rho_delta >= 0.0,
          "restart schedule: invalid inputs");
  const double kappa = L / mu;
  RestartSchedule s;
  s.base.alpha = 0.0;
  s.base.theta = 1.0;
  s.base.q = kappa;
  s.base.beta = kappa_beta(kappa);
  s.base.eta = 1.0 / L;
  s.eps1_sq = 32.0 / mu * variance_factor(delta, n, rho_delta) * sigma_sq;
  const double second = ceil_pos(2.0 * std::sqrt(kappa) * std::log(4.0 * L * L * R * R / (eps * eps)));
  double T1 = second;
  double P = 1.0;
  if (s.eps1_sq > 0.0) {
    const double first = ceil_pos(2.0 * std::sqrt(kappa) * std::log(2.0 * L * R * R / s.eps1_sq));
    T1 = std::min(first, second);
    P = std::max(std::ceil(std::log2(4.0 * L * s.eps1_sq / (eps * eps))), 1.0);
  }
  const double Tp = ceil_pos(2.0 * std::sqrt(kappa) * std::log(8.0));
  const auto cap = static_cast<double>(caps.max_queries);
  double total = T1;
  if (std::isfinite(P) && P <= 62) total += (std::exp2(P) - 2.0) * Tp;  // sum_{p=2}^P 2^{p-1} Tp
  if (!std::isfinite(T1) || !std::isfinite(P) || P > 62 || total > cap) {
    std::ostringstream msg;
    msg << "restart schedule infeasible: P = " << P << ", T(1) = " << T1 << ", total queries " << total
        << " exceed the cap " << caps.max_queries << " (eps = " << eps << " too small for the caps)";
    throw RuntimeFailure(msg.str());
  }
  s.P = static_cast<int>(P);
  for (int p = 1; p <= s.P; ++p) {
    s.T_list.push_back(static_cast<int>(p == 1 ? T1 : Tp));
    s.m_list.push_back(1 << (p - 1));
  }
  return s;
}

RestartResult run_byrd_renester(const Environment& env, const Vector& x0, const RestartSchedule& schedule,
                                const RoundObserver& observer) {
  check_env(env);
  require(schedule.P >= 1 && static_cast<int>(schedule.T_list.size()) == schedule.P &&
              static_cast<int>(schedule.m_list.size()) == schedule.P,
          "restart: malformed schedule");
  RestartResult res;
  res.schedule = schedule;
  Vector z = x0;
  std::uint32_t offset = 0;
  for (int p = 1; p <= schedule.P; ++p) {
    const Oracle oracle = env.oracle->fork(static_cast<std::uint64_t>(p));
    Environment e = env;
    e.oracle = &oracle;
    e.seed = derive_seed(env.seed, static_cast<std::uint64_t>(p));
    ByrdNesterParams params = schedule.base;
    params.T = schedule.T_list[static_cast<std::size_t>(p - 1)];
    params.m = params.m0 = schedule.m_list[static_cast<std::size_t>(p - 1)];
    RunOptions opts;
    opts.count_init_batch = false;
    const std::int64_t before = res.queries;
    if (observer) {
      opts.observer = [&, p](const RoundInfo& info) {
        if (info.t == 0 && p > 1) return;
        observer({offset + info.t, info.state, before + info.queries});
      };
    }
    RunResult r = run_byrd_nester(e, z, params, opts);
    res.per_call_queries.push_back(r.queries);
    res.queries += r.queries;
    offset += static_cast<std::uint32_t>(params.T);
    z = r.output;
  }
  res.output = z;
  return res;
}

RestartResult run_byrd_renester(const Environment& env, const Vector& x0, const RestartKnobs& knobs,
                                const RoundObserver& observer) {
  check_env(env);
  const Problem& pb = *env.problem;
  const RestartSchedule s = make_restart_schedule(pb.L, pb.mu, env.oracle->spec().sigma_sq, pb.delta, pb.n,
                                                  knobs.rho_delta, knobs.eps, knobs.R, knobs.caps);
  return run_byrd_renester(env, x0, s, observer);
}

// ---- inexact proximal point -------------------------------------------------

ProxParams make_prox_params(double L, double Delta, double eps, int max_gamma) {
  require(L > 0.0 && Delta >= 0.0 && eps > 0.0 && max_gamma >= 1, "prox: invalid inputs");
  ProxParams p;
  p.prox_weight = L;
  const double raw = ceil_pos(32.0 * L * Delta / (eps * eps));
  p.clamp.raw_T = raw;
  if (!(raw <= max_gamma)) {
    p.clamp.clamped = true;
    p.clamp.note = "Gamma clamped from " + std::to_string(raw) + " to " + std::to_string(max_gamma);
    p.Gamma = max_gamma;
  } else {
    p.Gamma = static_cast<int>(raw);
  }
  return p;
}

ProxSurrogate::ProxSurrogate(std::shared_ptr<const NodeLoss> base, Vector center, double weight)
    : base_(std::move(base)), center_(std::move(center)), weight_(weight) {
  require(base_ != nullptr, "prox surrogate: base loss missing");
  require_same_dim(center_, base_->dim(), "prox surrogate center");
  require(weight_ >= 0.0, "prox surrogate: weight must be nonnegative");
}

double ProxSurrogate::value(const Vector& z) const { return base_->value(z) + weight_ * (z - center_).squaredNorm(); }

Vector ProxSurrogate::gradient(const Vector& z) const { return base_->gradient(z) + 2.0 * weight_ * (z - center_); }

Vector ProxSurrogate::batch_gradient(const Vector& z, std::span<const Index> samples) const {
  return base_->batch_gradient(z, samples) + 2.0 * weight_ * (z - center_);
}

Vector ProxSurrogate::masked_gradient(const Vector& z, bool success, double p) const {
  return base_->masked_gradient(z, success, p) + 2.0 * weight_ * (z - center_);
}

Problem make_prox_problem(const Problem& base, const Vector& center, double weight) {
  require(weight > 0.0, "prox problem: weight must be positive");
  Problem p = base;
  for (auto& l : p.losses)
    if (l) l = std::make_shared<ProxSurrogate>(l, center, weight);
  for (auto& l : p.poisoned)
    if (l) l = std::make_shared<ProxSurrogate>(l, center, weight);
  p.L = base.L + 2.0 * weight;
  // Curvature of f_i + w||.||^2 lies in [2w - L, L + 2w]; with w = L this is [L, 3L].
  p.mu = 2.0 * weight - base.L;
  require(p.mu > 0.0, "prox problem: weight too small for a strongly convex surrogate");
  p.optimum.reset();
  return p;
}

ProxResult run_inexact_prox(const Environment& env, const Vector& x0, const ProxParams& prox, const ProxKnobs& knobs) {
  check_env(env);
  require(prox.Gamma >= 1, "prox: Gamma must be at least 1");
  require_same_dim(x0, env.problem->d, "run_inexact_prox");
  ProxResult res;
  res.prox = prox;
  res.centers.push_back(x0);
  for (int g = 1; g <= prox.Gamma; ++g) {
    const Problem sub = make_prox_problem(*env.problem, res.centers.back(), prox.prox_weight);
    const Oracle oracle = env.oracle->fork(0x9000'0000ULL + static_cast<std::uint64_t>(g));
    Environment e = env;
    e.problem = &sub;
    e.oracle = &oracle;
    e.seed = derive_seed(env.seed, 0x9000'0000ULL + static_cast<std::uint64_t>(g));
    RestartKnobs rk;
    rk.eps = knobs.inner_eps;
    rk.R = knobs.inner_R;
    rk.rho_delta = knobs.rho_delta;
    rk.caps = knobs.caps;
    const RestartResult r = run_byrd_renester(e, res.centers.back(), rk);
    res.queries += r.queries;
    res.centers.push_back(r.output);
  }
  res.chosen = 1 + static_cast<int>(pick_round(env.seed, 2, static_cast<std::uint32_t>(prox.Gamma)));
  res.output = res.centers[static_cast<std::size_t>(res.chosen)];
  return res;
}

}  // namespace byzopt
