#include "byzopt/optimizers.hpp"
#include "byzopt/rng.hpp"

#include "doctest.h"

#include <cmath>

using namespace byzopt;

namespace {

/// f(x) = -g^T x: constant gradient -g... stored as the gradient itself.
class ConstantGradientLoss final : public NodeLoss {
 public:
  explicit ConstantGradientLoss(Vector g) : g_(std::move(g)) {}
  Index dim() const override { return g_.size(); }
  double value(const Vector& x) const override { return g_.dot(x); }
  Vector gradient(const Vector&) const override { return g_; }

 private:
  Vector g_;
};

Problem constant_problem(const Vector& g, int honest, int n) {
  Problem p;
  p.d = g.size();
  p.n = n;
  p.delta = static_cast<double>(n - honest) / n;
  p.losses.resize(static_cast<std::size_t>(n));
  auto loss = std::make_shared<ConstantGradientLoss>(g);
  for (int i = 0; i < honest; ++i) {
    p.honest.push_back(i);
    p.losses[static_cast<std::size_t>(i)] = loss;
  }
  p.validate();
  return p;
}

Problem quadratic(Index d, double kappa, int honest, int n, double zeta_scale, std::uint64_t seed) {
  QuadraticFamily fam;
  fam.curvature = d == 1 ? Vector(Vector::Ones(1)) : Vector(Vector::LinSpaced(d, 1.0 / kappa, 1.0));
  for (int i = 0; i < honest; ++i) {
    KeyedStream rng(seed, static_cast<std::uint32_t>(i), 0, 0);
    Vector b(d);
    for (Index j = 0; j < d; ++j) b[j] = 1.0 + zeta_scale * rng.normal();
    fam.offsets.push_back(b);
  }
  return make_quadratic_problem(fam, n, static_cast<double>(n - honest) / n);
}

struct Setup {
  Problem problem;
  Oracle oracle;
  RuleAggregator aggregator;
  Environment env;

  Setup(Problem p, OracleSpec spec, AggregatorConfig agg, AttackConfig attack = {})
      : problem(std::move(p)), oracle(spec), aggregator(agg) {
    env.problem = &problem;
    env.oracle = &oracle;
    env.aggregator = &aggregator;
    env.attack = attack;
    env.seed = 77;
  }
};

AggregatorConfig rule(Rule r, double delta) {
  AggregatorConfig c;
  c.rule = r;
  c.delta = delta;
  return c;
}

OracleSpec noise(double sigma_sq, std::uint64_t seed = 3) { return {sigma_sq, NoiseKind::gaussian_iid, seed, 1.0}; }

}  // namespace

TEST_CASE("dsgd with unit curvature is a Newton step") {
  QuadraticFamily fam;
  fam.curvature = Vector::Ones(1);
  fam.offsets.assign(1, Vector::Zero(1));
  Setup s(make_quadratic_problem(fam, 1, 0.0), noise(0.0), rule(Rule::mean, 0.0));
  OptimizerState st = OptimizerState::at(Vector::Constant(1, 2.0));
  dsgd_step(st, s.env, 1.0, 1);
  CHECK(st.x[0] == 0.0);
}

TEST_CASE("zero-value attack under the mean rule shrinks the step to 0.8 eta mean") {
  Vector g(2);
  g << 1.0, -3.0;
  AttackConfig att;
  att.kind = AttackKind::zero_value;
  Setup s(constant_problem(g, 8, 10), noise(0.0), rule(Rule::mean, 0.2), att);
  OptimizerState st = OptimizerState::at(Vector::Zero(2));
  dsgd_step(st, s.env, 0.5, 1);
  CHECK((st.x + 0.8 * 0.5 * g).norm() < 1e-15);
}

TEST_CASE("dsgd contracts at the classical gradient-descent rate") {
  Setup s(quadratic(20, 10.0, 4, 4, 0.0, 1), noise(0.0), rule(Rule::mean, 0.0));
  const double fstar = s.problem.optimum->value;
  OptimizerState st = OptimizerState::at(Vector::Zero(20));
  const double gap0 = full_value(s.problem, st.x) - fstar;
  for (int t = 0; t < 40; ++t) dsgd_step(st, s.env, 1.0 / s.problem.L, 1);
  const double gap = full_value(s.problem, st.x) - fstar;
  REQUIRE(gap > 0.0);
  CHECK(std::pow(gap / gap0, 1.0 / 40) <= 1.0 - 1.0 / 10.0);
}

TEST_CASE("dsgdm with zero momentum equals dsgd bit for bit") {
  // The attack must be a function of the inputs: randomized attacks draw per stream.
  AttackConfig att;
  att.kind = AttackKind::alie;
  Setup s(quadratic(5, 4.0, 8, 10, 0.5, 2), noise(1.0), rule(Rule::median, 0.2), att);
  OptimizerState a = OptimizerState::at(Vector::Zero(5)), b = a;
  for (int t = 0; t < 30; ++t) {
    dsgd_step(a, s.env, 0.1, 2);
    dsgdm_step(b, s.env, 0.1, 0.0, 2);
    REQUIRE((a.x.array() == b.x.array()).all());
  }
}

TEST_CASE("dsgdm momentum converges geometrically to a constant gradient") {
  Vector g(3);
  g << 2.0, -1.0, 0.5;
  Setup s(constant_problem(g, 4, 4), noise(0.0), rule(Rule::mean, 0.0));
  OptimizerState st = OptimizerState::at(Vector::Zero(3));
  for (int t = 1; t <= 40; ++t) {
    dsgdm_step(st, s.env, 0.01, 0.9, 1);
    CHECK((st.s_honest[0] - g).norm() == doctest::Approx(std::pow(0.9, t) * g.norm()).epsilon(1e-12));
  }
}

TEST_CASE("dsgdm step follows the honest momentum under exact consensus") {
  Vector g(2);
  g << 1.0, 1.0;
  AttackConfig att;
  att.kind = AttackKind::sign_flip;
  Setup s(constant_problem(g, 8, 10), noise(0.0), rule(Rule::median, 0.2), att);
  OptimizerState st = OptimizerState::at(Vector::Zero(2));
  for (int t = 0; t < 5; ++t) {
    const Vector before = st.x;
    dsgdm_step(st, s.env, 0.1, 0.9, 1);
    CHECK((st.x.array() == (before - 0.1 * st.s_honest[0]).array()).all());
  }
}

TEST_CASE("byrd-nester with alpha = beta = 0 and theta = 1 is dsgd") {
  AttackConfig att;
  att.kind = AttackKind::gaussian;
  Setup s(quadratic(6, 5.0, 8, 10, 0.3, 4), noise(2.0), rule(Rule::median, 0.2), att);
  ByrdNesterParams p{0.2, 1.0, 0.0, 0.0, 3, 3, 25, 1.0};
  OptimizerState a = OptimizerState::at(Vector::Zero(6)), b = a;
  byrd_nester_init(b, s.env, p);
  for (int t = 0; t < 25; ++t) {
    dsgd_step(a, s.env, p.eta, p.m);
    byrd_nester_round(b, s.env, p);
    REQUIRE((a.x.array() == b.x.array()).all());
    REQUIRE((b.y.array() == b.x.array()).all());
  }
}

TEST_CASE("one unrolled byrd-nester round") {
  Setup s(quadratic(3, 2.0, 4, 5, 0.2, 5), noise(0.0), rule(Rule::trimmed_mean, 0.2));
  ByrdNesterParams p{0.3, 1.0, 0.0, 0.0, 1, 1, 1, 1.0};
  const Vector x0 = Vector::Constant(3, 0.7);
  const RunResult r = run_byrd_nester(s.env, x0, p);
  const auto g = honest_gradients(s.problem, x0);
  AggregationContext ctx;
  ctx.honest_count = 4;
  const Vector expect = x0 - p.eta * aggregate(rule(Rule::trimmed_mean, 0.2), g, ctx);
  CHECK((r.output - expect).norm() < 1e-15);
}

TEST_CASE("identical honest nodes reproduce the single-node recursion exactly") {
  Vector g(2);
  g << 0.5, -0.25;
  QuadraticFamily fam;
  fam.curvature = Vector::LinSpaced(2, 0.5, 1.0);
  fam.offsets.assign(8, g);
  AttackConfig att;
  att.kind = AttackKind::sign_flip;
  Setup s(make_quadratic_problem(fam, 10, 0.2), noise(0.0), rule(Rule::median, 0.2), att);
  const QuadraticLoss node(fam.curvature, g);
  ByrdNesterParams p{0.4, 0.6, 0.5, 0.3, 1, 1, 40, 1.0};
  OptimizerState st = OptimizerState::at(Vector::Zero(2));
  byrd_nester_init(st, s.env, p);
  Vector x = Vector::Zero(2), xp = x, y = x, si = node.gradient(y), shat = si;
  for (int t = 0; t < 40; ++t) {
    byrd_nester_round(st, s.env, p);
    const Vector gy = node.gradient(y);
    si = p.beta * si + p.theta * gy;
    const Vector sserver = p.beta * shat + p.theta * gy;
    shat = (1.0 - p.alpha) * sserver + p.alpha * si;
    xp = x;
    x = x - p.eta * shat;
    y = x + p.beta * (x - xp);
    REQUIRE((st.x.array() == x.array()).all());
    REQUIRE((st.y.array() == y.array()).all());
  }
}

TEST_CASE("decomposition and extrapolation identities") {
  for (double alpha : {0.0, 0.4, 1.0}) {
    Setup s(quadratic(8, 20.0, 6, 6, 0.4, 6), noise(0.0), rule(Rule::mean, 0.0));
    AggregatorConfig ideal = rule(Rule::ideal, 0.0);
    RuleAggregator ia(ideal);
    s.env.aggregator = &ia;
    ByrdNesterParams p{0.5, 0.7, 0.6, alpha, 1, 1, 30, 1.0};
    OptimizerState st = OptimizerState::at(Vector::Constant(8, 2.0));
    byrd_nester_init(st, s.env, p);
    for (int t = 1; t <= 30; ++t) {
      const Vector yprev = st.y;
      byrd_nester_round(st, s.env, p);
      CHECK((st.y.array() == (st.x + p.beta * (st.x - st.x_prev)).array()).all());
      if (t >= 2) {
        const Vector pred = yprev - p.eta * p.theta * full_gradient(s.problem, yprev);
        CHECK((st.x - pred).norm() <= 1e-12 * (1.0 + pred.norm()));
      }
    }
  }
}

TEST_CASE("query ledger equals m0 + m T") {
  Setup s(quadratic(4, 3.0, 5, 6, 0.1, 7), noise(1.0), rule(Rule::median, 1.0 / 6.0));
  ByrdNesterParams p{0.1, 0.5, 0.5, 0.5, 7, 11, 13, 1.0};
  QueryLedger ledger;
  s.env.ledger = &ledger;
  const RunResult r = run_byrd_nester(s.env, Vector::Zero(4), p);
  CHECK(r.queries == 11 + 7 * 13);
  CHECK(ledger.count() == 11 + 7 * 13);
  RunOptions opts;
  opts.count_init_batch = false;
  CHECK(run_byrd_nester(s.env, Vector::Zero(4), p, opts).queries == 7 * 13);
}

TEST_CASE("non-convex output is one of the recorded y iterates") {
  Setup s(quadratic(3, 3.0, 4, 4, 0.1, 8), noise(0.5), rule(Rule::mean, 0.0));
  ByrdNesterParams p{0.1, 0.5, 0.5, 1.0, 1, 1, 20, 1.0};
  std::vector<Vector> ys;
  RunOptions opts;
  opts.output = OutputMode::nonconvex;
  opts.observer = [&](const RoundInfo& info) { ys.push_back(info.state->y); };
  const RunResult r = run_byrd_nester(s.env, Vector::Zero(3), p, opts);
  REQUIRE(r.output_round < 20);
  CHECK((r.output.array() == ys[r.output_round].array()).all());
}

TEST_CASE("strongly convex defaults") {
  const Schedule k4 = strongly_convex_defaults(4.0, 1.0, 0.0, 0.0, 10, 0.0, 0.1, 1.0);
  CHECK(k4.params.beta == doctest::Approx(1.0 / 3.0));
  CHECK(k4.params.m == 1);
  CHECK(k4.params.m0 == 1);
  CHECK(k4.params.alpha == 0.0);
  CHECK(k4.params.theta == 1.0);
  CHECK(k4.params.eta == doctest::Approx(0.25));
  // Independent re-evaluation of the batch and horizon formulas.
  const double L = 1.0, mu = 0.01, kappa = 100, rd = 1.0, delta = 0.2, sig = 1.0, eps = 0.1, R = 1.0;
  const int n = 10;
  const double inv = 1.0 / ((1 - delta) * n);
  const double m_expect = std::ceil(64 * kappa * (3 * rd * (1 + inv) + inv) * sig / (eps * eps));
  const double T_expect = std::ceil(2 * std::sqrt(kappa) * std::log(4 * L * L * R * R / (eps * eps)));
  Caps big;
  big.max_queries = std::int64_t{1} << 40;
  const Schedule s = strongly_convex_defaults(L, mu, sig, delta, n, rd, eps, R, big);
  CHECK(s.params.m == static_cast<int>(m_expect));
  CHECK(s.params.m0 == static_cast<int>(m_expect));
  CHECK(s.params.T == static_cast<int>(T_expect));
  CHECK(s.params.m == 2240000);  // frozen
  CHECK(s.params.T == 120);      // frozen
  CHECK_FALSE(s.clamp.clamped);
  const Schedule capped = strongly_convex_defaults(L, mu, sig, delta, n, rd, eps, R);
  CHECK(capped.clamp.clamped);
  CHECK(capped.params.m0 + static_cast<std::int64_t>(capped.params.m) * capped.params.T <= 1'000'000);
  CHECK(capped.clamp.raw_m == doctest::Approx(m_expect));
}

TEST_CASE("non-convex defaults") {
  const Schedule z = nonconvex_defaults(2.0, 0.1, 10, 1.0, 0.0, 100, 1.0);
  CHECK(z.params.eta == doctest::Approx(1.0 / 48.0));
  CHECK(z.params.beta == doctest::Approx(0.5));
  CHECK(z.params.theta == doctest::Approx(0.5));
  CHECK(z.params.alpha == 1.0);
  // Independent evaluation of the step-size rule.
  const double L = 1, sig = 1, delta = 0.1, rd = 1, Delta = 1;
  const int n = 10, T = 10000, m = 1;
  const double inv = 1.0 / ((1 - delta) * n);
  const double num = Delta + sig / (L * (1 - delta) * n * m);
  const double den = T * (inv + rd * (1 + inv)) * L * sig / m;
  const double eta = std::min(std::sqrt(num / den), 1.0 / (24 * L));
  const Schedule s = nonconvex_defaults(L, delta, n, rd, sig, T, Delta, m);
  CHECK(s.params.eta == doctest::Approx(eta).epsilon(1e-14));
  CHECK(s.params.eta == doctest::Approx(0.009534625892455923).epsilon(1e-12));  // frozen
  CHECK(s.params.theta + s.params.beta == 1.0);
  CHECK(s.params.beta == doctest::Approx(1 - 12 * L * eta));
  CHECK(s.params.m0 == static_cast<int>(std::ceil(m / (L * L * eta * eta))));
}

TEST_CASE("restart schedule") {
  const RestartSchedule det = make_restart_schedule(1.0, 0.01, 0.0, 0.0, 10, 0.0, 1e-3, 1.0);
  CHECK(det.P == 1);
  CHECK(det.m_list == std::vector<int>{1});
  const RestartSchedule s = make_restart_schedule(1.0, 0.04, 0.01, 0.1, 10, 1.0, 0.05, 1.0, Caps{10'000'000});
  REQUIRE(s.P >= 2);
  const int tail = static_cast<int>(std::ceil(2 * std::sqrt(25.0) * std::log(8.0)));
  std::int64_t total = 0;
  for (int p = 0; p < s.P; ++p) {
    CHECK(s.m_list[static_cast<std::size_t>(p)] == (1 << p));
    if (p > 0) CHECK(s.T_list[static_cast<std::size_t>(p)] == tail);
    total += static_cast<std::int64_t>(s.m_list[static_cast<std::size_t>(p)]) * s.T_list[static_cast<std::size_t>(p)];
  }
  CHECK(s.total_queries() == total);
}

TEST_CASE("restarted byrd-nester: ledger and accuracy without Byzantine nodes") {
  Setup s(quadratic(10, 25.0, 6, 6, 0.0, 9), noise(0.01), rule(Rule::mean, 0.0));
  const double eps = 0.05;
  const RestartSchedule sched = make_restart_schedule(s.problem.L, s.problem.mu, 0.01, 0.0, 6, 0.0, eps,
                                                      s.problem.optimum->x.norm());
  QueryLedger ledger;
  s.env.ledger = &ledger;
  const RestartResult r = run_byrd_renester(s.env, Vector::Zero(10), sched);
  CHECK(r.queries == sched.total_queries());
  CHECK(ledger.count() == sched.total_queries());
  CHECK(full_gradient(s.problem, r.output).norm() <= eps);
}

TEST_CASE("inexact proximal point") {
  const ProxParams pp = make_prox_params(2.0, 3.0, 0.5);
  CHECK(pp.Gamma == static_cast<int>(std::ceil(32 * 2.0 * 3.0 / 0.25)));
  CHECK(make_prox_params(1.0, 1.0, 1e-3).Gamma == 10'000);
  CHECK(make_prox_params(1.0, 1.0, 1e-3).clamp.clamped);

  QuadraticFamily fam;
  fam.curvature = Vector::Constant(2, 1.0);
  fam.offsets.assign(4, Vector::Constant(2, 1.0));
  const Problem base = make_quadratic_problem(fam, 4, 0.0);
  const Vector center = Vector::Constant(2, -1.0);
  const Problem sur = make_prox_problem(base, center, base.L);
  CHECK(sur.L == doctest::Approx(3.0));
  CHECK(sur.mu == doctest::Approx(1.0));
  CHECK((full_gradient(sur, center) - full_gradient(base, center)).norm() == 0.0);
  const Vector z = Vector::Constant(2, 0.5);
  CHECK((full_gradient(sur, z) - (full_gradient(base, z) + 2.0 * base.L * (z - center))).norm() < 1e-15);

  // Gamma = 1: one surrogate solve lands near the closed-form surrogate minimizer.
  const Oracle oracle(noise(0.0));
  const RuleAggregator agg(rule(Rule::mean, 0.0));
  Environment env;
  env.problem = &base;
  env.oracle = &oracle;
  env.aggregator = &agg;
  ProxParams one = pp;
  one.Gamma = 1;
  one.prox_weight = base.L;
  ProxKnobs knobs;
  knobs.inner_eps = 1e-6;
  knobs.inner_R = 2.0;
  const ProxResult r = run_inexact_prox(env, Vector::Zero(2), one, knobs);
  // argmin 1/2 z^2 - z + (z - 0)^2 -> z = 1/3 per coordinate
  CHECK(r.chosen == 1);
  CHECK((r.centers.back() - Vector::Constant(2, 1.0 / 3.0)).norm() < 1e-5);
}

TEST_CASE("inexact prox on the wavy toy: stationarity improves with Gamma") {
  const Problem p = make_wavy_problem(2, 4, 4, 0.5, 0.25);
  const Oracle oracle(noise(0.0));
  const RuleAggregator agg(rule(Rule::mean, 0.0));
  Environment env;
  env.problem = &p;
  env.oracle = &oracle;
  env.aggregator = &agg;
  ProxKnobs knobs;
  knobs.inner_eps = 1e-4;
  knobs.inner_R = 1.0;
  double prev = std::numeric_limits<double>::infinity();
  const Vector x0 = Vector::Constant(2, 3.0);
  const double Delta = full_value(p, x0) + 10.0;
  for (int gamma : {2, 8, 32}) {
    ProxParams pp;
    pp.Gamma = gamma;
    pp.prox_weight = p.L;
    const ProxResult r = run_inexact_prox(env, x0, pp, knobs);
    double avg = 0;
    for (int k = 1; k <= gamma; ++k) avg += full_gradient(p, r.centers[static_cast<std::size_t>(k)]).squaredNorm() / gamma;
    CHECK(avg <= prev);
    CHECK(avg <= 16.0 * p.L * Delta / gamma);
    prev = avg;
  }
}
