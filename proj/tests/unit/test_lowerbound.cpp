#include "byzopt/lowerbound.hpp"

#include "doctest.h"

#include <cmath>
#include <numbers>

using namespace byzopt;
namespace lb = byzopt::lowerbound;

namespace {

// Adaptive Simpson quadrature, used as an independent check of Phi.
double simpson(const std::function<double(double)>& f, double a, double b, double eps, int depth) {
  const double c = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fc = f(c);
  const double whole = (b - a) / 6.0 * (fa + 4 * fc + fb);
  std::function<double(double, double, double, double, double, double, double, int)> rec =
      [&](double a0, double b0, double fa0, double fb0, double fc0, double w, double e, int dd) {
        const double m = 0.5 * (a0 + b0);
        const double l = 0.5 * (a0 + m), r = 0.5 * (m + b0);
        const double fl = f(l), fr = f(r);
        const double left = (m - a0) / 6.0 * (fa0 + 4 * fl + fc0), right = (b0 - m) / 6.0 * (fc0 + 4 * fr + fb0);
        if (dd <= 0 || std::abs(left + right - w) <= 15 * e) return left + right + (left + right - w) / 15.0;
        return rec(a0, m, fa0, fc0, fl, left, e / 2, dd - 1) + rec(m, b0, fc0, fb0, fr, right, e / 2, dd - 1);
      };
  return rec(a, b, fa, fb, fc, whole, eps, depth);
}

double phi_quadrature(double a) {
  auto f = [](double t) { return std::sqrt(std::numbers::e) * std::exp(-0.5 * t * t); };
  return simpson(f, -40.0, a, 1e-13, 60);
}

Vector random_point(Index d, std::uint64_t seed, double scale) {
  KeyedStream rng(seed, 0, 0, 0);
  Vector x(d);
  for (Index j = 0; j < d; ++j) x[j] = scale * rng.normal();
  return x;
}

}  // namespace

TEST_CASE("psi values") {
  CHECK(lb::psi(0.5) == 0.0);
  CHECK(lb::psi(-3.0) == 0.0);
  CHECK(lb::psi(1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(lb::psi(0.75) == doctest::Approx(std::exp(-3.0)).epsilon(1e-14));
  CHECK(lb::psi(0.75) == doctest::Approx(0.049787068367863944).epsilon(1e-12));
  const double h = 1e-6;
  for (double a : {0.6, 0.9, 1.5})
    CHECK(lb::psi_prime(a) == doctest::Approx((lb::psi(a + h) - lb::psi(a - h)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("phi matches quadrature and its symmetry") {
  CHECK(lb::phi(-60.0) == doctest::Approx(0.0));
  CHECK(lb::phi(0.0) == doctest::Approx(2.0663656770612464).epsilon(1e-13));
  for (double a : {-3.0, -0.5, 0.0, 1.0, 2.5}) CHECK(lb::phi(a) == doctest::Approx(phi_quadrature(a)).epsilon(1e-10));
  for (double a : {0.5, 1.0, 2.0})
    CHECK(0.5 * (lb::phi(a) + lb::phi(-a)) == doctest::Approx(lb::phi(0.0)).epsilon(1e-14));
}

TEST_CASE("chain instance constants") {
  const auto inst = lb::make_chain_instance_with_dim(32, 1.0, 0.05, 1.0);
  CHECK(inst.nu == doctest::Approx(15.2));
  CHECK(1.0 / inst.p == doctest::Approx(1.0 / (2116.0 * 0.0025) + 1.0));
  const auto formula = lb::make_chain_instance(1.0, 7296.0 * 0.01 * 10.5, 0.1, 0.0);
  CHECK(formula.d == 10);
  CHECK(lb::make_chain_instance(1.0, 1e9, 0.1, 0.0).d == 64);
}

TEST_CASE("chain gradient: only the first coordinate is live at the origin") {
  const auto inst = lb::make_chain_instance_with_dim(10, 1.0, 0.05, 0.0);
  const Vector g = lb::chain_value_and_gradient(inst, Vector::Zero(10)).second;
  CHECK(g[0] != 0.0);
  for (Index j = 1; j < 10; ++j) CHECK(g[j] == 0.0);
}

TEST_CASE("chain gradient matches central differences") {
  const auto inst = lb::make_chain_instance_with_dim(10, 1.0, 0.05, 0.0);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Vector x = random_point(10, 100 + s, inst.nu);
    const auto [f, g] = lb::chain_value_and_gradient(inst, x);
    Vector fd(10);
    const double h = 1e-6 * inst.nu;
    for (Index j = 0; j < 10; ++j) {
      Vector a = x, b = x;
      a[j] += h;
      b[j] -= h;
      fd[j] = (lb::chain_value_and_gradient(inst, a).first - lb::chain_value_and_gradient(inst, b).first) / (2 * h);
    }
    CHECK((g - fd).norm() <= 1e-4 * std::max(g.norm(), 1e-3));
  }
}

TEST_CASE("prog_half examples") {
  auto inst = lb::make_chain_instance_with_dim(4, 1.0, 0.05, 0.0);
  CHECK(lb::prog_half(inst, Vector::Zero(4)) == 0);
  inst.nu = 1.0;
  Vector x(4);
  x << 1.0, 0.6, 0.1, 0.0;
  CHECK(lb::prog_half(inst, x) == 2);
  inst.nu = 2.0;
  Vector y = Vector::Zero(4);
  y[0] = 0.9;
  CHECK(lb::prog_half(inst, y) == 0);
}

TEST_CASE("masked gradient leaves discovered coordinates exact") {
  const auto inst = lb::make_chain_instance_with_dim(8, 1.0, 0.05, 1.0);
  Vector x = Vector::Zero(8);
  x[0] = 0.9 * inst.nu;
  x[1] = -0.7 * inst.nu;
  x[2] = 0.2 * inst.nu;
  const Vector exact = lb::chain_value_and_gradient(inst, x).second;
  const Index prog = lb::prog_half(inst, x);
  REQUIRE(prog == 2);
  for (bool ok : {false, true}) {
    const Vector g = lb::chain_masked_gradient(inst, x, ok);
    for (Index j = 0; j < prog; ++j) CHECK(g[j] == exact[j]);
    for (Index j = prog; j < 8; ++j) CHECK(g[j] == (ok ? exact[j] / inst.p : 0.0));
  }
  const auto sure = lb::make_chain_instance_with_dim(8, 1.0, 0.05, 0.0);
  KeyedStream rng(1, 2, 3, 4);
  CHECK(sure.p == 1.0);
  CHECK((lb::chain_stochastic_gradient(sure, x, rng).array() == lb::chain_value_and_gradient(sure, x).second.array()).all());
}

TEST_CASE("chain oracle is unbiased per coordinate") {
  const auto inst = lb::make_chain_instance_with_dim(8, 1.0, 0.05, 3.0);
  Vector x = Vector::Zero(8);
  x[0] = 0.8 * inst.nu;
  x[1] = 0.3 * inst.nu;
  const Vector exact = lb::chain_value_and_gradient(inst, x).second;
  const int N = 10000;
  Vector sum = Vector::Zero(8), sq = Vector::Zero(8);
  for (int k = 0; k < N; ++k) {
    KeyedStream rng(9, static_cast<std::uint32_t>(k), 0, 0);
    const Vector g = lb::chain_stochastic_gradient(inst, x, rng);
    sum += g;
    sq += g.cwiseAbs2();
  }
  for (Index j = 0; j < 8; ++j) {
    const double mean = sum[j] / N, var = sq[j] / N - mean * mean;
    CHECK(std::abs(mean - exact[j]) <= 4.0 * std::sqrt(std::max(var, 0.0) / N) + 1e-15);
  }
}

TEST_CASE("lemma6 threshold arithmetic") {
  CHECK(lb::lemma6_escape_threshold(1.0, 0.5, 4.0, 9, 0.2, 8.0) == 29);
  CHECK(lb::lemma6_escape_threshold(1.0, 0.5, 4.0, 9, 0.2, 0.0) == 1);
  // independent: smallest integer strictly above rho_delta (n-1) s / (4 eps^2 n) - s / (4 eps^2 n)
  const double thr = 3.0 * 9 * 2.0 / (4 * 0.01 * 10) - 2.0 / (4 * 0.01 * 10);
  CHECK(lb::lemma6_escape_threshold(1.0, 0.1, 2.0, 10, 0.2, 3.0) == static_cast<int>(std::floor(thr)) + 1);
}

TEST_CASE("zero aggregator keeps dsgd stuck at the start point") {
  const Problem p = make_quadratic_problem(lemma6_family(9, 1.0, 0.5), 9, 0.0);
  const Oracle oracle(OracleSpec{4.0, NoiseKind::gaussian_iid, 3, 1.0});
  const lb::ZeroAggregator zero(8.0);
  Environment env;
  env.problem = &p;
  env.oracle = &oracle;
  env.aggregator = &zero;
  OptimizerState st = OptimizerState::at(Vector::Constant(1, 0.0));
  for (int t = 0; t < 50; ++t) dsgd_step(st, env, 0.5, 4);
  CHECK(st.x[0] == 0.0);
  CHECK(full_gradient(p, st.x).norm() == doctest::Approx(1.0));  // 2 eps
  CHECK(zero.log().calls == 50);
}

TEST_CASE("lemma6 Monte-Carlo sides are chunk-deterministic") {
  const auto a = lb::lemma6_monte_carlo(0.5, 4.0, 9, 8.0, 5, 2000, 4);
  const auto b = lb::lemma6_monte_carlo(0.5, 4.0, 9, 8.0, 5, 2000, 4);
  for (std::size_t m = 0; m < a.size(); ++m) {
    CHECK(a[m].lhs == b[m].lhs);
    CHECK(a[m].rhs == b[m].rhs);
  }
  // E[wbar^2] = (2 eps)^2 + sigma^2 / (n m); m = 1.
  CHECK(a[0].lhs == doctest::Approx(1.0 + 4.0 / 9.0).epsilon(0.05));
}

TEST_CASE("frontier aggregator only zeroes when the certificate allows it") {
  const lb::FrontierZeroingAggregator loose(1e6), tight(0.0);
  std::vector<Vector> in;
  for (int i = 0; i < 4; ++i) {
    Vector v = Vector::Zero(5);
    v[0] = 1.0 + i;
    v[2] = 0.1 * i;
    in.push_back(v);
  }
  const Vector a = loose.aggregate(in, {});
  CHECK(a[2] == 0.0);
  CHECK(loose.zeroed() == 1);
  const Vector b = tight.aggregate(in, {});
  CHECK(b[2] != 0.0);
  CHECK(tight.zeroed() == 0);
  CHECK(tight.log().held == tight.log().calls);
}

TEST_CASE("lemma1 gadget: identical trajectories and floor for each method") {
  lb::Lemma1Params params;
  MethodConfig dsgd{Method::dsgd, {}, 0.9};
  dsgd.params.eta = 0.5;
  dsgd.params.T = 60;
  MethodConfig dsgdm = dsgd;
  dsgdm.method = Method::dsgdm;
  MethodConfig bn{Method::byrd_nester, {0.5, 0.7, 0.3, 0.5, 1, 1, 60, 1.0}, 0.9};
  for (const auto& mc : {dsgd, dsgdm, bn}) {
    const auto rep = lb::lemma1_floor_check(params, lb::method_runner(mc), 5);
    CHECK(rep.identical);
    CHECK(rep.floor_holds);
    CHECK(rep.bound == doctest::Approx(0.5));
    CHECK(rep.certificates_first.held == rep.certificates_first.calls);
    CHECK(rep.certificates_second.held == rep.certificates_second.calls);
    const auto swapped = lb::lemma1_floor_check(params, lb::method_runner(mc), 5, true);
    CHECK(swapped.best_floor == rep.best_floor);
    CHECK(swapped.identical);
  }
}

TEST_CASE("lemma1 gadget with zeta = 0 collapses to one problem with no floor") {
  lb::Lemma1Params params;
  params.zeta = 0.0;
  MethodConfig dsgd{Method::dsgd, {}, 0.9};
  dsgd.params.eta = 0.5;
  dsgd.params.T = 80;
  const auto rep = lb::lemma1_floor_check(params, lb::method_runner(dsgd), 5);
  CHECK(rep.identical);
  CHECK(rep.bound == 0.0);
  CHECK(rep.best_floor == 0.0);
}
