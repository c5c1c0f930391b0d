#include "byzopt/lowerbound.hpp"

#include "byzopt/kernels.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace byzopt::lowerbound {

namespace {

const double kSqrtE = std::sqrt(std::numbers::e);

Vector plain_mean(std::span<const Vector> xs) {
  Vector m = Vector::Zero(xs.front().size());
  for (const auto& v : xs) m += v;
  return m / static_cast<double>(xs.size());
}

double mean_sq_dev(std::span<const Vector> xs, const Vector& mean) {
  double s = 0.0;
  for (const auto& v : xs) s += (v - mean).squaredNorm();
  return s / static_cast<double>(xs.size());
}

void tally(std::mutex& mu, CertificateLog& log, double lhs, double rhs) {
  std::lock_guard lock(mu);
  ++log.calls;
  if (lhs <= rhs) ++log.held;
  const double ratio = rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  log.worst_ratio = std::max(log.worst_ratio, ratio);
}

}  // namespace

// ---- chain ----------------------------------------------------------------------

double psi(double a) {
  if (a <= 0.5) return 0.0;
  const double r = 2.0 * a - 1.0;
  return std::exp(1.0 - 1.0 / (r * r));
}

double psi_prime(double a) {
  if (a <= 0.5) return 0.0;
  const double r = 2.0 * a - 1.0;
  return psi(a) * 4.0 / (r * r * r);
}

double phi(double a) {
  // int_{-inf}^a exp(-t^2/2) dt = sqrt(pi/2) erfc(-a/sqrt 2); erfc keeps the left tail accurate.
  return kSqrtE * std::sqrt(std::numbers::pi / 2.0) * std::erfc(-a / std::numbers::sqrt2);
}

double phi_prime(double a) { return kSqrtE * std::exp(-0.5 * a * a); }

ChainInstance make_chain_instance_with_dim(Index d, double L, double eps, double sigma_sq) {
  require(d >= 1, "chain: d must be at least 1");
  require(L > 0.0 && eps > 0.0 && sigma_sq >= 0.0, "chain: need L > 0, eps > 0, sigma^2 >= 0");
  ChainInstance c;
  c.d = d;
  c.d_formula = static_cast<double>(d);
  c.L = L;
  c.eps = eps;
  c.sigma_sq = sigma_sq;
  c.nu = 152.0 / L * 2.0 * eps;
  c.p = 1.0 / (sigma_sq / (2116.0 * eps * eps) + 1.0);
  c.Delta = 7296.0 * eps * eps * static_cast<double>(d) / L;
  return c;
}

ChainInstance make_chain_instance(double L, double Delta, double eps, double sigma_sq, Index d_cap) {
  require(Delta > 0.0 && d_cap >= 1, "chain: need Delta > 0 and a positive cap");
  const double formula = std::floor(L * Delta / (7296.0 * eps * eps));
  const auto d = static_cast<Index>(std::clamp(formula, 1.0, static_cast<double>(d_cap)));
  ChainInstance c = make_chain_instance_with_dim(d, L, eps, sigma_sq);
  c.d_formula = formula;
  c.Delta = Delta;
  return c;
}

std::pair<double, Vector> chain_h(const Vector& u) {
  const Index d = u.size();
  require(d >= 1, "chain_h: empty input");
  Vector g = Vector::Zero(d);
  const double psi1 = psi(1.0);
  double h = -psi1 * phi(u[0]);
  g[0] = -psi1 * phi_prime(u[0]);
  for (Index j = 1; j < d; ++j) {
    const double a = u[j - 1], b = u[j];
    h += psi(-a) * phi(-b) - psi(a) * phi(b);
    g[j - 1] += -psi_prime(-a) * phi(-b) - psi_prime(a) * phi(b);
    g[j] += -psi(-a) * phi_prime(-b) - psi(a) * phi_prime(b);
  }
  return {h, g};
}

std::pair<double, Vector> chain_value_and_gradient(const ChainInstance& inst, const Vector& x) {
  require_same_dim(x, inst.d, "chain_value_and_gradient");
  auto [h, g] = chain_h(x / inst.nu);
  const double scale = inst.L * inst.nu / 152.0;
  return {scale * inst.nu * h, scale * g};
}

Index prog_half(const ChainInstance& inst, const Vector& x) {
  require_same_dim(x, inst.d, "prog_half");
  for (Index j = x.size(); j >= 1; --j)
    if (std::abs(x[j - 1] / inst.nu) > 0.5) return j;
  return 0;
}

Vector chain_masked_gradient(const ChainInstance& inst, const Vector& x, bool success) {
  Vector g = chain_value_and_gradient(inst, x).second;
  const Index prog = prog_half(inst, x);
  const double factor = success ? 1.0 / inst.p : 0.0;
  for (Index j = prog; j < g.size(); ++j) g[j] *= factor;  // 1-based coordinates prog+1..d
  return g;
}

Vector chain_stochastic_gradient(const ChainInstance& inst, const Vector& x, KeyedStream& rng) {
  return chain_masked_gradient(inst, x, rng.bernoulli(inst.p));
}

double ChainLoss::value(const Vector& x) const { return chain_value_and_gradient(inst_, x).first; }
Vector ChainLoss::gradient(const Vector& x) const { return chain_value_and_gradient(inst_, x).second; }
Vector ChainLoss::masked_gradient(const Vector& x, bool success, double p) const {
  require(p == inst_.p, "chain: oracle success probability differs from the instance");
  return chain_masked_gradient(inst_, x, success);
}

Problem make_chain_problem(const ChainInstance& inst, int n, double delta) {
  require(n >= 1, "chain problem: need n >= 1");
  Problem p;
  p.d = inst.d;
  p.n = n;
  p.delta = delta;
  auto loss = std::make_shared<ChainLoss>(inst);
  p.losses.assign(static_cast<std::size_t>(n), loss);
  for (int i = 0; i < n; ++i) p.honest.push_back(i);
  p.L = inst.L;
  p.mu = 0.0;
  p.zeta_sq = 0.0;
  p.validate();
  return p;
}

Vector FrontierZeroingAggregator::aggregate(std::span<const Vector> inputs, const AggregationContext&) const {
  require(!inputs.empty(), "frontier aggregator: empty input");
  const Vector mean = plain_mean(inputs);
  Index frontier = -1;
  for (const auto& v : inputs)
    for (Index j = v.size() - 1; j > frontier; --j)
      if (v[j] != 0.0) {
        frontier = j;
        break;
      }
  const double rhs = rho_delta_ * mean_sq_dev(inputs, mean);
  if (frontier < 0) {
    tally(mu_, log_, 0.0, rhs);
    return mean;
  }
  const double lhs = mean[frontier] * mean[frontier];
  if (lhs <= rhs) {
    Vector out = mean;
    out[frontier] = 0.0;
    ++zeroed_;
    tally(mu_, log_, lhs, rhs);
    return out;
  }
  tally(mu_, log_, 0.0, rhs);
  return mean;
}

CertificateLog FrontierZeroingAggregator::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

// ---- stuck aggregator -----------------------------------------------------------

Vector ZeroAggregator::aggregate(std::span<const Vector> inputs, const AggregationContext&) const {
  require(!inputs.empty(), "zero aggregator: empty input");
  const Vector mean = plain_mean(inputs);
  tally(mu_, log_, mean.squaredNorm(), rho_delta_ * mean_sq_dev(inputs, mean));
  return Vector::Zero(inputs.front().size());
}

CertificateLog ZeroAggregator::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

int lemma6_escape_threshold(double /*L*/, double eps, double sigma_sq, int n, double /*delta*/, double rho_delta) {
  require(eps > 0.0 && sigma_sq >= 0.0 && n >= 1 && rho_delta >= 0.0, "lemma6 threshold: invalid inputs");
  const double scale = sigma_sq / (4.0 * eps * eps * n);
  const double thr = rho_delta * (n - 1) * scale - scale;
  if (thr < 1.0) return 1;
  // Smallest integer strictly above thr; a threshold that is an integer up to rounding counts as integer.
  const double r = std::round(thr);
  if (std::abs(thr - r) <= 1e-9 * thr) return static_cast<int>(r) + 1;
  return static_cast<int>(std::floor(thr)) + 1;
}

std::vector<Lemma6Sides> lemma6_monte_carlo(double eps, double sigma_sq, int n, double rho_delta, int max_m,
                                            int draws, std::uint64_t seed) {
  require(n >= 2 && max_m >= 1 && draws >= 1, "lemma6 Monte-Carlo: invalid sizes");
  constexpr int kChunks = 64;
  const auto M = static_cast<std::size_t>(max_m);
  std::vector<std::vector<double>> lhs(kChunks, std::vector<double>(M, 0.0));
  std::vector<std::vector<double>> rhs(kChunks, std::vector<double>(M, 0.0));
  const double sd = std::sqrt(sigma_sq / 4.0);
  kernels::for_each_index(kChunks, [&](Index c) {
    std::vector<double> sum(static_cast<std::size_t>(n));
    std::vector<KeyedStream> rngs;
    for (int r = static_cast<int>(c); r < draws; r += kChunks) {
      rngs.clear();
      for (int i = 0; i < n; ++i)
        rngs.emplace_back(seed, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(r), 0x6u);
      std::fill(sum.begin(), sum.end(), 0.0);
      for (std::size_t m = 1; m <= M; ++m) {
        double wbar = 0.0;
        for (int i = 0; i < n; ++i) {
          const double xi = eps + sd * rngs[static_cast<std::size_t>(i)].normal();
          sum[static_cast<std::size_t>(i)] += 2.0 * xi;  // grad F(0, xi) = 2 xi
          wbar += sum[static_cast<std::size_t>(i)] / static_cast<double>(m);
        }
        wbar /= n;
        double dev = 0.0;
        for (int i = 0; i < n; ++i) {
          const double w = sum[static_cast<std::size_t>(i)] / static_cast<double>(m);
          dev += (w - wbar) * (w - wbar);
        }
        lhs[static_cast<std::size_t>(c)][m - 1] += wbar * wbar;
        rhs[static_cast<std::size_t>(c)][m - 1] += rho_delta / n * dev;
      }
    }
  });
  std::vector<Lemma6Sides> out(M);
  for (std::size_t m = 0; m < M; ++m) {
    out[m].m = static_cast<int>(m + 1);
    for (int c = 0; c < kChunks; ++c) {
      out[m].lhs += lhs[static_cast<std::size_t>(c)][m];
      out[m].rhs += rhs[static_cast<std::size_t>(c)][m];
    }
    out[m].lhs /= draws;
    out[m].rhs /= draws;
  }
  return out;
}

std::optional<int> lemma6_empirical_flip(const std::vector<Lemma6Sides>& sides) {
  for (const auto& s : sides)
    if (s.lhs > s.rhs) return s.m;
  return std::nullopt;
}

// ---- indistinguishable pair -----------------------------------------------------

Lemma1Aggregator::Lemma1Aggregator(Lemma1Params params, bool second) : params_(params), second_(second) {
  require(params_.n >= 2 && params_.grid > 0.0, "lemma1 aggregator: invalid parameters");
  shift_ = params_.alpha_min * std::sqrt(params_.rho) * std::sqrt(params_.delta) * params_.zeta;
  const double frac = static_cast<double>(lemma1_shifted_count(params_.n, params_.delta)) / params_.n;
  const double b = params_.zeta / std::sqrt(params_.delta);
  unit_spread_ = frac * (1.0 - frac) * b * b;
}

Vector Lemma1Aggregator::aggregate(std::span<const Vector> inputs, const AggregationContext&) const {
  require(!inputs.empty(), "lemma1 aggregator: empty input");
  const Vector wbar = plain_mean(inputs);
  const double spread = mean_sq_dev(inputs, wbar);
  Vector out = wbar;
  if (unit_spread_ > 0.0 && shift_ > 0.0) {
    const double a = std::sqrt(spread / unit_spread_);
    const double half = 0.5 * a * shift_;
    for (Index j = 0; j < out.size(); ++j) {
      const double v = second_ ? wbar[j] - half : wbar[j] + half;
      out[j] = std::round(v / params_.grid) * params_.grid;
    }
  }
  tally(mu_, log_, (out - wbar).squaredNorm(), params_.rho * params_.delta * spread);
  return out;
}

CertificateLog Lemma1Aggregator::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

double Lemma1Gadget::bound() const {
  return params.alpha_min / 2.0 * std::sqrt(params.rho) * std::sqrt(params.delta) * params.zeta;
}

Lemma1Gadget make_lemma1_gadget(const Lemma1Params& params) {
  Lemma1Gadget g;
  g.params = params;
  const int n = params.n;
  g.first = make_quadratic_problem(
      lemma1_family(false, n, params.delta, params.zeta, params.rho, params.alpha_min), n, params.delta);
  g.second = make_quadratic_problem(
      lemma1_family(true, n, params.delta, params.zeta, params.rho, params.alpha_min), n, params.delta);
  g.agg_first = std::make_shared<Lemma1Aggregator>(params, false);
  g.agg_second = std::make_shared<Lemma1Aggregator>(params, true);
  return g;
}

TrajectoryRunner method_runner(const MethodConfig& cfg) {
  return [cfg](const Environment& env) {
    std::vector<Vector> xs;
    RunOptions opts;
    opts.observer = [&](const RoundInfo& info) { xs.push_back(info.state->x); };
    run_method(cfg, env, Vector::Zero(env.problem->d), opts);
    return xs;
  };
}

Lemma1Report lemma1_floor_check(const Lemma1Params& params, const TrajectoryRunner& runner, std::uint64_t seed,
                                bool swap) {
  const Lemma1Gadget g = make_lemma1_gadget(params);
  const Oracle oracle(OracleSpec{0.0, NoiseKind::gaussian_iid, seed, 1.0});
  auto run = [&](const Problem& p, const Aggregator& agg) {
    Environment env;
    env.problem = &p;
    env.oracle = &oracle;
    env.aggregator = &agg;
    env.seed = seed;
    return runner(env);
  };
  std::vector<Vector> t1, t2;
  if (swap) {
    t2 = run(g.second, *g.agg_second);
    t1 = run(g.first, *g.agg_first);
  } else {
    t1 = run(g.first, *g.agg_first);
    t2 = run(g.second, *g.agg_second);
  }
  Lemma1Report rep;
  rep.bound = g.bound();
  rep.identical = t1.size() == t2.size();
  const std::size_t len = std::min(t1.size(), t2.size());
  for (std::size_t t = 0; t < len; ++t) {
    if (!(t1[t].size() == t2[t].size() && (t1[t].array() == t2[t].array()).all())) {
      rep.identical = false;
      rep.first_divergent_round = t;
      break;
    }
  }
  if (!rep.first_divergent_round && t1.size() != t2.size()) rep.first_divergent_round = len;
  rep.best_grad_norm_p1 = rep.best_grad_norm_p2 = rep.best_floor = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < t1.size(); ++t) {
    const double g1 = full_gradient(g.first, t1[t]).norm();
    const double g2 = full_gradient(g.second, t < t2.size() ? t2[t] : t1[t]).norm();
    rep.best_grad_norm_p1 = std::min(rep.best_grad_norm_p1, g1);
    rep.best_grad_norm_p2 = std::min(rep.best_grad_norm_p2, g2);
    rep.best_floor = std::min(rep.best_floor, std::max(g1, g2));
    if (t + 1 == t1.size()) rep.final_floor = std::max(g1, g2);
  }
  // Relative slack only absorbs the rounding of the gradient evaluation itself.
  rep.floor_holds = rep.best_floor >= rep.bound * (1.0 - 1e-12);
  rep.certificates_first = g.agg_first->log();
  rep.certificates_second = g.agg_second->log();
  return rep;
}

}  // namespace byzopt::lowerbound
