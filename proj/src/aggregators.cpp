#include "byzopt/aggregators.hpp"

#include "byzopt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace byzopt {

namespace {

void check_inputs(std::span<const Vector> inputs) {
  require(!inputs.empty(), "aggregate: empty input");
  const Index d = inputs.front().size();
  for (const auto& v : inputs) require_same_dim(v, d, "aggregate");
}

// Lexicographic order of the inputs; rules whose arithmetic depends on
// summation order run on this order so the output is permutation invariant.
std::vector<Vector> canonical(std::span<const Vector> inputs) {
  std::vector<Vector> out(inputs.begin(), inputs.end());
  std::stable_sort(out.begin(), out.end(), [](const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  return out;
}

}  // namespace

std::string_view to_string(Rule rule) {
  switch (rule) {
    case Rule::mean: return "mean";
    case Rule::krum: return "krum";
    case Rule::median: return "median";
    case Rule::trimmed_mean: return "trimmed_mean";
    case Rule::faba: return "faba";
    case Rule::geometric_median: return "geometric_median";
    case Rule::centered_clipping: return "centered_clipping";
    case Rule::ideal: return "ideal";
  }
  return "unknown";
}

Rule parse_rule(std::string_view name) {
  for (Rule r : {Rule::mean, Rule::krum, Rule::median, Rule::trimmed_mean, Rule::faba, Rule::geometric_median,
                 Rule::centered_clipping, Rule::ideal}) {
    if (to_string(r) == name) return r;
  }
  if (name == "med") return Rule::median;
  if (name == "tm") return Rule::trimmed_mean;
  if (name == "gm") return Rule::geometric_median;
  if (name == "cc") return Rule::centered_clipping;
  throw InvalidArgument("unknown aggregator rule '" + std::string(name) + "'");
}

int byzantine_budget(double delta, int n) {
  require(delta >= 0.0 && n >= 1, "byzantine budget: need delta >= 0 and n >= 1");
  return static_cast<int>(std::ceil(delta * n - 1e-9));
}

double delta_max(Rule rule) {
  switch (rule) {
    case Rule::faba: return 1.0 / 3.0;
    case Rule::mean:
    case Rule::ideal: return 0.5;
    default: return 0.5;
  }
}

double robustness_coefficient(Rule rule, double delta, int honest) {
  require(delta >= 0.0, "robustness coefficient: delta must be nonnegative");
  if (rule != Rule::mean && rule != Rule::ideal && !(delta < delta_max(rule))) {
    throw InvalidArgument(std::string(to_string(rule)) + ": delta " + std::to_string(delta) +
                          " exceeds tolerance delta_max = " + std::to_string(delta_max(rule)));
  }
  const double r = delta / (1.0 - 2.0 * delta);
  switch (rule) {
    case Rule::mean:
    case Rule::ideal: return 0.0;
    case Rule::krum: return 6.0 + 6.0 * r;
    case Rule::median:
    case Rule::geometric_median: return 4.0 * (1.0 + r) * (1.0 + r);
    case Rule::trimmed_mean: return 6.0 * r * (1.0 + r);
    case Rule::faba: return 2.0 * delta * honest / (1.0 - 3.0 * delta);
    case Rule::centered_clipping: return 18.0 * std::sqrt(2.0) * delta * std::sqrt(static_cast<double>(honest));
  }
  return 0.0;
}

// ---- rules ---------------------------------------------------------------

Vector krum(std::span<const Vector> inputs, int byzantine) {
  check_inputs(inputs);
  const auto n = static_cast<int>(inputs.size());
  if (n == 1) return inputs.front();
  const int neighbours = std::max(1, n - byzantine - 2);
  const Matrix dist = kernels::pairwise_sq_distances(inputs);
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<double> row;
  for (int i = 0; i < n; ++i) {
    row.clear();
    for (int k = 0; k < n; ++k)
      if (k != i) row.push_back(dist(i, k));
    const int take = std::min<int>(neighbours, static_cast<int>(row.size()));
    std::partial_sort(row.begin(), row.begin() + take, row.end());
    double score = 0.0;
    for (int k = 0; k < take; ++k) score += row[static_cast<std::size_t>(k)];
    if (score < best_score) {
      best_score = score;
      best = i;
    }
  }
  return inputs[static_cast<std::size_t>(best)];
}

Vector faba(std::span<const Vector> inputs, int byzantine) {
  check_inputs(inputs);
  require(byzantine >= 0 && static_cast<std::size_t>(byzantine) < inputs.size(), "faba: removal count too large");
  std::vector<Vector> kept = canonical(inputs);
  for (int r = 0; r < byzantine; ++r) {
    const Vector mean = kernels::pivot_mean(kept);
    std::size_t worst = 0;
    double worst_dist = -1.0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const double dd = (kept[i] - mean).squaredNorm();
      if (dd > worst_dist) {
        worst_dist = dd;
        worst = i;
      }
    }
    kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(worst));
  }
  return kernels::pivot_mean(kept);
}

Vector geometric_median(std::span<const Vector> inputs, const WeiszfeldParams& params) {
  check_inputs(inputs);
  const std::vector<Vector> pts = canonical(inputs);
  Vector z = kernels::coordinate_median(pts);
  std::vector<double> inv(pts.size());
  for (int it = 0; it < params.max_iterations; ++it) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double dist = (pts[i] - z).norm();
      if (dist <= params.guard * (1.0 + pts[i].norm())) return pts[i];
      inv[i] = 1.0 / dist;
      total += inv[i];
    }
    Vector next = Vector::Zero(z.size());
    for (std::size_t i = 0; i < pts.size(); ++i) next += inv[i] * pts[i];
    next /= total;
    const double moved = (next - z).norm();
    z = std::move(next);
    if (moved <= params.tolerance * (1.0 + z.norm())) break;
  }
  for (const auto& p : pts)
    if ((p - z).norm() <= params.guard * (1.0 + p.norm())) return p;
  return z;
}

Vector centered_clipping_step(const Vector& v, std::span<const Vector> inputs, double tau) {
  check_inputs(inputs);
  require_same_dim(v, inputs.front().size(), "centered clipping anchor");
  require(tau >= 0.0, "centered clipping: tau must be nonnegative");
  Vector acc = Vector::Zero(v.size());
  for (const auto& w : inputs) {
    const Vector diff = w - v;
    const double norm = diff.norm();
    if (norm == 0.0) continue;
    const double scale = std::min(1.0, tau / norm);
    acc += scale * diff;
  }
  return v + acc / static_cast<double>(inputs.size());
}

Vector clipping_anchor(std::span<const Vector> inputs) { return kernels::coordinate_median(inputs); }

double select_clipping_threshold(std::span<const Vector> inputs, const Vector& v, double delta, int honest) {
  check_inputs(inputs);
  require(delta > 0.0, "clipping threshold: delta must be positive");
  require(honest >= 1 && static_cast<std::size_t>(honest) <= inputs.size(), "clipping threshold: bad cohort size");
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < inputs.size(); ++i) order.emplace_back((inputs[i] - v).squaredNorm(), i);
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Vector> cohort;
  for (int k = 0; k < honest; ++k) cohort.push_back(inputs[order[static_cast<std::size_t>(k)].second]);
  const Vector wbar = kernels::pivot_mean(canonical(cohort));
  const double anchor_dev = (v - wbar).squaredNorm();
  double sum = 0.0;
  for (const auto& w : cohort) sum += anchor_dev + (w - wbar).squaredNorm();
  const double tau_sq = (1.0 - delta) / delta * std::sqrt(2.0 / honest * sum);
  return std::sqrt(tau_sq);
}

namespace {

Vector centered_clipping(const AggregatorConfig& cfg, std::span<const Vector> inputs) {
  const std::vector<Vector> pts = canonical(inputs);
  const Vector v = clipping_anchor(pts);
  const auto n = static_cast<int>(pts.size());
  double tau = cfg.clipping.tau;
  if (cfg.clipping.mode == ClippingParams::Threshold::adaptive) {
    if (cfg.delta <= 0.0) return kernels::pivot_mean(pts);
    tau = select_clipping_threshold(pts, v, cfg.delta, n - byzantine_budget(cfg.delta, n));
  }
  return centered_clipping_step(v, pts, tau);
}

}  // namespace

Vector aggregate(const AggregatorConfig& cfg, std::span<const Vector> inputs, const AggregationContext& ctx) {
  check_inputs(inputs);
  const auto n = static_cast<int>(inputs.size());
  const int b = byzantine_budget(cfg.delta, n);
  switch (cfg.rule) {
    case Rule::mean: return kernels::pivot_mean(canonical(inputs));
    case Rule::ideal: {
      require(ctx.honest_count >= 1 && ctx.honest_count <= n, "ideal aggregator needs the honest count");
      return kernels::pivot_mean(canonical(inputs.first(static_cast<std::size_t>(ctx.honest_count))));
    }
    case Rule::krum: return krum(inputs, b);
    case Rule::median: return kernels::coordinate_median(inputs);
    case Rule::trimmed_mean: {
      require(2 * b < n, "trimmed_mean: delta too large for input count");
      return kernels::trimmed_mean(inputs, b);
    }
    case Rule::faba: return faba(inputs, b);
    case Rule::geometric_median: return geometric_median(inputs, cfg.weiszfeld);
    case Rule::centered_clipping: return centered_clipping(cfg, inputs);
  }
  throw InvalidArgument("unknown aggregator rule");
}

RuleAggregator::RuleAggregator(AggregatorConfig cfg) : cfg_(cfg) {
  require(cfg_.delta >= 0.0 && cfg_.delta < 0.5, "aggregator: delta must lie in [0, 0.5)");
  if (cfg_.rule != Rule::mean && cfg_.rule != Rule::ideal && cfg_.delta >= delta_max(cfg_.rule)) {
    throw InvalidArgument(std::string(to_string(cfg_.rule)) + ": delta exceeds tolerance " +
                          std::to_string(delta_max(cfg_.rule)));
  }
}

Vector RuleAggregator::aggregate(std::span<const Vector> inputs, const AggregationContext& ctx) const {
  return byzopt::aggregate(cfg_, inputs, ctx);
}

std::unique_ptr<Aggregator> make_aggregator(const AggregatorConfig& cfg) { return std::make_unique<RuleAggregator>(cfg); }

Spread honest_spread(std::span<const Vector> honest) {
  require(!honest.empty(), "honest set is empty");
  Spread s;
  s.mean = Vector::Zero(honest.front().size());
  for (const auto& w : honest) s.mean += w;
  s.mean /= static_cast<double>(honest.size());
  for (const auto& w : honest) s.mean_sq_dev += (w - s.mean).squaredNorm();
  s.mean_sq_dev /= static_cast<double>(honest.size());
  return s;
}

RobustnessCheck check_robustness(const AggregatorConfig& cfg, std::span<const Vector> honest,
                                 std::span<const Vector> byzantine) {
  require(byzantine.size() < honest.size(), "check_robustness: need |B| < |H|");
  std::vector<Vector> all(honest.begin(), honest.end());
  all.insert(all.end(), byzantine.begin(), byzantine.end());
  AggregationContext ctx;
  ctx.honest_count = static_cast<int>(honest.size());
  const Vector w = aggregate(cfg, all, ctx);
  const Spread s = honest_spread(honest);
  const double rho_delta = robustness_coefficient(cfg.rule, cfg.delta, static_cast<int>(honest.size()));
  RobustnessCheck out;
  out.lhs = (w - s.mean).squaredNorm();
  out.rhs = rho_delta * s.mean_sq_dev;
  out.holds = out.lhs <= out.rhs;
  if (cfg.rule == Rule::centered_clipping) {
    const Vector v = clipping_anchor(all);
    out.cc_precondition = (v - s.mean).squaredNorm() <= s.mean_sq_dev;
  }
  return out;
}

}  // namespace byzopt
