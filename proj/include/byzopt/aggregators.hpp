#pragma once

// (delta_max, rho)-robust aggregation rules, their robustness coefficients,
// and an empirical checker for the deviation bound
//   ||w - wbar||^2 <= (rho delta / |H|) sum_{i in H} ||w_i - wbar||^2.

#include "byzopt/types.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace byzopt {

enum class Rule { mean, krum, median, trimmed_mean, faba, geometric_median, centered_clipping, ideal };

std::string_view to_string(Rule rule);
Rule parse_rule(std::string_view name);

struct WeiszfeldParams {
  double tolerance = 1e-8;   // stop when the iterate moves less than this (scaled by 1 + ||w||)
  int max_iterations = 200;
  double guard = 1e-12;      // snap to an input point closer than this
};

struct ClippingParams {
  enum class Threshold { adaptive, fixed } mode = Threshold::adaptive;
  double tau = 0.0;           // used when mode == fixed
};

struct AggregatorConfig {
  Rule rule = Rule::mean;
  double delta = 0.0;
  WeiszfeldParams weiszfeld{};
  ClippingParams clipping{};
};

/// Byzantine budget b = ceil(delta n) used for trimming, removal and Krum neighbourhoods.
int byzantine_budget(double delta, int n);

/// Largest tolerated Byzantine fraction (exclusive) for a rule.
double delta_max(Rule rule);

/// The rho*delta product for a rule. `honest` is |H| (only FABA and CC depend on it).
/// Mean is exact only without Byzantine inputs; it is assigned rho*delta = 0.
double robustness_coefficient(Rule rule, double delta, int honest);

/// Per-call information a rule may use. Simulator inputs are ordered honest first.
enum class Stream { init, gradient, momentum };

struct AggregationContext {
  std::uint32_t round = 0;
  Stream stream = Stream::gradient;
  int honest_count = 0;  // consumed only by Rule::ideal and by adversarial gadgets
};

/// Aggregation interface shared by the standard rules and the lower-bound gadgets.
class Aggregator {
 public:
  virtual ~Aggregator() = default;
  virtual Vector aggregate(std::span<const Vector> inputs, const AggregationContext& ctx) const = 0;
  virtual std::string name() const = 0;
};

/// Applies one of the standard rules. Deterministic and permutation invariant.
Vector aggregate(const AggregatorConfig& cfg, std::span<const Vector> inputs, const AggregationContext& ctx = {});

class RuleAggregator final : public Aggregator {
 public:
  explicit RuleAggregator(AggregatorConfig cfg);
  Vector aggregate(std::span<const Vector> inputs, const AggregationContext& ctx) const override;
  std::string name() const override { return std::string(to_string(cfg_.rule)); }
  const AggregatorConfig& config() const { return cfg_; }

 private:
  AggregatorConfig cfg_;
};

std::unique_ptr<Aggregator> make_aggregator(const AggregatorConfig& cfg);

// Individual rules, exposed for tests and benchmarks.
Vector krum(std::span<const Vector> inputs, int byzantine);
Vector faba(std::span<const Vector> inputs, int byzantine);
Vector geometric_median(std::span<const Vector> inputs, const WeiszfeldParams& params);

/// One centered-clipping pass: v + (1/n) sum_i (w_i - v) min(1, tau / ||w_i - v||).
Vector centered_clipping_step(const Vector& v, std::span<const Vector> inputs, double tau);

/// Clipping radius tau (not tau^2) from the cohort of the `honest` inputs nearest v:
/// tau^2 = ((1 - delta)/delta) sqrt((2/|H|) sum_cohort (||v - wbar'||^2 + ||w_i - wbar'||^2)).
double select_clipping_threshold(std::span<const Vector> inputs, const Vector& v, double delta, int honest);

/// Starting point used by centered clipping (coordinate-wise median).
Vector clipping_anchor(std::span<const Vector> inputs);

struct RobustnessCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  /// Centered clipping only: ||v - wbar||^2 <= (1/|H|) sum ||w_i - wbar||^2 at the anchor v.
  std::optional<bool> cc_precondition;
};

/// Evaluates both sides of the deviation bound with rho*delta from robustness_coefficient.
RobustnessCheck check_robustness(const AggregatorConfig& cfg, std::span<const Vector> honest,
                                 std::span<const Vector> byzantine);

/// Honest mean and (1/|H|) sum ||w_i - wbar||^2 of a set of vectors.
struct Spread {
  Vector mean;
  double mean_sq_dev = 0.0;
};
Spread honest_spread(std::span<const Vector> honest);

}  // namespace byzopt
