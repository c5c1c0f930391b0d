#pragma once

// Omniscient Byzantine message crafting. Each attack sees every honest
// message of the current stream and returns what the Byzantine nodes upload.

#include "byzopt/aggregators.hpp"
#include "byzopt/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace byzopt {

enum class AttackKind {
  none,  // Byzantine nodes stay silent; the aggregator only sees honest messages
  gaussian,
  sign_flip,
  label_flip,
  sample_duplicate,
  zero_value,
  isolation,
  alie,
  ipm,
  bit_flip,
};

std::string_view to_string(AttackKind kind);
AttackKind parse_attack(std::string_view name);

/// The nine attacks, in a fixed order.
std::span<const AttackKind> all_attacks();

struct AttackConfig {
  AttackKind kind = AttackKind::none;
  double gaussian_sigma = 200.0;      // per-coordinate std of the gaussian attack
  double sign_flip_scale = 1.0;       // c in -c * mean
  double ipm_epsilon = 0.1;           // epsilon in -epsilon * mean
  std::optional<double> alie_z;       // overrides the quantile rule
};

struct AttackContext {
  std::uint32_t round = 0;
  Stream stream = Stream::gradient;
  std::uint64_t seed = 0;
  int byzantine = 0;                  // b, number of vectors to return
  /// Label-flip gradients of the Byzantine nodes for this stream. When absent,
  /// label_flip falls back to negated honest messages (-w_{k mod |H|}).
  const std::vector<Vector>* poisoned = nullptr;
};

/// ALIE z: inverse normal CDF at (n - s)/n with s = floor(n/2) + 1 - b.
double alie_default_z(int n, int byzantine);

/// Inverse of the standard normal CDF on (0, 1).
double normal_quantile(double p);

/// b crafted vectors (empty when b = 0 or kind = none).
std::vector<Vector> craft(const AttackConfig& cfg, std::span<const Vector> honest, const AttackContext& ctx);

}  // namespace byzopt
