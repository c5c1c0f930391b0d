#include "byzopt/attacks.hpp"

#include "byzopt/rng.hpp"

#include <array>
#include <cmath>
#include <string>

namespace byzopt {

namespace {

constexpr std::array kAttacks = {AttackKind::gaussian,   AttackKind::sign_flip, AttackKind::label_flip,
                                 AttackKind::sample_duplicate, AttackKind::zero_value, AttackKind::isolation,
                                 AttackKind::alie,       AttackKind::ipm,       AttackKind::bit_flip};

Vector mean_of(std::span<const Vector> xs) {
  Vector m = Vector::Zero(xs.front().size());
  for (const auto& v : xs) m += v;
  return m / static_cast<double>(xs.size());
}

}  // namespace

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::gaussian: return "gaussian";
    case AttackKind::sign_flip: return "sign_flip";
    case AttackKind::label_flip: return "label_flip";
    case AttackKind::sample_duplicate: return "sample_duplicate";
    case AttackKind::zero_value: return "zero_value";
    case AttackKind::isolation: return "isolation";
    case AttackKind::alie: return "alie";
    case AttackKind::ipm: return "ipm";
    case AttackKind::bit_flip: return "bit_flip";
  }
  return "unknown";
}

AttackKind parse_attack(std::string_view name) {
  if (name == "none") return AttackKind::none;
  for (AttackKind k : kAttacks)
    if (to_string(k) == name) return k;
  if (name == "sf") return AttackKind::sign_flip;
  if (name == "lf") return AttackKind::label_flip;
  if (name == "bf") return AttackKind::bit_flip;
  if (name == "gs") return AttackKind::gaussian;
  throw InvalidArgument("unknown attack '" + std::string(name) + "'");
}

std::span<const AttackKind> all_attacks() { return kAttacks; }

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0, 1)");
  // Bracketed Newton on the CDF written with erfc; converges to full precision.
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  double lo = -40.0, hi = 40.0, z = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double f = cdf(z) - p;
    if (f > 0) hi = z; else lo = z;
    const double dens = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    double next = dens > 0 ? z - f / dens : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - z) <= 1e-15 * (1.0 + std::abs(z))) return next;
    z = next;
  }
  return z;
}

double alie_default_z(int n, int byzantine) {
  require(n >= 1 && byzantine >= 0, "alie: bad node counts");
  const int s = n / 2 + 1 - byzantine;
  const double p = static_cast<double>(n - s) / n;
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return normal_quantile(p);
}

std::vector<Vector> craft(const AttackConfig& cfg, std::span<const Vector> honest, const AttackContext& ctx) {
  require(ctx.byzantine >= 0, "craft: negative Byzantine count");
  if (ctx.byzantine == 0 || cfg.kind == AttackKind::none) return {};
  require(!honest.empty(), "craft: no honest messages");
  const Index d = honest.front().size();
  for (const auto& v : honest) require_same_dim(v, d, "craft");
  const auto b = static_cast<std::size_t>(ctx.byzantine);
  const auto h = honest.size();

  switch (cfg.kind) {
    case AttackKind::none: return {};
    case AttackKind::zero_value: return std::vector<Vector>(b, Vector::Zero(d));
    case AttackKind::sample_duplicate: return std::vector<Vector>(b, honest.front());
    case AttackKind::sign_flip: return std::vector<Vector>(b, -cfg.sign_flip_scale * mean_of(honest));
    case AttackKind::bit_flip: return std::vector<Vector>(b, -mean_of(honest));
    case AttackKind::ipm: return std::vector<Vector>(b, -cfg.ipm_epsilon * mean_of(honest));
    case AttackKind::isolation: {
      const double scale = -static_cast<double>(h) / static_cast<double>(b);
      return std::vector<Vector>(b, scale * mean_of(honest));
    }
    case AttackKind::gaussian: {
      const Vector m = mean_of(honest);
      std::vector<Vector> out;
      for (std::size_t k = 0; k < b; ++k) {
        KeyedStream rng(derive_seed(ctx.seed, 0xa77ac4), 0x80000000u | static_cast<std::uint32_t>(k), ctx.round,
                        static_cast<std::uint32_t>(ctx.stream));
        Vector v = m;
        for (Index j = 0; j < d; ++j) v[j] += cfg.gaussian_sigma * rng.normal();
        out.push_back(std::move(v));
      }
      return out;
    }
    case AttackKind::alie: {
      const Vector m = mean_of(honest);
      Vector var = Vector::Zero(d);
      for (const auto& v : honest) var += (v - m).cwiseAbs2();
      var /= static_cast<double>(h);
      const double z = cfg.alie_z ? *cfg.alie_z : alie_default_z(static_cast<int>(h + b), ctx.byzantine);
      return std::vector<Vector>(b, m + z * var.cwiseSqrt());
    }
    case AttackKind::label_flip: {
      if (ctx.poisoned) {
        require(ctx.poisoned->size() == b, "label_flip: one poisoned gradient per Byzantine node required");
        for (const auto& v : *ctx.poisoned) require_same_dim(v, d, "label_flip");
        return *ctx.poisoned;
      }
      std::vector<Vector> out;
      for (std::size_t k = 0; k < b; ++k) out.push_back(-honest[k % h]);
      return out;
    }
  }
  throw InvalidArgument("unknown attack kind");
}

}  // namespace byzopt
