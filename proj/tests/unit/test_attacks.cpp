#include "byzopt/aggregators.hpp"
#include "byzopt/attacks.hpp"
#include "byzopt/rng.hpp"

#include "doctest.h"

#include <cmath>

using namespace byzopt;

namespace {

std::vector<Vector> honest_set(int h, Index d, std::uint64_t seed) {
  std::vector<Vector> out;
  for (int i = 0; i < h; ++i) {
    KeyedStream rng(seed, static_cast<std::uint32_t>(i), 0, 0);
    Vector v(d);
    for (Index j = 0; j < d; ++j) v[j] = rng.normal() + 0.5 * j;
    out.push_back(v);
  }
  return out;
}

Vector mean(const std::vector<Vector>& vs) {
  Vector m = Vector::Zero(vs.front().size());
  for (const auto& v : vs) m += v;
  return m / static_cast<double>(vs.size());
}

AttackContext context(int b, std::uint32_t round = 0) {
  AttackContext ctx;
  ctx.byzantine = b;
  ctx.round = round;
  ctx.seed = 99;
  return ctx;
}

std::vector<Vector> with(const std::vector<Vector>& h, const std::vector<Vector>& b) {
  auto all = h;
  all.insert(all.end(), b.begin(), b.end());
  return all;
}

}  // namespace

TEST_CASE("attack names round-trip and there are nine attacks") {
  CHECK(all_attacks().size() == 9);
  for (AttackKind k : all_attacks()) CHECK(parse_attack(to_string(k)) == k);
  CHECK(parse_attack("none") == AttackKind::none);
  CHECK(parse_attack("lf") == AttackKind::label_flip);
  CHECK_THROWS_AS(parse_attack("nope"), InvalidArgument);
}

TEST_CASE("closed-form attacks") {
  const auto h = honest_set(8, 3, 1);
  const Vector m = mean(h);
  AttackConfig cfg;
  cfg.kind = AttackKind::zero_value;
  for (const auto& v : craft(cfg, h, context(2))) CHECK(v.isZero(0.0));
  cfg.kind = AttackKind::sample_duplicate;
  for (const auto& v : craft(cfg, h, context(2))) CHECK((v.array() == h[0].array()).all());
  cfg.kind = AttackKind::ipm;
  for (const auto& v : craft(cfg, h, context(2))) CHECK((v + 0.1 * m).norm() < 1e-14);
  cfg.kind = AttackKind::isolation;
  for (const auto& v : craft(cfg, h, context(2))) CHECK((v + 4.0 * m).norm() < 1e-13);
}

TEST_CASE("sign flip of a two-dimensional mean") {
  std::vector<Vector> h(3, Vector(2));
  for (auto& v : h) v << 1.0, -2.0;
  AttackConfig cfg;
  cfg.kind = AttackKind::sign_flip;
  const auto out = craft(cfg, h, context(1));
  REQUIRE(out.size() == 1);
  CHECK(out[0][0] == -1.0);
  CHECK(out[0][1] == 2.0);
}

TEST_CASE("under the mean rule isolation stalls and sign flip scales the honest mean") {
  const auto h = honest_set(8, 4, 2);
  const Vector m = mean(h);
  AggregatorConfig mean_rule;
  AttackConfig iso;
  iso.kind = AttackKind::isolation;
  CHECK(aggregate(mean_rule, with(h, craft(iso, h, context(2)))).norm() < 1e-13);
  AttackConfig sf;
  sf.kind = AttackKind::sign_flip;
  const Vector agg = aggregate(mean_rule, with(h, craft(sf, h, context(2))));
  CHECK((agg - (8.0 - 2.0) / 10.0 * m).norm() < 1e-13);
}

TEST_CASE("gaussian attack is seed-deterministic with the configured spread") {
  const auto h = honest_set(8, 2000, 3);
  AttackConfig cfg;
  cfg.kind = AttackKind::gaussian;
  const auto a = craft(cfg, h, context(2, 5)), b = craft(cfg, h, context(2, 5)), c = craft(cfg, h, context(2, 6));
  CHECK((a[0].array() == b[0].array()).all());
  CHECK((a[0].array() != c[0].array()).any());
  CHECK((a[0].array() != a[1].array()).any());
  const Vector dev = a[0] - mean(h);
  const double sd = std::sqrt(dev.squaredNorm() / 2000.0);
  CHECK(sd == doctest::Approx(200.0).epsilon(0.05));
}

TEST_CASE("ALIE places Byzantine vectors z population deviations from the mean") {
  const auto h = honest_set(8, 3, 4);
  AttackConfig cfg;
  cfg.kind = AttackKind::alie;
  cfg.alie_z = 1.5;
  const auto out = craft(cfg, h, context(2));
  const Vector m = mean(h);
  for (Index j = 0; j < 3; ++j) {
    double var = 0;
    for (const auto& v : h) var += (v[j] - m[j]) * (v[j] - m[j]);
    var /= 8.0;
    CHECK(out[0][j] == doctest::Approx(m[j] + 1.5 * std::sqrt(var)));
  }
  // default quantile: n = 10, b = 2 -> s = 5 + 1 - 2 = 4, z = Phi^{-1}(0.6)
  CHECK(alie_default_z(10, 2) == doctest::Approx(0.2533471031357997).epsilon(1e-10));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
}

TEST_CASE("label flip uses the poisoned gradients when given, else negated honest messages") {
  const auto h = honest_set(3, 2, 5);
  AttackConfig cfg;
  cfg.kind = AttackKind::label_flip;
  const auto fallback = craft(cfg, h, context(2));
  CHECK((fallback[0] + h[0]).norm() == 0.0);
  CHECK((fallback[1] + h[1]).norm() == 0.0);
  std::vector<Vector> poisoned{Vector::Constant(2, 7.0), Vector::Constant(2, 8.0)};
  AttackContext ctx = context(2);
  ctx.poisoned = &poisoned;
  const auto out = craft(cfg, h, ctx);
  CHECK(out[1][0] == 8.0);
}

TEST_CASE("every attack returns b vectors of the honest dimension, and none for b = 0") {
  const auto h = honest_set(6, 5, 6);
  for (AttackKind k : all_attacks()) {
    AttackConfig cfg;
    cfg.kind = k;
    const auto out = craft(cfg, h, context(3));
    CHECK(out.size() == 3);
    for (const auto& v : out) CHECK(v.size() == 5);
    CHECK(craft(cfg, h, context(0)).empty());
  }
}
