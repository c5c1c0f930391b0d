#include "byzopt/harness.hpp"

#include "doctest.h"

#include <cmath>
#include <fstream>
#include <set>

using namespace byzopt;
namespace hz = byzopt::harness;

namespace {

hz::fs::path scratch(const std::string& name) {
  const auto dir = hz::fs::temp_directory_path() / ("byzopt_test_" + name);
  hz::fs::remove_all(dir);
  hz::fs::create_directories(dir);
  return dir;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

hz::json quadratic_doc(int rounds) {
  return hz::json::parse(R"({
    "schema": 1, "name": "q", "seed": 5, "nodes": 6, "byzantine": 1,
    "problem": {"kind": "quadratic", "dim": 4, "kappa": 10, "zeta": 0.5, "sigma_sq": 0.25},
    "optimizer": {"method": "byrd_nester", "eta": 0.05, "theta": 0.5, "beta": 0.5, "alpha": 0.3, "batch": 2, "m0": 4},
    "aggregator": {"rule": "median"},
    "attack": {"kind": "sign_flip"},
    "budget": {"rounds": 0}
  })")
      .patch(hz::json::parse(R"([{"op": "replace", "path": "/budget/rounds", "value": )" + std::to_string(rounds) + "}]"));
}

}  // namespace

TEST_CASE("idx round trip from an uncompressed file") {
  const auto dir = scratch("idx");
  {
    std::ofstream img(dir / "imgs", std::ios::binary);
    put_be32(img, 0x803);
    put_be32(img, 2);
    put_be32(img, 2);
    put_be32(img, 3);
    const unsigned char px[12] = {0, 255, 51, 102, 0, 0, 1, 2, 3, 4, 5, 255};
    img.write(reinterpret_cast<const char*>(px), 12);
    std::ofstream lab(dir / "labs", std::ios::binary);
    put_be32(lab, 0x801);
    put_be32(lab, 2);
    const unsigned char l[2] = {7, 3};
    lab.write(reinterpret_cast<const char*>(l), 2);
  }
  const Matrix m = hz::read_idx_images(dir / "imgs");
  REQUIRE(m.rows() == 2);
  REQUIRE(m.cols() == 6);
  CHECK(m(0, 1) == 1.0);
  CHECK(m(0, 2) == doctest::Approx(0.2));
  CHECK(m(1, 5) == 1.0);
  CHECK(hz::read_idx_labels(dir / "labs") == std::vector<int>{7, 3});
  CHECK_THROWS_AS(hz::read_idx_images(dir / "labs"), InvalidArgument);
}

TEST_CASE("label-sorted partition") {
  const std::vector<int> labels{3, 0, 1, 0, 2, 1, 3, 2, 4, 4};
  const auto plan = hz::partition_heterogeneous(labels, 5, 9);
  REQUIRE(plan.shards.size() == 5);
  std::set<Index> seen;
  for (std::size_t k = 0; k < 5; ++k) {
    REQUIRE(plan.shards[k].size() == 2);
    for (Index i : plan.shards[k]) {
      CHECK(labels[static_cast<std::size_t>(i)] == static_cast<int>(k));
      seen.insert(i);
    }
  }
  CHECK(seen.size() == 10);
  const auto again = hz::partition_heterogeneous(labels, 5, 9);
  CHECK(again.shards == plan.shards);
  const auto uneven = hz::partition_heterogeneous(labels, 3, 1);
  CHECK(uneven.shards[0].size() + uneven.shards[1].size() + uneven.shards[2].size() == 10);
}

TEST_CASE("classification accuracy by argmax") {
  Matrix f(3, 2);
  f << 1, 0, 0, 1, 1, 1;
  Vector x(4);  // features x classes, column-major: class 0 weights then class 1
  x << 1, 0, 0, 2;
  CHECK(hz::classification_accuracy(x, f, {0, 1, 1}, 2) == doctest::Approx(1.0));
  CHECK(hz::classification_accuracy(x, f, {1, 1, 1}, 2) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("worst-case max accuracy") {
  CHECK(hz::worst_case_max_accuracy({{0.1, 0.8, 0.7}, {0.6, 0.5}, {0.9}}) == 0.6);
  CHECK(hz::worst_case_max_accuracy({{0.3}}) == 0.3);
  CHECK_THROWS(hz::worst_case_max_accuracy({}));
}

TEST_CASE("floor estimator") {
  hz::RunMetrics m;
  for (int t = 0; t < 8; ++t) m.rows.push_back({static_cast<std::uint32_t>(t), t, 1.0 / (t + 1)});
  CHECK(hz::estimate_byzantine_floor(m, 0.25) == doctest::Approx(0.125));
  hz::RunMetrics plateau;
  for (int t = 0; t < 100; ++t)
    plateau.rows.push_back({static_cast<std::uint32_t>(t), t, t < 50 ? 5.0 - 0.09 * t : 0.3 + 0.01 * (t % 2)});
  CHECK(hz::estimate_byzantine_floor(plateau, 0.25) == doctest::Approx(0.3));
  hz::RunMetrics gaps;
  gaps.rows.push_back({0, 0, 2.0});
  gaps.rows.push_back({1, 1});
  gaps.rows.push_back({2, 2, 0.5});
  CHECK(hz::estimate_byzantine_floor(gaps, 0.5) == 0.5);
  CHECK(std::isnan(hz::estimate_byzantine_floor(hz::RunMetrics{}, 0.5)));
}

TEST_CASE("config parsing rejects unknown fields and bad values") {
  auto doc = quadratic_doc(5);
  CHECK_NOTHROW(hz::parse_experiment(doc));
  auto extra = doc;
  extra["optimizer"]["etta"] = 0.1;
  CHECK_THROWS_AS(hz::parse_experiment(extra), InvalidArgument);
  auto top = doc;
  top["colour"] = "blue";
  CHECK_THROWS_AS(hz::parse_experiment(top), InvalidArgument);
  auto schema = doc;
  schema["schema"] = 2;
  CHECK_THROWS_AS(hz::parse_experiment(schema), InvalidArgument);
  auto majority = doc;
  majority["byzantine"] = 3;
  CHECK_THROWS_AS(hz::parse_experiment(majority), InvalidArgument);
  const auto cfg = hz::parse_experiment(doc);
  CHECK(cfg.aggregator.delta == doctest::Approx(1.0 / 6.0));
  CHECK(hz::parse_experiment(hz::to_json(cfg)).optimizer.m0 == 4);
  CHECK(hz::to_json(hz::parse_experiment(hz::to_json(cfg))) == hz::to_json(cfg));
}

TEST_CASE("csv round trip keeps NaN and exact values") {
  const auto dir = scratch("csv");
  hz::RunMetrics m;
  m.rows.push_back({0, 4, 1.5, hz::kNaN, hz::kNaN, hz::kNaN});
  m.rows.push_back({1, 6, 0.1 + 0.2, 1e-300, 3.0 / 7.0, 0.913});
  hz::write_csv(m, dir / "m.csv");
  std::ifstream in(dir / "m.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == hz::kCsvHeader);
  const auto back = hz::read_csv(dir / "m.csv");
  REQUIRE(back.rows.size() == 2);
  CHECK(std::isnan(back.rows[0].f_gap));
  CHECK(back.rows[1].oracle_queries == 6);
  CHECK(back.rows[1].grad_norm == 0.1 + 0.2);
  CHECK(back.rows[1].f_gap == 1e-300);
  CHECK(back.rows[1].agg_deviation == 3.0 / 7.0);
  CHECK(back.accuracies() == std::vector<double>{0.913});
}

TEST_CASE("grid expansion is a cartesian product with stable ids") {
  hz::GridConfig g;
  g.base = quadratic_doc(3);
  g.axes = {{"optimizer.method", {"dsgd", "dsgdm", "byrd_nester"}},
            {"aggregator.rule", {"median", "trimmed_mean", "centered_clipping", "geometric_median"}},
            {"attack.kind", {"bit_flip", "label_flip", "ipm", "alie"}}};
  const auto cells = hz::expand_grid(g);
  CHECK(cells.size() == 48);
  std::set<std::string> ids;
  for (const auto& [id, doc] : cells) ids.insert(id);
  CHECK(ids.size() == 48);
  CHECK(hz::expand_grid(g).front().first == cells.front().first);
}

TEST_CASE("query accounting and per-round rows") {
  const auto cfg = hz::parse_experiment(quadratic_doc(10));
  const auto r = hz::run_experiment(cfg, {});
  REQUIRE(r.metrics.rows.size() == 11);
  CHECK(r.metrics.rows.front().oracle_queries == 4);
  CHECK(r.metrics.rows.back().oracle_queries == 4 + 2 * 10);
  CHECK(r.summary["terminal"]["oracle_queries"] == 24);
  for (std::size_t i = 1; i < r.metrics.rows.size(); ++i) {
    CHECK(r.metrics.rows[i].round == i);
    CHECK(r.metrics.rows[i].oracle_queries - r.metrics.rows[i - 1].oracle_queries == 2);
    CHECK(std::isfinite(r.metrics.rows[i].grad_norm));
    CHECK(std::isfinite(r.metrics.rows[i].f_gap));
    CHECK(std::isfinite(r.metrics.rows[i].agg_deviation));
  }
}

TEST_CASE("grid: failures are isolated, reruns are bit-identical, resume reloads") {
  const auto dir = scratch("grid");
  hz::GridConfig g;
  g.base = quadratic_doc(20);
  g.axes = {{"aggregator.delta", {0.1, 0.6, 0.2}}, {"optimizer.method", {"dsgd", "byrd_nester"}}};
  const auto first = hz::run_grid(g, dir, false);
  REQUIRE(first.size() == 6);
  int failed = 0;
  for (const auto& r : first) {
    const bool bad = r.id.find("0.6") != std::string::npos;
    CHECK(r.status == (bad ? "failed" : "ok"));
    if (bad) {
      ++failed;
      CHECK(!r.error.empty());
      CHECK(hz::fs::exists(dir / r.id / "summary.json"));
    } else {
      CHECK(hz::fs::exists(dir / r.id / "metrics.csv"));
    }
  }
  CHECK(failed == 2);
  CHECK(hz::fs::exists(dir / "grid.json"));

  const auto second = hz::run_grid(g, scratch("grid2"), false);
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i].status != "ok") continue;
    REQUIRE(first[i].metrics.rows.size() == second[i].metrics.rows.size());
    for (std::size_t k = 0; k < first[i].metrics.rows.size(); ++k) {
      const auto &a = first[i].metrics.rows[k], &b = second[i].metrics.rows[k];
      CHECK(a.grad_norm == b.grad_norm);
      CHECK(a.oracle_queries == b.oracle_queries);
    }
  }

  const auto resumed = hz::run_grid(g, dir, true);
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i].status != "ok") {
      CHECK(resumed[i].status == "failed");
      continue;
    }
    CHECK(resumed[i].status == "skipped");
    REQUIRE(resumed[i].metrics.rows.size() == first[i].metrics.rows.size());
    CHECK(resumed[i].metrics.rows.back().grad_norm == first[i].metrics.rows.back().grad_norm);
  }
}

TEST_CASE("different cells get different seeds") {
  hz::GridConfig g;
  g.base = quadratic_doc(5);
  g.axes = {{"name", {"a", "b"}}};
  const auto r = hz::run_grid(g, {}, false);
  REQUIRE(r.size() == 2);
  CHECK(r[0].metrics.rows.back().grad_norm != r[1].metrics.rows.back().grad_norm);
}

TEST_CASE("floor estimate grows with heterogeneity on the gadget family") {
  hz::GridConfig g;
  g.base = hz::json::parse(R"({
    "schema": 1, "name": "f", "seed": 11, "nodes": 10, "byzantine": 2,
    "problem": {"kind": "lemma1", "zeta": 1.0, "family_delta": 0.25},
    "optimizer": {"method": "dsgd", "eta": 0.5, "batch": 1},
    "aggregator": {"rule": "trimmed_mean"},
    "attack": {"kind": "sign_flip"},
    "budget": {"rounds": 100}
  })");
  g.axes = {{"problem.zeta", {0.0, 0.5, 1.0, 2.0}}};
  const auto r = hz::run_grid(g, {}, false);
  REQUIRE(r.size() == 4);
  double prev = -1.0;
  for (const auto& c : r) {
    REQUIRE(c.status == "ok");
    const double f = c.summary["terminal"]["floor_estimate"].get<double>();
    CHECK(f >= prev);
    prev = f;
  }
  CHECK(r[0].summary["terminal"]["floor_estimate"].get<double>() <= 1e-8);
}

TEST_CASE("aggregator verification tallies") {
  const auto t = hz::verify_aggregators({Rule::median, Rule::trimmed_mean, Rule::centered_clipping}, 300, 4);
  REQUIRE(t.size() == 3);
  for (const auto& r : t) {
    CHECK(r.trials == 300);
    CHECK(r.pass_rate() >= 0.999);
  }
  CHECK(t[2].cc_precondition_violations == 0);
}
