// Command-line front end: single runs, grids, aggregator verification and
// the lower-bound constructions.

#include "byzopt/harness.hpp"
#include "byzopt/kernels.hpp"
#include "byzopt/lowerbound.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace byzopt;
namespace hz = byzopt::harness;
namespace lb = byzopt::lowerbound;

namespace {

hz::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  return hz::json::parse(in);
}

int cmd_run(const std::string& path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  hz::ExperimentConfig cfg = hz::parse_experiment(load_json(path));
  if (seed) cfg.seed = *seed;
  const std::string dir = !out_dir.empty() ? out_dir : cfg.out_dir;
  const hz::CellResult r = hz::run_experiment(cfg, dir);
  std::cout << r.summary["terminal"].dump(2) << '\n';
  if (!dir.empty()) std::cout << "wrote " << dir << "/metrics.csv and summary.json\n";
  return 0;
}

int cmd_sweep(const std::string& path, const std::string& out_dir, std::optional<std::uint64_t> seed, bool fresh) {
  const hz::json doc = load_json(path);
  hz::GridConfig grid = hz::parse_grid(doc);
  if (seed) grid.base["seed"] = *seed;
  const std::string dir = !out_dir.empty() ? out_dir : grid.out_dir;
  const auto results = hz::run_grid(grid, dir, !fresh);
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%-60s %-8s", r.id.c_str(), r.status.c_str());
    if (r.status == "failed") {
      ++failed;
      std::printf(" %s", r.error.c_str());
    } else if (r.summary.contains("terminal")) {
      const auto& t = r.summary["terminal"];
      if (t.contains("max_accuracy")) std::printf(" max_acc=%.4f", t["max_accuracy"].get<double>());
      if (t.contains("floor_estimate") && t["floor_estimate"].is_number())
        std::printf(" floor=%.4g", t["floor_estimate"].get<double>());
    }
    std::printf("\n");
  }
  std::printf("%zu cells, %d failed\n", results.size(), failed);
  return 0;
}

int cmd_verify(int trials, std::uint64_t seed) {
  const std::vector<Rule> rules{Rule::krum, Rule::median, Rule::trimmed_mean, Rule::faba, Rule::geometric_median,
                                Rule::centered_clipping};
  const auto tallies = hz::verify_aggregators(rules, trials, seed);
  bool ok = true;
  for (const auto& t : tallies) {
    const bool pass = t.pass_rate() >= 0.999;
    ok = ok && pass;
    std::printf("%-18s trials=%lld held=%lld rate=%.5f worst_ratio=%.4g", std::string(to_string(t.rule)).c_str(),
                static_cast<long long>(t.trials), static_cast<long long>(t.held), t.pass_rate(), t.worst_ratio);
    if (t.rule == Rule::centered_clipping)
      std::printf(" precondition_violations=%lld", static_cast<long long>(t.cc_precondition_violations));
    std::printf(" %s\n", pass ? "ok" : "BELOW 0.999");
  }
  return ok ? 0 : 1;
}

int cmd_lemma1(const lb::Lemma1Params& params, int rounds, std::uint64_t seed) {
  const std::vector<std::pair<std::string, MethodConfig>> methods = [&] {
    MethodConfig dsgd{Method::dsgd, {}, 0.9};
    dsgd.params.eta = 0.5;
    dsgd.params.T = rounds;
    MethodConfig dsgdm = dsgd;
    dsgdm.method = Method::dsgdm;
    MethodConfig bn{Method::byrd_nester, {}, 0.9};
    bn.params = {0.5, 0.7, 0.3, 0.5, 1, 1, rounds, 1.0};
    return std::vector<std::pair<std::string, MethodConfig>>{{"dsgd", dsgd}, {"dsgdm", dsgdm}, {"byrd_nester", bn}};
  }();
  int rc = 0;
  for (const auto& [name, mc] : methods) {
    const lb::Lemma1Report r = lb::lemma1_floor_check(params, lb::method_runner(mc), seed);
    std::printf("%-12s identical=%s best_floor=%.6g bound=%.6g floor_holds=%s certificates=%lld/%lld\n", name.c_str(),
                r.identical ? "yes" : "no", r.best_floor, r.bound, r.floor_holds ? "yes" : "no",
                static_cast<long long>(r.certificates_first.held + r.certificates_second.held),
                static_cast<long long>(r.certificates_first.calls + r.certificates_second.calls));
    if (!r.identical || !r.floor_holds) rc = 1;
  }
  return rc;
}

int cmd_lemma6(double L, double eps, double sigma_sq, int n, double delta, double rho_delta, int draws,
               std::uint64_t seed) {
  const int m_star = lb::lemma6_escape_threshold(L, eps, sigma_sq, n, delta, rho_delta);
  const int max_m = std::max(4, 2 * m_star);
  const auto sides = lb::lemma6_monte_carlo(eps, sigma_sq, n, rho_delta, max_m, draws, seed);
  const auto flip = lb::lemma6_empirical_flip(sides);
  std::printf("m* = %d\n", m_star);
  for (const auto& s : sides) std::printf("m=%4d lhs=%.6g rhs=%.6g\n", s.m, s.lhs, s.rhs);
  if (flip) {
    std::printf("empirical flip at m = %d (relative offset %.3f)\n", *flip, (*flip - m_star) / double(m_star));
  } else {
    std::printf("no flip up to m = %d\n", max_m);
  }
  return 0;
}

int cmd_chain(Index d, double L, double eps, double sigma_sq, int draws, std::uint64_t seed) {
  const lb::ChainInstance inst = lb::make_chain_instance_with_dim(d, L, eps, sigma_sq);
  std::printf("d=%lld nu=%.6g p=%.6g\n", static_cast<long long>(inst.d), inst.nu, inst.p);
  // Gradient norm at random points with the last coordinate zero.
  double min_norm = std::numeric_limits<double>::infinity();
  for (int k = 0; k < draws; ++k) {
    KeyedStream rng(seed, static_cast<std::uint32_t>(k), 0, 0);
    Vector x(inst.d);
    for (Index j = 0; j < inst.d; ++j) x[j] = 2.0 * inst.nu * rng.normal();
    x[inst.d - 1] = 0.0;
    min_norm = std::min(min_norm, lb::chain_value_and_gradient(inst, x).second.norm());
  }
  std::printf("min ||grad f|| over %d points with x_d = 0: %.6g (eps = %.6g)\n", draws, min_norm, eps);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Byzantine-robust distributed stochastic optimization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int threads = 0;
  app.add_option("--seed", seed, "Override the seed");
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");

  auto* run = app.add_subcommand("run", "Run one experiment config");
  std::string run_cfg;
  run->add_option("config", run_cfg, "Experiment JSON")->required()->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep", "Run a grid config");
  std::string grid_cfg;
  bool fresh = false;
  sweep->add_option("grid", grid_cfg, "Grid JSON")->required()->check(CLI::ExistingFile);
  sweep->add_flag("--fresh", fresh, "Ignore existing cell outputs");

  auto* verify = app.add_subcommand("verify-aggregators", "Randomized deviation-bound trials");
  int trials = 100000;
  verify->add_option("--trials", trials, "Trials per rule")->check(CLI::PositiveNumber);

  auto* lower = app.add_subcommand("lowerbound", "Lower-bound constructions");
  lower->require_subcommand(1);
  lower->fallthrough();
  auto* l1 = lower->add_subcommand("lemma1", "Indistinguishable pair");
  lb::Lemma1Params l1p;
  int l1_rounds = 200;
  l1->add_option("--nodes", l1p.n);
  l1->add_option("--delta", l1p.delta);
  l1->add_option("--zeta", l1p.zeta);
  l1->add_option("--rho", l1p.rho);
  l1->add_option("--rounds", l1_rounds);
  auto* l6 = lower->add_subcommand("lemma6", "Stuck aggregator threshold");
  double l6_L = 1.0, l6_eps = 0.1, l6_sigma = 1.0, l6_delta = 0.2, l6_rd = 1.0;
  int l6_n = 10, l6_draws = 100000;
  l6->add_option("--L", l6_L);
  l6->add_option("--eps", l6_eps);
  l6->add_option("--sigma-sq", l6_sigma);
  l6->add_option("--nodes", l6_n);
  l6->add_option("--delta", l6_delta);
  l6->add_option("--rho-delta", l6_rd);
  l6->add_option("--draws", l6_draws);
  auto* ch = lower->add_subcommand("chain", "Chain instance checks");
  Index ch_d = 32;
  double ch_L = 1.0, ch_eps = 0.05, ch_sigma = 1.0;
  int ch_draws = 1000;
  ch->add_option("--dim", ch_d);
  ch->add_option("--L", ch_L);
  ch->add_option("--eps", ch_eps);
  ch->add_option("--sigma-sq", ch_sigma);
  ch->add_option("--draws", ch_draws);

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) kernels::set_threads(threads);
  const std::uint64_t s = seed.value_or(1);
  try {
    if (*run) return cmd_run(run_cfg, out_dir, seed);
    if (*sweep) return cmd_sweep(grid_cfg, out_dir, seed, fresh);
    if (*verify) return cmd_verify(trials, s);
    if (*l1) return cmd_lemma1(l1p, l1_rounds, s);
    if (*l6) return cmd_lemma6(l6_L, l6_eps, l6_sigma, l6_n, l6_delta, l6_rd, l6_draws, s);
    if (*ch) return cmd_chain(ch_d, ch_L, ch_eps, ch_sigma, ch_draws, s);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
