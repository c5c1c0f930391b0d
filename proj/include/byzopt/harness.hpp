#pragma once

// Experiment orchestration: JSON configs, MNIST ingestion, label-sorted
// partitioning, per-cell runs with CSV metrics, and resumable grids.

#include "byzopt/aggregators.hpp"
#include "byzopt/attacks.hpp"
#include "byzopt/optimizers.hpp"
#include "byzopt/problems.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace byzopt::harness {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---- data -----------------------------------------------------------------------

struct Dataset {
  std::shared_ptr<const Matrix> train_x;  // samples x features, scaled to [0, 1]
  std::vector<int> train_y;
  std::shared_ptr<const Matrix> test_x;
  std::vector<int> test_y;
  int classes = 10;
};

/// Reads an IDX file (optionally gzip-compressed). Images become rows scaled to [0, 1].
Matrix read_idx_images(const fs::path& path);
std::vector<int> read_idx_labels(const fs::path& path);

/// Loads train-images-idx3-ubyte[.gz] and siblings (t10k- or test- prefix) from `dir`. Limits of 0 keep every sample.
Dataset load_mnist(const fs::path& dir, Index train_limit = 0, Index test_limit = 0);

/// Label-sorted contiguous chunks, one per honest node, shuffled within each chunk.
PartitionPlan partition_heterogeneous(const std::vector<int>& labels, int honest_count, std::uint64_t seed);

/// Fraction of correctly classified rows under weights x (features x classes, column-major).
double classification_accuracy(const Vector& x, const Matrix& features, const std::vector<int>& labels, int classes);

// ---- configuration --------------------------------------------------------------

struct ProblemDesc {
  std::string kind = "logistic";  // logistic | quadratic | lemma1 | wavy
  // logistic
  std::string data_dir;
  Index train_limit = 0;
  Index test_limit = 0;
  double l2 = 1e-3;
  std::uint64_t partition_seed = 1;  // data partition and synthetic offsets; shared by every cell of a grid
  // quadratic / wavy
  Index dim = 50;
  double kappa = 100.0;
  double zeta = 0.0;  // quadratic offsets spread, lemma1 zeta
  double amplitude = 0.5;
  double coupling = 0.25;
  // lemma1
  double family_delta = 0.25;
  double family_rho = 4.0;
  // synthetic noise (gaussian_iid)
  double sigma_sq = 0.0;
};

struct OptimizerDesc {
  Method method = Method::byrd_nester;
  std::string schedule = "manual";  // manual | strongly_convex | nonconvex | restart
  double eta = 0.1;
  double theta = 1.0;
  double beta = 0.0;
  double alpha = 0.0;
  double momentum = 0.9;
  int batch = 32;
  int m0 = 0;          // 0: same as batch
  double eps = 1e-3;   // target accuracy for the derived schedules
  double R = 0.0;      // 0: ||x0 - x*|| when the optimum is known, else 1
  double Delta = 0.0;  // 0: f(x0) - f* when the optimum is known, else 1
  std::string output = "last";  // last | random
};

struct BudgetDesc {
  int epochs = 0;  // data problems
  int rounds = 0;  // synthetic problems, or an explicit round count
};

struct MetricsDesc {
  int eval_every = 0;  // rounds between full-gradient / accuracy evaluations; 0 = every epoch (data) or round
  double tail_fraction = 0.25;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 1;
  int nodes = 10;
  int byzantine = 2;
  ProblemDesc problem;
  OptimizerDesc optimizer;
  AggregatorConfig aggregator;
  bool delta_given = false;
  AttackConfig attack;
  BudgetDesc budget;
  MetricsDesc metrics;
  std::string out_dir;
  Caps caps;
};

/// Parses a schema-1 experiment document; unknown fields are rejected.
ExperimentConfig parse_experiment(const json& doc);
json to_json(const ExperimentConfig& cfg);

struct GridConfig {
  json base;                                         // an experiment document
  std::vector<std::pair<std::string, json>> axes;    // dotted path -> list of values
  std::string out_dir;
};

GridConfig parse_grid(const json& doc);

// ---- metrics ----------------------------------------------------------------------

struct MetricsRow {
  std::uint32_t round = 0;
  std::int64_t oracle_queries = 0;
  double grad_norm = kNaN;
  double f_gap = kNaN;
  double agg_deviation = kNaN;
  double accuracy = kNaN;
};

struct RunMetrics {
  std::vector<MetricsRow> rows;

  std::vector<double> accuracies() const;  // non-NaN accuracy values in order
};

inline constexpr const char* kCsvHeader = "round,oracle_queries,grad_norm,f_gap,agg_deviation,accuracy";

void write_csv(const RunMetrics& metrics, const fs::path& path);
RunMetrics read_csv(const fs::path& path);

/// Minimum grad_norm over the trailing `tail_fraction` of the evaluated rounds.
double estimate_byzantine_floor(const RunMetrics& metrics, double tail_fraction);

/// min over attacks of (max accuracy over epochs).
double worst_case_max_accuracy(const std::vector<std::vector<double>>& per_attack);

// ---- runs -----------------------------------------------------------------------

/// Loaded data and constructed problems shared by cells (read-only once built).
class ProblemCache {
 public:
  std::shared_ptr<const Dataset> dataset(const ProblemDesc& desc);
  std::shared_ptr<const Problem> problem(const ExperimentConfig& cfg);

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Dataset>> data_;
  std::map<std::string, std::shared_ptr<const Problem>> problems_;
};

struct CellResult {
  std::string id;
  std::string status = "ok";  // ok | failed | skipped
  std::string error;
  RunMetrics metrics;
  json summary;
};

/// Runs one experiment. When `out_dir` is non-empty, metrics.csv is flushed
/// row by row and summary.json written at the end.
CellResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, ProblemCache* cache = nullptr);

/// Cartesian product of the grid axes applied to the base document.
std::vector<std::pair<std::string, json>> expand_grid(const GridConfig& grid);

/// Executes every cell with its own derived seed. Failures are isolated per cell;
/// cells whose summary.json already records the same config are reloaded, not rerun.
std::vector<CellResult> run_grid(const GridConfig& grid, const fs::path& out_dir, bool resume = true);

// ---- aggregator verification ------------------------------------------------------

struct RuleTally {
  Rule rule = Rule::mean;
  std::int64_t trials = 0;
  std::int64_t held = 0;
  std::int64_t cc_precondition_violations = 0;  // centered clipping only
  double worst_ratio = 0.0;                     // max lhs / rhs

  double pass_rate() const { return trials > 0 ? static_cast<double>(held) / static_cast<double>(trials) : 0.0; }
};

/// Randomized deviation-bound trials: honest inputs Gaussian with random mean,
/// spread and dimension; Byzantine inputs from the nine attacks in turn.
std::vector<RuleTally> verify_aggregators(const std::vector<Rule>& rules, int trials, std::uint64_t seed, int n = 10,
                                          int honest = 8, double delta = 0.2);

}  // namespace byzopt::harness
