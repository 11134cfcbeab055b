#pragma once

// Experiment configuration, per-problem experiment units and the resumable
// runner behind the command-line tool.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttcal/analysis.hpp"
#include "ttcal/binsearch.hpp"
#include "ttcal/calibration.hpp"
#include "ttcal/strategies.hpp"
#include "ttcal/world.hpp"

namespace ttcal {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::uint64_t world_seed = 1;
  WorldConfig world = [] {
    WorldConfig w;
    w.n_problems = 200;
    return w;
  }();
  TrainConfig train;
  SelectionRule rule = SelectionRule::weighted;

  std::vector<std::size_t> bon_budgets{8, 16, 32, 64, 128, 256};
  std::size_t carbon_budget = 32;
  std::size_t carbon_explore = 0;  // 0: half the budget
  std::size_t carbon_top_k = 0;    // 0: a quarter of the explore share
  std::size_t beam_budget = 32;
  std::size_t beam_width = 4;

  SearchConfig search;
  std::vector<std::size_t> search_probes{0, 1, 2, 4, 8, 16};

  std::size_t tempsweep_budget = 32;
  std::vector<double> temperatures = [] {
    std::vector<double> t;
    for (int i = 1; i <= 16; ++i) t.push_back(i / 10.0);
    return t;
  }();

  std::size_t analyze_seeds = 10;
  std::size_t analyze_problems = 100;
  std::size_t analyze_budget = 64;

  std::vector<std::size_t> verify_ns{1, 2, 4, 8, 16};
  std::size_t verify_landscapes = 1000;
  std::size_t verify_problems = 20;

  BudgetPlan carbon_plan() const;
};

/// Keys accepted in config files and by --set, sorted.
std::vector<std::string> config_keys();
void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& c, const std::string& key);

/// Flat "key = value" lines; '#' starts a comment. Errors carry "path:line:".
ExperimentConfig parse_config(const std::string& text, const std::string& origin,
                              ExperimentConfig base = {});
ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {});

/// One "key = value" line per key, sorted; hashed for the manifest.
std::string canonical_config(const ExperimentConfig& c);
std::uint64_t config_hash(const ExperimentConfig& c);

/// Seed of problem p in a run.
inline std::uint64_t problem_seed(std::uint64_t run_seed, std::size_t p) {
  return derive_seed(run_seed, p);
}

// ---------------------------------------------------------------------------
// Experiment units shared by the runner and the acceptance checks.

struct MethodOutcome {
  std::string method;
  std::size_t n = 0;
  std::optional<Tokens> answer;
  bool correct = false;
  double best_score = 0.0;
  std::size_t samples = 0;
};

struct CarbonComparison {
  int level = 0;
  MethodOutcome bon;         // N samples
  MethodOutcome bon_double;  // 2N samples
  MethodOutcome carbon;      // N samples
  CalibrationParams params;
  bool fit_failed = false;
  double union_max = 0.0;
  double exploit_max = 0.0;
  bool union_dominates = true;
};

CarbonComparison compare_carbon(const SyntheticWorld& world, const RewardOracle& oracle,
                                std::size_t problem, const BudgetPlan& plan,
                                const TrainConfig& train, SelectionRule rule,
                                std::uint64_t run_seed);

struct ProblemDiagnostics {
  int level = 0;
  double temperature = 0.0;  // fitted T
  double entropy = 0.0;      // normalized unigram entropy of the top-k
  OverlapMetrics calibrated;    // delta-only fit, T fixed at the base value
  OverlapMetrics uncalibrated;
  bool fit_failed = false;
};

/// Explores N/2 at the base parameters and fits on the top-k. Overlap is
/// measured between the top-k token set and the token set of N/2 paired
/// generations with and without the delta-only fit.
ProblemDiagnostics diagnose_problem(const SyntheticWorld& world, const RewardOracle& oracle,
                                    std::size_t problem, std::size_t budget,
                                    const TrainConfig& train, std::uint64_t run_seed);

// ---------------------------------------------------------------------------
// Runner

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"bon",     "carbon",  "beam",  "binsearch",
                                          "tempsweep", "analyze", "verify"};
  return s;
}

struct RunOptions {
  std::string subcommand;
  std::filesystem::path out = "out";
  std::size_t jobs = 1;
  bool resume = false;
  std::size_t max_units = 0;  // stop after this many new units (0 = run to completion)
};

struct RunSummary {
  std::size_t units_total = 0;
  std::size_t units_done = 0;
  std::size_t records = 0;
  bool complete = false;
  bool checks_passed = true;  // verify only
  std::vector<std::string> messages;
};

/// Writes results.jsonl, CSV summaries and manifest.json under options.out.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options);

}  // namespace ttcal
