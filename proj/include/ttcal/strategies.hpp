#pragma once

// Best-of-N, the two-phase explore/calibrate/exploit procedure and
// step-level beam search on a synthetic world.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttcal/calibration.hpp"
#include "ttcal/world.hpp"

namespace ttcal {

enum class Phase { explore, exploit };
enum class SelectionRule { vanilla, weighted };

const char* to_string(Phase p);
const char* to_string(SelectionRule r);
SelectionRule parse_rule(const std::string& s);

struct RolloutSet {
  Phase phase = Phase::explore;
  CalibrationParams params;
  std::vector<Completion> completions;
  std::vector<std::uint64_t> seeds;

  double max_score() const;
};

struct BudgetPlan {
  std::size_t total = 0;
  std::size_t explore = 0;
  std::size_t exploit = 0;
  std::size_t top_k = 1;

  /// N1 = N/2, N2 = N - N1, k = max(1, N1/4).
  static BudgetPlan from_total(std::size_t n);
  void validate() const;
};

struct AnswerScore {
  std::optional<Tokens> answer;
  double score;
  std::size_t count;
};

struct SelectionResult {
  std::optional<Tokens> answer;
  std::vector<std::size_t> chosen;  // candidate indices behind the answer
  SelectionRule rule = SelectionRule::vanilla;
  std::vector<AnswerScore> table;   // per-answer aggregate, first-occurrence order
  double best_score = 0.0;          // max aggregate over all candidates
};

/// Highest aggregate, lowest index on ties.
SelectionResult vanilla_select(const std::vector<Completion>& candidates);
/// Sums aggregates per exact answer; first occurring group wins ties.
SelectionResult weighted_select(const std::vector<Completion>& candidates);
SelectionResult select(const std::vector<Completion>& candidates, SelectionRule rule);

/// Seed of rollout i in stream s (0 = exploration / plain sampling, 1 = exploitation).
inline std::uint64_t rollout_seed(std::uint64_t run_seed, std::uint64_t stream, std::size_t i) {
  return derive_seed(run_seed, stream, i);
}

/// Samples and scores n completions with seeds rollout_seed(run_seed, stream, offset + i).
RolloutSet sample_rollouts(const SyntheticWorld& world, const RewardOracle& oracle,
                           std::size_t problem, const CalibrationParams& params, std::size_t n,
                           std::uint64_t run_seed, std::uint64_t stream, Phase phase,
                           std::size_t offset = 0);

struct BonResult {
  SelectionResult selection;
  RolloutSet rollouts;
};

/// The noise of the reward oracle is seeded by run_seed as well.
BonResult best_of_n(const SyntheticWorld& world, const RewardOracle& oracle, std::size_t problem,
                    std::size_t n, const CalibrationParams& params, SelectionRule rule,
                    std::uint64_t run_seed);

/// Indices of the k highest aggregates, stable for ties.
std::vector<std::size_t> top_k_indices(const std::vector<Completion>& c, std::size_t k);

struct CarbonResult {
  SelectionResult selection;
  CalibrationParams params;  // used in phase 2
  FitResult fit;
  bool fit_failed = false;
  RolloutSet explore;
  RolloutSet exploit;
  double union_max = 0.0;
  double exploit_max = 0.0;  // 0 when N2 = 0
  std::size_t samples = 0;
};

CarbonResult carbon(const SyntheticWorld& world, const RewardOracle& oracle, std::size_t problem,
                    const BudgetPlan& plan, const TrainConfig& train, SelectionRule rule,
                    std::uint64_t run_seed);

/// Fits (delta, T) on the top-k of an existing explore set.
FitResult calibrate_from(const SyntheticWorld& world, std::size_t problem,
                         const RolloutSet& explore, std::size_t top_k, const TrainConfig& train);

struct BeamResult {
  SelectionResult selection;
  std::vector<Completion> finished;  // END-terminated candidates
  bool partial = false;              // no beam reached END; selection is over partials
  std::size_t tokens_generated = 0;
  double rollout_equivalent = 0.0;   // tokens_generated / mean finished length
};

/// Keeps max(1, n / width) beams; each is extended width times by one step
/// (tokens up to and including STEP or END). Beams are ranked by the partial
/// step score of their last step. run_seed seeds the oracle noise; stream
/// picks the sampling stream.
BeamResult beam_search(const SyntheticWorld& world, const RewardOracle& oracle,
                       std::size_t problem, std::size_t n, std::size_t width,
                       const CalibrationParams& params, SelectionRule rule, std::uint64_t run_seed,
                       std::uint64_t stream = 2);

struct CalibratedBeamResult {
  SelectionResult selection;
  BeamResult beam;
  RolloutSet explore;
  CalibrationParams params;
  bool fit_failed = false;
};

/// Explores n/2 full completions at the base temperature, fits on their top-k,
/// then runs beam search with the remaining budget at the fitted parameters.
/// Selection is over explore and beam candidates together.
CalibratedBeamResult calibrated_beam_search(const SyntheticWorld& world,
                                            const RewardOracle& oracle, std::size_t problem,
                                            std::size_t n, std::size_t width,
                                            const TrainConfig& train, SelectionRule rule,
                                            std::uint64_t run_seed);

}  // namespace ttcal
