#pragma once

// Synthetic stand-ins for an LLM and a process reward model.
//
// The model is linear-softmax: logits = W * h(problem, prefix). Three hidden
// dimensions are reserved for the structural tokens (END, STEP, ANSWER); the
// rest carry content. The feature map h combines
//   - a structural slot code derived from the prefix (which structural token,
//     if any, comes next),
//   - a per-problem, per-slot preference for the gold token and for a few
//     distractor tokens, with strengths set by the difficulty level,
//   - for answer slots, a preference for the gold answer that grows with the
//     token agreement of the reasoning so far,
//   - a constant per-problem offset away from the gold tokens ("miscalibration"),
//   - a context term: random embedding of the last token plus an
//     exponentially decayed bag of the prefix.
//
// Completions look like  c c STEP c c STEP ... ANSWER a END.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ttcal/model.hpp"

namespace ttcal {

inline constexpr TokenId kEndToken = 0;
inline constexpr TokenId kStepToken = 1;
inline constexpr TokenId kAnswerToken = 2;
inline constexpr std::size_t kReservedTokens = 3;
inline constexpr int kMaxDifficulty = 5;

struct LevelProfile {
  double gold_strength;        // logit bonus of the gold token at a content slot
  double distractor_strength;  // logit bonus of each distractor token
  std::size_t distractors;     // distractor tokens per content slot
  double answer_distractor;    // logit bonus of the wrong answer at answer slots
  double noise_scale = 1.0;    // multiplies the oracle noise on problems of this level
};

struct WorldConfig {
  std::size_t vocab_size = 64;
  std::size_t hidden_dim = 32;
  std::size_t n_problems = 50;
  // Difficulty of problem i is levels[i % levels.size()].
  std::vector<int> levels{1, 2, 3, 4, 5};

  std::size_t reasoning_steps = 3;
  std::size_t step_tokens = 2;
  std::size_t answer_tokens = 1;
  std::size_t max_len = 64;

  double structure_strength = 8.0;
  std::array<LevelProfile, kMaxDifficulty> profile{{
      {5.0, 2.0, 1, 3.5, 1.0},
      {4.5, 2.0, 2, 3.5, 2.0},
      {4.0, 2.0, 3, 3.5, 4.0},
      {3.5, 2.0, 4, 3.5, 6.0},
      {3.0, 2.0, 5, 3.5, 8.0},
  }};
  double answer_strength = 4.0;
  double answer_agreement_power = 1.0;
  double miscalibration = 0.5;
  double context_scale = 0.5;
  double context_decay = 0.5;
  double head_scale = 6.0;

  // Reward oracle.
  double reward_noise = 0.05;
  double floor_score = 0.05;
  double answer_weight = 0.7;

  void validate() const;
  std::size_t gold_length() const {
    return reasoning_steps * (step_tokens + 1) + 1 + answer_tokens + 1;
  }
};

struct Problem {
  int level = 1;
  std::vector<Tokens> gold_steps;                  // content tokens per reasoning step
  std::vector<std::vector<Tokens>> distractors;    // [step][slot] -> distractor tokens
  Tokens answer;
  Tokens wrong_answer;                             // answer-slot distractor
  std::vector<double> bias_direction;              // unit vector over content dims
  Tokens gold;                                     // full gold completion

  bool operator==(const Problem&) const = default;
};

class SyntheticWorld final : public ArModel {
 public:
  SyntheticWorld(std::uint64_t seed, WorldConfig config, LmHead head,
                 std::vector<double> last_embedding, std::vector<double> bag_embedding,
                 std::vector<Problem> problems);

  const Vocabulary& vocabulary() const override { return vocab_; }
  const LmHead& head() const override { return head_; }
  std::size_t max_len() const override { return config_.max_len; }
  LogitVector logits(std::size_t problem, std::span<const TokenId> prefix) const override;

  /// h(problem, prefix), length d.
  std::vector<double> hidden_state(std::size_t problem, std::span<const TokenId> prefix) const;

  std::uint64_t seed() const noexcept { return seed_; }
  const WorldConfig& config() const noexcept { return config_; }
  std::size_t n_problems() const noexcept { return problems_.size(); }
  const Problem& problem(std::size_t i) const { return problems_.at(i); }
  const std::vector<Problem>& problems() const noexcept { return problems_; }
  const std::vector<double>& last_embedding() const noexcept { return last_embedding_; }
  const std::vector<double>& bag_embedding() const noexcept { return bag_embedding_; }

  bool operator==(const SyntheticWorld& o) const;

 private:
  std::vector<double> unit_direction(TokenId v) const;

  std::uint64_t seed_;
  WorldConfig config_;
  Vocabulary vocab_;
  LmHead head_;
  std::vector<double> last_embedding_;  // V x content_dim
  std::vector<double> bag_embedding_;   // V x content_dim
  std::vector<Problem> problems_;
};

/// Deterministic world construction.
SyntheticWorld make_world(std::uint64_t seed, const WorldConfig& config);

// ---------------------------------------------------------------------------
// Reward oracle

struct Completion {
  Tokens tokens;
  std::optional<Tokens> answer;  // tokens after the last ANSWER marker, END excluded
  std::vector<double> step_scores;
  double aggregate = 0.0;        // last step score
};

/// Tokens after the last ANSWER marker up to END; nullopt without a marker.
std::optional<Tokens> extract_answer(const Tokens& completion);

/// Splits after each STEP token; a trailing empty segment is dropped.
std::vector<Tokens> split_steps(const Tokens& completion);

/// Step-level scorer in [0, 1]. A step's score is the mean positional token
/// agreement with the gold steps so far; the final step of a finished
/// completion blends that agreement with final-answer correctness. Gaussian
/// noise is added and the result clamped.
class RewardOracle {
 public:
  RewardOracle(const SyntheticWorld& world) : RewardOracle(world, world.config().reward_noise) {}
  RewardOracle(const SyntheticWorld& world, double noise);

  /// partial = true scores an unfinished prefix: no step gets the answer term.
  Completion score(std::size_t problem, const Tokens& completion, std::uint64_t noise_seed,
                   bool partial = false) const;
  bool is_correct(std::size_t problem, const std::optional<Tokens>& answer) const;
  double noise() const noexcept { return noise_; }
  const SyntheticWorld& world() const noexcept { return *world_; }

 private:
  const SyntheticWorld* world_;
  double noise_;
};

/// Convenience wrapper using the world's default oracle.
Completion score_completion(const RewardOracle& oracle, std::size_t problem,
                            const Tokens& completion, std::uint64_t noise_seed);

// ---------------------------------------------------------------------------
// Exhaustive enumeration

struct Outcome {
  Tokens completion;
  double probability;
  double reward;
};

struct Enumeration {
  std::vector<Outcome> outcomes;  // sequences terminated by END
  double residual_mass = 0.0;     // mass of sequences truncated at max_len
  std::size_t truncated = 0;
  double total_mass() const;
};

using RewardFn = std::function<double(const Tokens&)>;

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

/// Number of END-terminated sequences of length <= max_len plus truncated ones.
std::uint64_t enumeration_size(std::size_t vocab, std::size_t max_len);

Enumeration enumerate_outcomes(const ArModel& model, std::size_t problem,
                               const CalibrationParams& params, std::size_t max_len,
                               const RewardFn& reward, std::uint64_t cap = kDefaultEnumerationCap);

/// Enumerates with noise-free oracle rewards.
Enumeration enumerate_outcomes(const SyntheticWorld& world, std::size_t problem,
                               const CalibrationParams& params, std::size_t max_len,
                               std::uint64_t cap = kDefaultEnumerationCap);

// ---------------------------------------------------------------------------
// Serialization (JSON, versioned)

inline constexpr int kWorldFormatVersion = 1;

std::string world_to_json(const SyntheticWorld& world);
SyntheticWorld world_from_json(const std::string& text);
void save_world(const SyntheticWorld& world, const std::string& path);
SyntheticWorld load_world(const std::string& path);

}  // namespace ttcal
