#include "ttcal/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ttcal {

void WorldConfig::validate() const {
  require(vocab_size >= 4, "WorldConfig: vocab_size must be >= 4");
  require(hidden_dim >= kReservedTokens + 1,
          "WorldConfig: hidden_dim must leave at least one content dimension (>= 4)");
  require(hidden_dim < vocab_size, "WorldConfig: hidden_dim must be < vocab_size");
  require(n_problems >= 1, "WorldConfig: n_problems must be >= 1");
  require(!levels.empty(), "WorldConfig: empty difficulty profile");
  for (int l : levels) require(l >= 1 && l <= kMaxDifficulty, "WorldConfig: level outside 1..5");
  require(reasoning_steps >= 1 && step_tokens >= 1 && answer_tokens >= 1,
          "WorldConfig: gold path components must be non-empty");
  require(max_len >= 1, "WorldConfig: max_len must be >= 1");
  require(reward_noise >= 0.0, "WorldConfig: reward_noise must be >= 0");
  for (const auto& lp : profile)
    require(lp.noise_scale >= 0.0 && std::isfinite(lp.noise_scale),
            "WorldConfig: level noise_scale must be >= 0");
  require(floor_score >= 0.0 && floor_score < 1.0, "WorldConfig: floor_score must be in [0, 1)");
  require(answer_weight >= 0.0 && answer_weight < 1.0,
          "WorldConfig: answer_weight must be in [0, 1)");
  require(head_scale > 0.0 && structure_strength > 0.0, "WorldConfig: scales must be > 0");
  require(context_decay >= 0.0 && context_decay < 1.0, "WorldConfig: context_decay in [0, 1)");
  if (gold_length() > max_len) {
    throw ConstructionError("WorldConfig: gold path length " + std::to_string(gold_length()) +
                            " exceeds max_len " + std::to_string(max_len));
  }
}

namespace {

std::size_t content_count(const WorldConfig& c) { return c.vocab_size - kReservedTokens; }

TokenId draw_content(Rng& rng, std::size_t n_content) {
  std::uniform_int_distribution<std::size_t> pick(0, n_content - 1);
  return static_cast<TokenId>(kReservedTokens + pick(rng));
}

TokenId draw_content_except(Rng& rng, std::size_t n_content, const Tokens& excluded) {
  for (;;) {
    TokenId t = draw_content(rng, n_content);
    if (std::find(excluded.begin(), excluded.end(), t) == excluded.end()) return t;
  }
}

}  // namespace

SyntheticWorld make_world(std::uint64_t seed, const WorldConfig& config) {
  config.validate();
  const std::size_t V = config.vocab_size;
  const std::size_t d = config.hidden_dim;
  const std::size_t dc = d - kReservedTokens;
  const std::size_t n_content = content_count(config);

  Rng rng(derive_seed(seed, 0));
  std::vector<double> w(V * d, 0.0);
  for (std::size_t s = 0; s < kReservedTokens; ++s) w[s * d + s] = config.structure_strength;
  std::normal_distribution<double> head_dist(0.0, config.head_scale / std::sqrt(double(dc)));
  for (std::size_t v = kReservedTokens; v < V; ++v)
    for (std::size_t j = kReservedTokens; j < d; ++j) w[v * d + j] = head_dist(rng);
  LmHead head(V, d, std::move(w));

  std::normal_distribution<double> emb_dist(0.0, 1.0 / config.head_scale);
  std::vector<double> last(V * dc), bag(V * dc);
  for (double& x : last) x = emb_dist(rng);
  for (double& x : bag) x = emb_dist(rng);

  const std::size_t n_distractor_cap = n_content - 1;
  std::vector<Problem> problems;
  problems.reserve(config.n_problems);
  for (std::size_t i = 0; i < config.n_problems; ++i) {
    // Per-problem stream independent of the difficulty profile, so the same
    // seed yields the same gold path at every level.
    Rng prng(derive_seed(seed, 1, i));
    Problem p;
    p.level = config.levels[i % config.levels.size()];
    const std::size_t n_dis =
        std::min(config.profile[p.level - 1].distractors, n_distractor_cap);
    for (std::size_t s = 0; s < config.reasoning_steps; ++s) {
      Tokens step;
      std::vector<Tokens> slots;
      for (std::size_t k = 0; k < config.step_tokens; ++k) {
        const TokenId g = draw_content(prng, n_content);
        step.push_back(g);
        Tokens dis;
        Tokens excluded{g};
        // Draw the full cap so that levels with fewer distractors take a
        // prefix of the same list.
        for (std::size_t q = 0; q < std::min<std::size_t>(kMaxDifficulty, n_distractor_cap); ++q) {
          const TokenId t = draw_content_except(prng, n_content, excluded);
          excluded.push_back(t);
          if (q < n_dis) dis.push_back(t);
        }
        slots.push_back(std::move(dis));
      }
      p.gold_steps.push_back(std::move(step));
      p.distractors.push_back(std::move(slots));
    }
    for (std::size_t k = 0; k < config.answer_tokens; ++k) p.answer.push_back(draw_content(prng, n_content));
    p.wrong_answer = p.answer;
    if (n_content >= 2) p.wrong_answer[0] = draw_content_except(prng, n_content, {p.answer[0]});

    std::vector<double> dir(dc, 0.0);
    auto accumulate = [&](TokenId t) {
      auto row = head.row(t);
      for (std::size_t j = 0; j < dc; ++j) dir[j] += row[kReservedTokens + j];
    };
    for (const auto& step : p.gold_steps)
      for (TokenId t : step) accumulate(t);
    for (TokenId t : p.answer) accumulate(t);
    const double norm = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
    for (double& x : dir) x = norm > 0.0 ? x / norm : 0.0;
    p.bias_direction = std::move(dir);

    for (const auto& step : p.gold_steps) {
      p.gold.insert(p.gold.end(), step.begin(), step.end());
      p.gold.push_back(kStepToken);
    }
    p.gold.push_back(kAnswerToken);
    p.gold.insert(p.gold.end(), p.answer.begin(), p.answer.end());
    p.gold.push_back(kEndToken);
    problems.push_back(std::move(p));
  }
  return SyntheticWorld(seed, config, std::move(head), std::move(last), std::move(bag),
                        std::move(problems));
}

SyntheticWorld::SyntheticWorld(std::uint64_t seed, WorldConfig config, LmHead head,
                               std::vector<double> last_embedding,
                               std::vector<double> bag_embedding, std::vector<Problem> problems)
    : seed_(seed),
      config_(std::move(config)),
      vocab_(config_.vocab_size, kEndToken),
      head_(std::move(head)),
      last_embedding_(std::move(last_embedding)),
      bag_embedding_(std::move(bag_embedding)),
      problems_(std::move(problems)) {
  config_.validate();
  const std::size_t dc = config_.hidden_dim - kReservedTokens;
  require(head_.vocab() == config_.vocab_size && head_.hidden() == config_.hidden_dim,
          "SyntheticWorld: head shape does not match config");
  require(last_embedding_.size() == config_.vocab_size * dc &&
              bag_embedding_.size() == config_.vocab_size * dc,
          "SyntheticWorld: embedding table shape mismatch");
  require(!problems_.empty(), "SyntheticWorld: no problems");
  for (const auto& p : problems_) {
    require(p.gold.size() <= config_.max_len, "SyntheticWorld: gold path longer than max_len");
    require(!p.gold.empty() && p.gold.back() == kEndToken, "SyntheticWorld: gold must end with END");
    require(p.gold_steps.size() == config_.reasoning_steps &&
                p.answer.size() == config_.answer_tokens &&
                p.wrong_answer.size() == config_.answer_tokens && p.bias_direction.size() == dc,
            "SyntheticWorld: problem shape mismatch");
    for (TokenId t : p.gold) require(vocab_.contains(t), "SyntheticWorld: gold token out of range");
  }
}

bool SyntheticWorld::operator==(const SyntheticWorld& o) const {
  return seed_ == o.seed_ && head_ == o.head_ && last_embedding_ == o.last_embedding_ &&
         bag_embedding_ == o.bag_embedding_ && problems_ == o.problems_ &&
         config_.vocab_size == o.config_.vocab_size && config_.hidden_dim == o.config_.hidden_dim &&
         config_.max_len == o.config_.max_len;
}

std::vector<double> SyntheticWorld::unit_direction(TokenId v) const {
  const std::size_t dc = config_.hidden_dim - kReservedTokens;
  auto row = head_.row(v);
  std::vector<double> u(row.begin() + kReservedTokens, row.end());
  const double sq = std::inner_product(u.begin(), u.end(), u.begin(), 0.0);
  for (std::size_t j = 0; j < dc; ++j) u[j] = sq > 0.0 ? u[j] / sq : 0.0;
  return u;
}

std::vector<double> SyntheticWorld::hidden_state(std::size_t problem,
                                                 std::span<const TokenId> prefix) const {
  const Problem& p = problems_.at(problem);
  const WorldConfig& c = config_;
  const std::size_t d = c.hidden_dim;
  const std::size_t dc = d - kReservedTokens;

  std::size_t steps_done = 0, in_step = 0, answer_count = 0, matched = 0;
  bool answering = false;
  for (TokenId y : prefix) {
    if (answering) {
      ++answer_count;
    } else if (y == kStepToken) {
      ++steps_done;
      in_step = 0;
    } else if (y == kAnswerToken) {
      answering = true;
    } else {
      if (steps_done < c.reasoning_steps && in_step < c.step_tokens &&
          p.gold_steps[steps_done][in_step] == y)
        ++matched;
      ++in_step;
    }
  }

  std::vector<double> h(d, 0.0);
  for (std::size_t s = 0; s < kReservedTokens; ++s) h[s] = -1.0;
  double* hc = h.data() + kReservedTokens;

  if (!prefix.empty()) {
    const double* last = last_embedding_.data() + std::size_t(prefix.back()) * dc;
    std::vector<double> bag(dc, 0.0);
    for (TokenId y : prefix) {
      const double* e = bag_embedding_.data() + std::size_t(y) * dc;
      for (std::size_t j = 0; j < dc; ++j)
        bag[j] = c.context_decay * bag[j] + (1.0 - c.context_decay) * e[j];
    }
    for (std::size_t j = 0; j < dc; ++j) hc[j] += c.context_scale * (last[j] + bag[j]);
  }

  auto add = [&](TokenId v, double strength) {
    if (strength == 0.0) return;
    const auto u = unit_direction(v);
    for (std::size_t j = 0; j < dc; ++j) hc[j] += strength * u[j];
  };
  auto add_bias = [&] {
    for (std::size_t j = 0; j < dc; ++j) hc[j] -= c.miscalibration * p.bias_direction[j] / c.head_scale;
  };

  if (answering) {
    if (answer_count < c.answer_tokens) {
      const double total = double(c.reasoning_steps * c.step_tokens);
      const double agreement = std::pow(double(matched) / total, c.answer_agreement_power);
      add(p.answer[answer_count], c.answer_strength * agreement);
      add(p.wrong_answer[answer_count], c.profile[p.level - 1].answer_distractor);
      add_bias();
    } else {
      h[kEndToken] = 1.0;
    }
  } else if (steps_done >= c.reasoning_steps) {
    h[kAnswerToken] = 1.0;
  } else if (in_step >= c.step_tokens) {
    h[kStepToken] = 1.0;
  } else {
    const LevelProfile& lp = c.profile[p.level - 1];
    add(p.gold_steps[steps_done][in_step], lp.gold_strength);
    for (TokenId q : p.distractors[steps_done][in_step]) add(q, lp.distractor_strength);
    add_bias();
  }
  return h;
}

LogitVector SyntheticWorld::logits(std::size_t problem, std::span<const TokenId> prefix) const {
  return head_.apply(hidden_state(problem, prefix));
}

// ---------------------------------------------------------------------------

std::optional<Tokens> extract_answer(const Tokens& completion) {
  auto it = std::find(completion.rbegin(), completion.rend(), kAnswerToken);
  if (it == completion.rend()) return std::nullopt;
  Tokens ans;
  for (auto fwd = it.base(); fwd != completion.end() && *fwd != kEndToken; ++fwd) ans.push_back(*fwd);
  return ans;
}

std::vector<Tokens> split_steps(const Tokens& completion) {
  std::vector<Tokens> segs(1);
  for (TokenId t : completion) {
    segs.back().push_back(t);
    if (t == kStepToken) segs.emplace_back();
  }
  if (segs.back().empty()) segs.pop_back();
  return segs;
}

namespace {

double positional_agreement(const Tokens& a, const Tokens& b) {
  const std::size_t n = std::max(a.size(), b.size());
  if (n == 0) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) same += a[i] == b[i];
  return double(same) / double(n);
}

}  // namespace

RewardOracle::RewardOracle(const SyntheticWorld& world, double noise) : world_(&world), noise_(noise) {
  require(noise >= 0.0, "RewardOracle: noise must be >= 0");
}

bool RewardOracle::is_correct(std::size_t problem, const std::optional<Tokens>& answer) const {
  return answer.has_value() && *answer == world_->problem(problem).answer;
}

Completion RewardOracle::score(std::size_t problem, const Tokens& completion,
                               std::uint64_t noise_seed, bool partial) const {
  require(!completion.empty(), "RewardOracle::score: empty completion");
  const WorldConfig& c = world_->config();
  const Problem& p = world_->problem(problem);
  const auto segs = split_steps(completion);
  const auto gold = split_steps(p.gold);

  Completion out;
  out.tokens = completion;
  out.answer = extract_answer(completion);
  const bool correct = is_correct(problem, out.answer);

  const double sigma = noise_ * c.profile[p.level - 1].noise_scale;
  Rng rng(derive_seed(noise_seed, problem, hash_tokens(completion)));
  std::normal_distribution<double> eps(0.0, sigma > 0.0 ? sigma : 1.0);

  const std::size_t m = segs.size();
  const std::size_t G = gold.size();
  double cumulative = 0.0;
  for (std::size_t i = 1; i <= m; ++i) {
    if (i <= G) cumulative += positional_agreement(segs[i - 1], gold[i - 1]);
    double quality;
    if (i < m || partial) {
      quality = (1.0 - c.answer_weight) * cumulative / double(i);
    } else {
      quality = (1.0 - c.answer_weight) * cumulative / double(std::max(m, G)) +
                c.answer_weight * (correct ? 1.0 : 0.0);
    }
    double s = c.floor_score + (1.0 - c.floor_score) * quality;
    if (sigma > 0.0) s += eps(rng);
    out.step_scores.push_back(std::clamp(s, 0.0, 1.0));
  }
  out.aggregate = out.step_scores.back();
  return out;
}

Completion score_completion(const RewardOracle& oracle, std::size_t problem,
                            const Tokens& completion, std::uint64_t noise_seed) {
  return oracle.score(problem, completion, noise_seed);
}

// ---------------------------------------------------------------------------

double Enumeration::total_mass() const {
  double s = residual_mass;
  for (const auto& o : outcomes) s += o.probability;
  return s;
}

std::uint64_t enumeration_size(std::size_t vocab, std::size_t max_len) {
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t branch = vocab - 1;
  std::uint64_t total = 0, level = 1;  // level = branch^(l-1)
  for (std::size_t l = 1; l <= max_len + 1; ++l) {
    if (total > kMax - level) return kMax;
    total += level;
    if (branch != 0 && level > kMax / branch) {
      if (l < max_len + 1) return kMax;
    } else {
      level *= branch;
    }
  }
  return total;
}

namespace {

void enumerate_rec(const ArModel& model, std::size_t problem, const std::vector<double>& shift,
                   double temperature, std::size_t max_len, const RewardFn& reward, Tokens& prefix,
                   double mass, Enumeration& out) {
  const LogitVector g = model.logits(problem, prefix);
  const ProbabilityVector q = calibrated_distribution_shifted(g, shift, temperature);
  const TokenId end = model.vocabulary().end;
  for (std::size_t y = 0; y < q.size(); ++y) {
    const double pm = mass * q[y];
    prefix.push_back(static_cast<TokenId>(y));
    if (y == end) {
      out.outcomes.push_back({prefix, pm, reward(prefix)});
    } else if (prefix.size() == max_len) {
      out.residual_mass += pm;
      ++out.truncated;
    } else {
      enumerate_rec(model, problem, shift, temperature, max_len, reward, prefix, pm, out);
    }
    prefix.pop_back();
  }
}

}  // namespace

Enumeration enumerate_outcomes(const ArModel& model, std::size_t problem,
                               const CalibrationParams& params, std::size_t max_len,
                               const RewardFn& reward, std::uint64_t cap) {
  require(max_len >= 1, "enumerate_outcomes: max_len must be >= 1");
  params.validate();
  const std::uint64_t need = enumeration_size(model.vocabulary().size, max_len);
  if (need > cap) throw CapExceeded("enumerate_outcomes", need, cap);
  const auto shift = model.head().apply(params.delta);
  Enumeration out;
  Tokens prefix;
  enumerate_rec(model, problem, shift, params.temperature, max_len, reward, prefix, 1.0, out);
  return out;
}

Enumeration enumerate_outcomes(const SyntheticWorld& world, std::size_t problem,
                               const CalibrationParams& params, std::size_t max_len,
                               std::uint64_t cap) {
  const RewardOracle oracle(world, 0.0);
  return enumerate_outcomes(
      world, problem, params, max_len,
      [&](const Tokens& y) { return oracle.score(problem, y, 0).aggregate; }, cap);
}

}  // namespace ttcal
