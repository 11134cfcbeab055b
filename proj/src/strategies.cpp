#include "ttcal/strategies.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace ttcal {

const char* to_string(Phase p) { return p == Phase::explore ? "explore" : "exploit"; }
const char* to_string(SelectionRule r) { return r == SelectionRule::vanilla ? "vanilla" : "weighted"; }

SelectionRule parse_rule(const std::string& s) {
  if (s == "vanilla") return SelectionRule::vanilla;
  if (s == "weighted") return SelectionRule::weighted;
  throw ContractViolation("unknown selection rule '" + s + "' (expected vanilla or weighted)");
}

double RolloutSet::max_score() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& c : completions) m = std::max(m, c.aggregate);
  return m;
}

BudgetPlan BudgetPlan::from_total(std::size_t n) {
  BudgetPlan p;
  p.total = n;
  p.explore = n / 2;
  p.exploit = n - p.explore;
  p.top_k = std::max<std::size_t>(1, p.explore / 4);
  p.validate();
  return p;
}

void BudgetPlan::validate() const {
  require(total == explore + exploit, "BudgetPlan: N != N1 + N2");
  require(explore >= 1, "BudgetPlan: N1 must be >= 1");
  require(top_k >= 1 && top_k <= explore, "BudgetPlan: k must be in [1, N1]");
}

namespace {

std::vector<AnswerScore> answer_table(const std::vector<Completion>& c) {
  std::vector<AnswerScore> table;
  for (const auto& x : c) {
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const AnswerScore& a) { return a.answer == x.answer; });
    if (it == table.end()) {
      table.push_back({x.answer, x.aggregate, 1});
    } else {
      it->score += x.aggregate;
      ++it->count;
    }
  }
  return table;
}

double max_aggregate(const std::vector<Completion>& c) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& x : c) m = std::max(m, x.aggregate);
  return m;
}

}  // namespace

SelectionResult vanilla_select(const std::vector<Completion>& candidates) {
  require(!candidates.empty(), "select: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].aggregate > candidates[best].aggregate) best = i;
  SelectionResult r;
  r.rule = SelectionRule::vanilla;
  r.answer = candidates[best].answer;
  r.chosen = {best};
  r.table = answer_table(candidates);
  r.best_score = candidates[best].aggregate;
  return r;
}

SelectionResult weighted_select(const std::vector<Completion>& candidates) {
  require(!candidates.empty(), "select: no candidates");
  SelectionResult r;
  r.rule = SelectionRule::weighted;
  r.table = answer_table(candidates);
  std::size_t best = 0;
  for (std::size_t g = 1; g < r.table.size(); ++g)
    if (r.table[g].score > r.table[best].score) best = g;
  r.answer = r.table[best].answer;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].answer == r.answer) r.chosen.push_back(i);
  r.best_score = max_aggregate(candidates);
  return r;
}

SelectionResult select(const std::vector<Completion>& candidates, SelectionRule rule) {
  return rule == SelectionRule::vanilla ? vanilla_select(candidates) : weighted_select(candidates);
}

RolloutSet sample_rollouts(const SyntheticWorld& world, const RewardOracle& oracle,
                           std::size_t problem, const CalibrationParams& params, std::size_t n,
                           std::uint64_t run_seed, std::uint64_t stream, Phase phase,
                           std::size_t offset) {
  RolloutSet set;
  set.phase = phase;
  set.params = params;
  set.completions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = rollout_seed(run_seed, stream, offset + i);
    Rng rng(s);
    Tokens y = sample_completion(world, problem, params, rng, world.max_len());
    set.completions.push_back(oracle.score(problem, y, run_seed));
    set.seeds.push_back(s);
  }
  return set;
}

BonResult best_of_n(const SyntheticWorld& world, const RewardOracle& oracle, std::size_t problem,
                    std::size_t n, const CalibrationParams& params, SelectionRule rule,
                    std::uint64_t run_seed) {
  require(n >= 1, "best_of_n: n must be >= 1");
  BonResult r;
  r.rollouts = sample_rollouts(world, oracle, problem, params, n, run_seed, 0, Phase::explore);
  r.selection = select(r.rollouts.completions, rule);
  return r;
}

std::vector<std::size_t> top_k_indices(const std::vector<Completion>& c, std::size_t k) {
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return c[a].aggregate > c[b].aggregate; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

FitResult calibrate_from(const SyntheticWorld& world, std::size_t problem,
                         const RolloutSet& explore, std::size_t top_k, const TrainConfig& train) {
  std::vector<Tokens> chosen;
  for (std::size_t i : top_k_indices(explore.completions, top_k))
    chosen.push_back(explore.completions[i].tokens);
  return fit(build_cache(world, problem, chosen), world.head(), train);
}

CarbonResult carbon(const SyntheticWorld& world, const RewardOracle& oracle, std::size_t problem,
                    const BudgetPlan& plan, const TrainConfig& train, SelectionRule rule,
                    std::uint64_t run_seed) {
  plan.validate();
  train.validate();
  const CalibrationParams base = CalibrationParams::base(world.head().hidden(), train.base_temperature);

  CarbonResult r;
  r.explore = sample_rollouts(world, oracle, problem, base, plan.explore, run_seed, 0, Phase::explore);
  r.params = base;
  if (plan.exploit > 0) {
    r.fit = calibrate_from(world, problem, r.explore, plan.top_k, train);
    r.fit_failed = r.fit.diverged;
    r.params = r.fit_failed ? base : r.fit.params;
  }
  r.exploit = sample_rollouts(world, oracle, problem, r.params, plan.exploit, run_seed, 1, Phase::exploit);

  std::vector<Completion> all = r.explore.completions;
  all.insert(all.end(), r.exploit.completions.begin(), r.exploit.completions.end());
  r.selection = select(all, rule);
  r.union_max = max_aggregate(all);
  r.exploit_max = r.exploit.completions.empty() ? 0.0 : r.exploit.max_score();
  r.samples = all.size();
  return r;
}

// ---------------------------------------------------------------------------

namespace {

// Extends prefix by one step: tokens up to STEP, END or max_len.
std::size_t extend_step(const SyntheticWorld& world, std::size_t problem,
                        std::span<const double> shift, double temperature, Tokens& prefix, Rng& rng) {
  std::size_t added = 0;
  while (prefix.size() < world.max_len()) {
    const LogitVector g = world.logits(problem, prefix);
    const TokenId y = sample_token(calibrated_distribution_shifted(g, shift, temperature), rng);
    prefix.push_back(y);
    ++added;
    if (y == kStepToken || y == kEndToken) break;
  }
  return added;
}

struct Beam {
  Tokens tokens;
  double score;
};

}  // namespace

BeamResult beam_search(const SyntheticWorld& world, const RewardOracle& oracle,
                       std::size_t problem, std::size_t n, std::size_t width,
                       const CalibrationParams& params, SelectionRule rule, std::uint64_t run_seed,
                       std::uint64_t stream_id) {
  require(width >= 1 && n >= width, "beam_search: need n >= width >= 1");
  params.validate();
  const std::size_t keep = std::max<std::size_t>(1, n / width);
  const auto shift = world.head().apply(params.delta);
  const std::uint64_t stream = derive_seed(run_seed, stream_id);

  BeamResult r;
  std::vector<Completion> dead;
  std::vector<Beam> active;
  for (std::size_t level = 0;; ++level) {
    std::vector<Tokens> expanded;
    if (level == 0) {
      expanded.assign(n, Tokens{});
    } else {
      for (const auto& b : active)
        for (std::size_t w = 0; w < width; ++w) expanded.push_back(b.tokens);
    }
    std::vector<Beam> open;
    for (std::size_t j = 0; j < expanded.size(); ++j) {
      Rng rng(derive_seed(stream, level, j));
      Tokens& y = expanded[j];
      r.tokens_generated += extend_step(world, problem, shift, params.temperature, y, rng);
      if (y.back() == kEndToken) {
        r.finished.push_back(oracle.score(problem, y, run_seed));
      } else if (y.size() >= world.max_len()) {
        dead.push_back(oracle.score(problem, y, run_seed));
      } else {
        open.push_back({y, oracle.score(problem, y, run_seed, true).aggregate});
      }
    }
    if (open.empty()) break;
    std::stable_sort(open.begin(), open.end(),
                     [](const Beam& a, const Beam& b) { return a.score > b.score; });
    if (open.size() > keep) open.resize(keep);
    active = std::move(open);
  }

  if (!r.finished.empty()) {
    r.selection = select(r.finished, rule);
    double len = 0.0;
    for (const auto& c : r.finished) len += double(c.tokens.size());
    r.rollout_equivalent = double(r.tokens_generated) / (len / double(r.finished.size()));
  } else {
    r.partial = true;
    r.selection = select(dead, rule);
    r.rollout_equivalent = double(r.tokens_generated) / double(world.max_len());
  }
  return r;
}

CalibratedBeamResult calibrated_beam_search(const SyntheticWorld& world,
                                            const RewardOracle& oracle, std::size_t problem,
                                            std::size_t n, std::size_t width,
                                            const TrainConfig& train, SelectionRule rule,
                                            std::uint64_t run_seed) {
  require(n >= 2, "calibrated_beam_search: n must be >= 2");
  train.validate();
  const BudgetPlan plan = BudgetPlan::from_total(n);
  const CalibrationParams base = CalibrationParams::base(world.head().hidden(), train.base_temperature);

  CalibratedBeamResult r;
  r.explore = sample_rollouts(world, oracle, problem, base, plan.explore, run_seed, 0, Phase::explore);
  const FitResult f = calibrate_from(world, problem, r.explore, plan.top_k, train);
  r.fit_failed = f.diverged;
  r.params = f.diverged ? base : f.params;
  const std::size_t beam_n = std::max(plan.exploit, width);
  r.beam = beam_search(world, oracle, problem, beam_n, std::min(width, beam_n), r.params, rule,
                       run_seed, 3);

  std::vector<Completion> all = r.explore.completions;
  all.insert(all.end(), r.beam.finished.begin(), r.beam.finished.end());
  r.selection = select(all, rule);
  return r;
}

}  // namespace ttcal
