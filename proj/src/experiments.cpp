#include "ttcal/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ttcal/parallel.hpp"
#include "ttcal/theory.hpp"

namespace ttcal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<TokenId> kSpecialTokens{kEndToken, kStepToken, kAnswerToken};

MethodOutcome outcome(const RewardOracle& oracle, std::size_t problem, std::string method,
                      std::size_t n, const SelectionResult& s, std::size_t samples) {
  MethodOutcome m;
  m.method = std::move(method);
  m.n = n;
  m.answer = s.answer;
  m.correct = oracle.is_correct(problem, s.answer);
  m.best_score = s.best_score;
  m.samples = samples;
  return m;
}

std::vector<Tokens> tokens_of(const std::vector<Completion>& c) {
  std::vector<Tokens> out;
  out.reserve(c.size());
  for (const auto& x : c) out.push_back(x.tokens);
  return out;
}

std::vector<Tokens> top_k_tokens(const std::vector<Completion>& c, std::size_t k) {
  std::vector<Tokens> out;
  for (std::size_t i : top_k_indices(c, k)) out.push_back(c[i].tokens);
  return out;
}

}  // namespace

CarbonComparison compare_carbon(const SyntheticWorld& world, const RewardOracle& oracle,
                                std::size_t problem, const BudgetPlan& plan,
                                const TrainConfig& train, SelectionRule rule,
                                std::uint64_t run_seed) {
  const std::size_t n = plan.total;
  const CalibrationParams base = CalibrationParams::base(world.head().hidden(), train.base_temperature);
  // best_of_n(N) draws the first N rollouts of stream 0, so one 2N draw serves both.
  const RolloutSet wide = sample_rollouts(world, oracle, problem, base, 2 * n, run_seed, 0, Phase::explore);
  const std::vector<Completion> narrow(wide.completions.begin(), wide.completions.begin() + long(n));

  CarbonComparison r;
  r.level = world.problem(problem).level;
  r.bon = outcome(oracle, problem, "bon", n, select(narrow, rule), n);
  r.bon_double = outcome(oracle, problem, "bon", 2 * n, select(wide.completions, rule), 2 * n);
  const CarbonResult c = carbon(world, oracle, problem, plan, train, rule, run_seed);
  r.carbon = outcome(oracle, problem, "carbon", n, c.selection, c.samples);
  r.params = c.params;
  r.fit_failed = c.fit_failed;
  r.union_max = c.union_max;
  r.exploit_max = c.exploit_max;
  r.union_dominates = c.union_max >= c.exploit_max;
  return r;
}

ProblemDiagnostics diagnose_problem(const SyntheticWorld& world, const RewardOracle& oracle,
                                    std::size_t problem, std::size_t budget,
                                    const TrainConfig& train, std::uint64_t run_seed) {
  const BudgetPlan plan = BudgetPlan::from_total(budget);
  const CalibrationParams base = CalibrationParams::base(world.head().hidden(), train.base_temperature);
  const RolloutSet explore =
      sample_rollouts(world, oracle, problem, base, plan.explore, run_seed, 0, Phase::explore);
  const std::vector<Tokens> top = top_k_tokens(explore.completions, plan.top_k);

  ProblemDiagnostics d;
  d.level = world.problem(problem).level;
  d.entropy = normalized_entropy(top, world.vocabulary().size);

  const FitResult full = calibrate_from(world, problem, explore, plan.top_k, train);
  d.temperature = full.params.temperature;

  TrainConfig shift_only = train;
  shift_only.learn_temperature = false;
  const FitResult shifted = calibrate_from(world, problem, explore, plan.top_k, shift_only);
  d.fit_failed = full.diverged || shifted.diverged;
  const CalibrationParams cal = shifted.diverged ? base : shifted.params;

  const std::size_t m = std::max<std::size_t>(1, plan.exploit);
  const TokenSet target = make_token_set(top, kSpecialTokens);
  const RolloutSet gc = sample_rollouts(world, oracle, problem, cal, m, run_seed, 1, Phase::exploit);
  const RolloutSet gu = sample_rollouts(world, oracle, problem, base, m, run_seed, 1, Phase::exploit);
  const TokenSet sc = make_token_set(tokens_of(gc.completions), kSpecialTokens);
  const TokenSet su = make_token_set(tokens_of(gu.completions), kSpecialTokens);
  // A generation set made only of structural tokens shares nothing with the target.
  d.calibrated = sc.empty() ? OverlapMetrics{} : overlap_metrics(target, sc);
  d.uncalibrated = su.empty() ? OverlapMetrics{} : overlap_metrics(target, su);
  return d;
}

// ---------------------------------------------------------------------------
// Runner

namespace {

struct Job {
  std::size_t units = 0;
  std::function<std::vector<json>(std::size_t)> run;
  // Writes CSV summaries from the full record list; returns file names.
  std::function<std::vector<std::string>(const std::vector<json>&, const fs::path&, RunSummary&)>
      summarize;
};

json answer_json(const std::optional<Tokens>& a) { return a ? json(*a) : json(nullptr); }

json params_json(const CalibrationParams& p) {
  return {{"temperature", p.temperature}, {"delta_norm", p.delta_norm()}};
}

json outcome_record(const std::string& sub, std::uint64_t seed, std::size_t problem, int level,
                    const MethodOutcome& m) {
  return {{"schema_version", kSchemaVersion},
          {"subcommand", sub},
          {"seed", seed},
          {"problem", problem},
          {"level", level},
          {"method", m.method},
          {"n", m.n},
          {"answer", answer_json(m.answer)},
          {"correct", m.correct},
          {"best_score", m.best_score},
          {"samples", m.samples}};
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.precision(17);
  return out;
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(10);
  s << x;
  return s.str();
}

// Accuracy table keyed by (method, n, level); level 0 is all levels.
struct AccuracyCell {
  std::size_t problems = 0;
  std::size_t correct = 0;
  double score = 0.0;
};

using AccuracyTable = std::map<std::tuple<std::string, std::size_t, int>, AccuracyCell>;

AccuracyTable accuracy_table(const std::vector<json>& records) {
  AccuracyTable t;
  for (const auto& r : records) {
    const auto method = r.at("method").get<std::string>();
    const auto n = r.at("n").get<std::size_t>();
    for (int level : {0, r.at("level").get<int>()}) {
      auto& c = t[{method, n, level}];
      ++c.problems;
      c.correct += r.at("correct").get<bool>();
      c.score += r.at("best_score").get<double>();
    }
  }
  return t;
}

void write_accuracy_csv(const fs::path& path, const AccuracyTable& t) {
  auto out = open_out(path);
  out << "method,n,level,problems,accuracy,mean_best_score\n";
  for (const auto& [key, c] : t) {
    const auto& [method, n, level] = key;
    out << method << ',' << n << ',' << (level == 0 ? std::string("all") : std::to_string(level)) << ','
        << c.problems << ',' << fmt(double(c.correct) / double(c.problems)) << ','
        << fmt(c.score / double(c.problems)) << '\n';
  }
}

Job bon_job(const ExperimentConfig& cfg, const SyntheticWorld& world, const RewardOracle& oracle) {
  Job job;
  job.units = world.n_problems();
  job.run = [&cfg, &world, &oracle](std::size_t p) {
    const std::size_t n_max = *std::max_element(cfg.bon_budgets.begin(), cfg.bon_budgets.end());
    const auto base = CalibrationParams::base(world.head().hidden(), cfg.train.base_temperature);
    const std::uint64_t seed = problem_seed(cfg.seed, p);
    const RolloutSet all = sample_rollouts(world, oracle, p, base, n_max, seed, 0, Phase::explore);
    std::vector<json> recs;
    for (std::size_t n : cfg.bon_budgets) {
      const std::vector<Completion> prefix(all.completions.begin(), all.completions.begin() + long(n));
      const auto m = outcome(oracle, p, "bon", n, select(prefix, cfg.rule), n);
      auto r = outcome_record("bon", seed, p, world.problem(p).level, m);
      r["params"] = params_json(base);
      recs.push_back(std::move(r));
    }
    return recs;
  };
  job.summarize = [](const std::vector<json>& recs, const fs::path& dir, RunSummary&) {
    write_accuracy_csv(dir / "summary.csv", accuracy_table(recs));
    return std::vector<std::string>{"summary.csv"};
  };
  return job;
}

Job carbon_job(const ExperimentConfig& cfg, const SyntheticWorld& world, const RewardOracle& oracle) {
  Job job;
  job.units = world.n_problems();
  job.run = [&cfg, &world, &oracle](std::size_t p) {
    const std::uint64_t seed = problem_seed(cfg.seed, p);
    const auto c = compare_carbon(world, oracle, p, cfg.carbon_plan(), cfg.train, cfg.rule, seed);
    const auto base = CalibrationParams::base(world.head().hidden(), cfg.train.base_temperature);
    std::vector<json> recs;
    for (const MethodOutcome* m : {&c.bon, &c.bon_double, &c.carbon}) {
      auto r = outcome_record("carbon", seed, p, c.level, *m);
      r["params"] = params_json(m == &c.carbon ? c.params : base);
      if (m == &c.carbon) {
        r["fit_failed"] = c.fit_failed;
        r["union_max"] = c.union_max;
        r["exploit_max"] = c.exploit_max;
        r["union_dominates"] = c.union_dominates;
      }
      recs.push_back(std::move(r));
    }
    return recs;
  };
  job.summarize = [](const std::vector<json>& recs, const fs::path& dir, RunSummary& s) {
    write_accuracy_csv(dir / "summary.csv", accuracy_table(recs));
    std::size_t runs = 0, violations = 0, failed_fits = 0;
    for (const auto& r : recs) {
      if (!r.contains("union_dominates")) continue;
      ++runs;
      violations += !r.at("union_dominates").get<bool>();
      failed_fits += r.at("fit_failed").get<bool>();
    }
    if (violations) {
      s.checks_passed = false;
      s.messages.push_back("union max below exploit max in " + std::to_string(violations) + " runs");
    }
    auto out = open_out(dir / "checks.csv");
    out << "check,runs,violations\nunion_dominance," << runs << ',' << violations << '\n'
        << "fit_failed," << runs << ',' << failed_fits << '\n';
    return std::vector<std::string>{"summary.csv", "checks.csv"};
  };
  return job;
}

Job beam_job(const ExperimentConfig& cfg, const SyntheticWorld& world, const RewardOracle& oracle) {
  Job job;
  job.units = world.n_problems();
  job.run = [&cfg, &world, &oracle](std::size_t p) {
    const std::uint64_t seed = problem_seed(cfg.seed, p);
    const std::size_t n = cfg.beam_budget;
    const int level = world.problem(p).level;
    const auto base = CalibrationParams::base(world.head().hidden(), cfg.train.base_temperature);
    std::vector<json> recs;
    for (std::size_t budget : {n, 2 * n}) {
      const auto b = beam_search(world, oracle, p, budget, cfg.beam_width, base, cfg.rule, seed);
      auto r = outcome_record("beam", seed, p, level,
                              outcome(oracle, p, "beam", budget, b.selection, b.finished.size()));
      r["params"] = params_json(base);
      r["partial"] = b.partial;
      r["rollout_equivalent"] = b.rollout_equivalent;
      recs.push_back(std::move(r));
    }
    const auto cb = calibrated_beam_search(world, oracle, p, n, cfg.beam_width, cfg.train, cfg.rule, seed);
    auto r = outcome_record("beam", seed, p, level,
                            outcome(oracle, p, "calibrated_beam", n, cb.selection,
                                    cb.explore.completions.size() + cb.beam.finished.size()));
    r["params"] = params_json(cb.params);
    r["partial"] = cb.beam.partial;
    r["rollout_equivalent"] = double(cb.explore.completions.size()) + cb.beam.rollout_equivalent;
    r["fit_failed"] = cb.fit_failed;
    recs.push_back(std::move(r));
    return recs;
  };
  job.summarize = [](const std::vector<json>& recs, const fs::path& dir, RunSummary&) {
    write_accuracy_csv(dir / "summary.csv", accuracy_table(recs));
    return std::vector<std::string>{"summary.csv"};
  };
  return job;
}

Job binsearch_job(const ExperimentConfig& cfg) {
  Job job;
  job.units = cfg.search_probes.size();
  job.run = [&cfg](std::size_t u) {
    SearchConfig base = cfg.search;
    base.seed = cfg.seed;
    const std::size_t n = cfg.search_probes[u];
    const SweepRow row = sweep(base, {n}, base.trials).front();
    // One example trace per n, same target for every n.
    SearchConfig one = base;
    one.probes = n;
    Rng target_rng(derive_seed(cfg.seed, 2));
    one.target = base.low + std::int64_t(target_rng() % std::uint64_t(base.high - base.low + 1));
    Rng noise(derive_seed(cfg.seed, 3, n));
    const SearchTrace trace = n == 0 ? vanilla_search(one.low, one.high, one.target)
                                     : reward_guided_search(one, noise);
    json r = {{"schema_version", kSchemaVersion},
              {"subcommand", "binsearch"},
              {"seed", cfg.seed},
              {"probes", row.probes},
              {"mean_steps", row.mean_steps},
              {"sd_steps", row.sd_steps},
              {"trials", row.trials},
              {"sigma", row.sigma},
              {"margin", row.margin},
              {"failures", row.failures},
              {"trace", json::parse(trace_to_json(trace))}};
    return std::vector<json>{r};
  };
  job.summarize = [](const std::vector<json>& recs, const fs::path& dir, RunSummary& s) {
    std::vector<SweepRow> rows;
    json traces = json::array();
    for (const auto& r : recs) {
      rows.push_back({r.at("probes"), r.at("mean_steps"), r.at("sd_steps"), r.at("trials"),
                      r.at("sigma"), r.at("margin"), r.at("failures")});
      traces.push_back({{"probes", r.at("probes")}, {"trace", r.at("trace")}});
      if (r.at("failures").get<std::size_t>() > 0) {
        s.checks_passed = false;
        s.messages.push_back("binsearch: failures at n=" + r.at("probes").dump());
      }
    }
    auto csv = open_out(dir / "sweep.csv");
    write_sweep_csv(csv, rows);
    auto tj = open_out(dir / "traces.json");
    tj << traces.dump(1) << '\n';
    return std::vector<std::string>{"sweep.csv", "traces.json"};
  };
  return job;
}

Job tempsweep_job(const ExperimentConfig& cfg, const SyntheticWorld& world, const RewardOracle& oracle) {
  Job job;
  job.units = world.n_problems();
  job.run = [&cfg, &world, &oracle](std::size_t p) {
    const std::uint64_t seed = problem_seed(cfg.seed, p);
    std::vector<json> recs;
    for (double t : cfg.temperatures) {
      const auto params = CalibrationParams::base(world.head().hidden(), t);
      const auto b = best_of_n(world, oracle, p, cfg.tempsweep_budget, params, cfg.rule, seed);
      auto r = outcome_record("tempsweep", seed, p, world.problem(p).level,
                              outcome(oracle, p, "bon", cfg.tempsweep_budget, b.selection,
                                      b.rollouts.completions.size()));
      r["params"] = params_json(params);
      r["temperature"] = t;
      r["mean_score"] = [&] {
        double s = 0.0;
        for (const auto& c : b.rollouts.completions) s += c.aggregate;
        return s / double(b.rollouts.completions.size());
      }();
      recs.push_back(std::move(r));
    }
    return recs;
  };
  job.summarize = [](const std::vector<json>& recs, const fs::path& dir, RunSummary&) {
    struct Cell {
      std::size_t problems = 0, correct = 0;
      double best = 0.0, mean = 0.0;
    };
    std::map<std::pair<double, int>, Cell> t;
    for (const auto& r : recs) {
      for (int level : {0, r.at("level").get<int>()}) {
        auto& c = t[{r.at("temperature").get<double>(), level}];
        ++c.problems;
        c.correct += r.at("correct").get<bool>();
        c.best += r.at("best_score").get<double>();
        c.mean += r.at("mean_score").get<double>();
      }
    }
    auto out = open_out(dir / "tempsweep.csv");
    out << "temperature,level,problems,accuracy,mean_best_score,mean_score\n";
    for (const auto& [key, c] : t) {
      out << fmt(key.first) << ',' << (key.second == 0 ? std::string("all") : std::to_string(key.second))
          << ',' << c.problems << ',' << fmt(double(c.correct) / double(c.problems)) << ','
          << fmt(c.best / double(c.problems)) << ',' << fmt(c.mean / double(c.problems)) << '\n';
    }
    return std::vector<std::string>{"tempsweep.csv"};
  };
  return job;
}

json overlap_json(const OverlapMetrics& m) {
  return {{"jaccard", m.jaccard}, {"dice", m.dice}, {"recall", m.recall}, {"precision", m.precision}};
}

OverlapMetrics overlap_from(const json& j) {
  return {j.at("jaccard"), j.at("dice"), j.at("recall"), j.at("precision")};
}

Job analyze_job(const ExperimentConfig& cfg, std::shared_ptr<std::vector<SyntheticWorld>> worlds) {
  Job job;
  job.units = cfg.analyze_seeds * cfg.analyze_problems;
  job.run = [&cfg, worlds](std::size_t u) {
    const std::size_t s = u / cfg.analyze_problems;
    const std::size_t p = u % cfg.analyze_problems;
    const SyntheticWorld& world = (*worlds)[s];
    const RewardOracle oracle(world);
    const std::uint64_t seed = derive_seed(cfg.seed, s, p);
    const auto d = diagnose_problem(world, oracle, p, cfg.analyze_budget, cfg.train, seed);
    json r = {{"schema_version", kSchemaVersion},
              {"subcommand", "analyze"},
              {"seed", seed},
              {"world_index", s},
              {"world_seed", world.seed()},
              {"problem", p},
              {"level", d.level},
              {"method", "calibration"},
              {"n", cfg.analyze_budget},
              {"temperature", d.temperature},
              {"entropy", d.entropy},
              {"calibrated", overlap_json(d.calibrated)},
              {"uncalibrated", overlap_json(d.uncalibrated)},
              {"fit_failed", d.fit_failed}};
    return std::vector<json>{r};
  };
  job.summarize = [&cfg](const std::vector<json>& recs, const fs::path& dir, RunSummary&) {
    const std::size_t seeds = cfg.analyze_seeds;
    // [seed][level] sums
    std::vector<std::map<int, std::array<double, 3>>> lv(seeds);
    std::vector<std::vector<OverlapMetrics>> cal(seeds), unc(seeds);
    for (const auto& r : recs) {
      const std::size_t s = r.at("world_index");
      auto& c = lv[s][r.at("level").get<int>()];
      c[0] += 1;
      c[1] += r.at("temperature").get<double>();
      c[2] += r.at("entropy").get<double>();
      cal[s].push_back(overlap_from(r.at("calibrated")));
      unc[s].push_back(overlap_from(r.at("uncalibrated")));
    }
    auto levels = open_out(dir / "levels.csv");
    levels << "world_index,level,problems,mean_temperature,mean_entropy\n";
    std::map<int, std::array<double, 3>> pooled;  // mean over seeds of level means
    auto corr = open_out(dir / "correlations.csv");
    corr << "world_index,rho_level_temperature,rho_level_entropy\n";
    auto rho_str = [](const std::optional<double>& r) { return r ? fmt(*r) : std::string("nan"); };
    double rho_t_sum = 0.0, rho_h_sum = 0.0;
    std::size_t rho_count = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      std::vector<double> x, t, h;
      for (const auto& [level, c] : lv[s]) {
        levels << s << ',' << level << ',' << c[0] << ',' << fmt(c[1] / c[0]) << ',' << fmt(c[2] / c[0]) << '\n';
        x.push_back(level);
        t.push_back(c[1] / c[0]);
        h.push_back(c[2] / c[0]);
        auto& p = pooled[level];
        p[0] += 1;
        p[1] += c[1] / c[0];
        p[2] += c[2] / c[0];
      }
      if (x.size() < 3) continue;
      const auto rt = spearman(x, t), rh = spearman(x, h);
      corr << s << ',' << rho_str(rt) << ',' << rho_str(rh) << '\n';
      if (rt && rh) {
        rho_t_sum += *rt;
        rho_h_sum += *rh;
        ++rho_count;
      }
    }
    std::vector<double> x, t, h;
    for (const auto& [level, p] : pooled) {
      levels << "mean," << level << ',' << p[0] << ',' << fmt(p[1] / p[0]) << ',' << fmt(p[2] / p[0]) << '\n';
      x.push_back(level);
      t.push_back(p[1] / p[0]);
      h.push_back(p[2] / p[0]);
    }
    if (rho_count)
      corr << "mean_of_seeds," << fmt(rho_t_sum / double(rho_count)) << ',' << fmt(rho_h_sum / double(rho_count)) << '\n';
    if (x.size() >= 3) corr << "seed_averaged_levels," << rho_str(spearman(x, t)) << ',' << rho_str(spearman(x, h)) << '\n';

    std::vector<std::string> labels;
    std::vector<OverlapMetrics> rows;
    for (std::size_t s = 0; s < seeds; ++s) {
      if (cal[s].empty()) continue;
      labels.push_back(std::to_string(s) + ",calibrated");
      rows.push_back(macro_average(cal[s]));
      labels.push_back(std::to_string(s) + ",uncalibrated");
      rows.push_back(macro_average(unc[s]));
    }
    auto ov = open_out(dir / "overlap.csv");
    write_overlap_csv(ov, labels, rows);
    return std::vector<std::string>{"levels.csv", "correlations.csv", "overlap.csv"};
  };
  return job;
}

// --- verify --------------------------------------------------------------

struct Check {
  std::string name;
  bool asserted = true;  // false: reported only
  bool passed = true;
  std::size_t cases = 0;
  std::size_t violations = 0;
  json detail = json::object();
};

void expect(Check& c, bool ok) {
  ++c.cases;
  if (!ok) {
    ++c.violations;
    c.passed = false;
  }
}

bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

Check check_closed_forms() {
  Check c{"closed_forms"};
  for (std::size_t n : {1, 2, 5, 16}) {
    expect(c, reward_lower_bound(1.0, 0.3, 1.0, n) == 1.0);
    expect(c, near(reward_lower_bound(1.0, 0.3, 0.0, n), 0.3, 1e-15));
    expect(c, lb_improvement(1.0, 0.3, 0.4, 0.4, n) == 0.0);
  }
  expect(c, near(reward_lower_bound(1.0, 0.0, 0.5, 2), 0.75, 1e-15));
  expect(c, near(lb_improvement(2.0, 1.0, 0.2, 0.5, 2), 0.39, 1e-15));
  const RewardLandscape two({0.5, 0.5}, {1.0, 0.0});
  expect(c, near(exact_expected_bon(two, 2), 0.75, 1e-15));
  const RewardLandscape three({0.2, 0.3, 0.5}, {1.0, 0.5, 0.0});
  expect(c, near(exact_expected_bon(three, 2), 0.555, 1e-15));
  expect(c, near(brute_force_expected_bon(three, 2), 0.555, 1e-15));
  expect(c, near(exact_expected_bon(three, 1), 0.2 + 0.15, 1e-15));
  return c;
}

RewardLandscape random_landscape(Rng& rng, std::size_t size) {
  std::vector<double> p(size), r(size);
  double sum = 0.0;
  for (auto& x : p) sum += (x = uniform01(rng) + 1e-3);
  for (auto& x : p) x /= sum;
  for (auto& x : r) x = uniform01(rng);
  // Make the optimum strict.
  const auto it = std::max_element(r.begin(), r.end());
  *it += 1e-3;
  return RewardLandscape(std::move(p), std::move(r));
}

// exact E[max] against r* - (1-p)^n (r* - r_other) on random landscapes.
// below: exact >= formula, the direction the formula is named for.
// above: exact <= formula + 1e-12, which follows from E[max | no y*] <= r_other.
std::pair<Check, Check> check_bound_directions(const ExperimentConfig& cfg) {
  Check below{"bound_below_expected_max"}, above{"bound_above_expected_max"};
  below.asserted = false;
  Rng rng(derive_seed(cfg.seed, 10));
  double min_gap = INFINITY, max_gap = -INFINITY;
  std::size_t brute = 0;
  for (std::size_t i = 0; i < cfg.verify_landscapes; ++i) {
    const std::size_t size = 2 + rng() % 49;
    const RewardLandscape l = random_landscape(rng, size);
    for (std::size_t n : {1, 2, 4, 8}) {
      const double exact = exact_expected_bon(l, n);
      const double lb = reward_lower_bound(l.r_star(), l.r_other_max(), l.p_star(), n);
      expect(below, exact >= lb - 1e-12);
      expect(above, exact <= lb + 1e-12);
      min_gap = std::min(min_gap, exact - lb);
      max_gap = std::max(max_gap, exact - lb);
      if (size <= 6 && n <= 4) {
        expect(above, near(exact, brute_force_expected_bon(l, n), 1e-12));
        ++brute;
      }
    }
  }
  below.detail = above.detail = {{"landscapes", cfg.verify_landscapes},
                                 {"min_exact_minus_bound", min_gap},
                                 {"max_exact_minus_bound", max_gap},
                                 {"brute_force_cases", brute}};
  return {below, above};
}

Check check_tightness(const ExperimentConfig& cfg) {
  Check c{"tightness"};
  Rng rng(derive_seed(cfg.seed, 11));
  double worst = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    // Several suboptimal outcomes sharing one reward value.
    const std::size_t size = 2 + rng() % 8;
    std::vector<double> p(size);
    double sum = 0.0;
    for (auto& x : p) sum += (x = uniform01(rng) + 1e-3);
    for (auto& x : p) x /= sum;
    const double lo = uniform01(rng);
    std::vector<double> r(size, lo);
    r[rng() % size] = lo + 0.01 + uniform01(rng);
    const RewardLandscape l(p, r);
    for (std::size_t n : cfg.verify_ns) {
      const double gap = std::fabs(exact_expected_bon(l, n) -
                                   reward_lower_bound(l.r_star(), l.r_other_max(), l.p_star(), n));
      worst = std::max(worst, gap);
      expect(c, gap <= 1e-12);
    }
  }
  c.detail = {{"max_abs_gap", worst}};
  return c;
}

Check check_monotone_bound(const ExperimentConfig& cfg) {
  Check c{"monotone_bound"};
  const double h = 1e-6;
  for (std::size_t n : cfg.verify_ns)
    for (int i = 0; i < 100; ++i) {
      const double p = i / 100.0;
      // Forward difference through lb_improvement, which avoids cancellation against r*.
    expect(c, lb_improvement(1.0, 0.2, p, p + h, n) / h > 0.0);
    }
  Rng rng(derive_seed(cfg.seed, 12));
  for (int i = 0; i < 10000; ++i) {
    const double pb = uniform01(rng), pc = pb + (1.0 - pb) * (uniform01(rng) * 0.999 + 0.001);
    const double rs = uniform01(rng) + 1.0, ro = uniform01(rng);
    expect(c, lb_improvement(rs, ro, pb, pc, 1 + rng() % 16) > 0.0);
  }
  return c;
}

// Tiny world whose outcome space can be enumerated exactly.
WorldConfig enumerable_world() {
  WorldConfig w;
  w.vocab_size = 6;
  w.hidden_dim = 4;
  w.n_problems = 20;
  w.reasoning_steps = 1;
  w.step_tokens = 1;
  w.answer_tokens = 1;
  w.max_len = 5;
  return w;
}

Check check_dominance(const ExperimentConfig& cfg) {
  Check c{"dominance_on_enumerable_world"};
  WorldConfig wc = enumerable_world();
  wc.n_problems = cfg.verify_problems;
  const SyntheticWorld world = make_world(derive_seed(cfg.world_seed, 13), wc);
  const RewardOracle oracle(world);
  const BudgetPlan plan = BudgetPlan::from_total(cfg.carbon_budget);
  const auto base = CalibrationParams::base(wc.hidden_dim, cfg.train.base_temperature);
  std::size_t raised = 0, cdf = 0;
  json rows = json::array();
  for (std::size_t p = 0; p < world.n_problems(); ++p) {
    const std::uint64_t seed = problem_seed(cfg.seed, p);
    const RolloutSet explore = sample_rollouts(world, oracle, p, base, plan.explore, seed, 0, Phase::explore);
    const FitResult f = calibrate_from(world, p, explore, plan.top_k, cfg.train);
    const auto lb = landscape_from_enumeration(enumerate_outcomes(world, p, base, wc.max_len));
    const auto lc = landscape_from_enumeration(enumerate_outcomes(world, p, f.params, wc.max_len));
    const DominanceReport rep = dominance_check(lb, lc, cfg.verify_ns);
    const bool rose = lc.p_star() > lb.p_star();
    raised += rose;
    cdf += rep.cdf_dominates;
    // The bound must improve at every n whenever calibration raised p(y*).
    if (rose) expect(c, rep.bound_improves);
    for (const auto& row : rep.rows) {
      expect(c, row.exact_base <= row.lb_base + 1e-12);
      expect(c, row.exact_cal <= row.lb_cal + 1e-12);
    }
    rows.push_back({{"problem", p},
                    {"p_base", lb.p_star()},
                    {"p_cal", lc.p_star()},
                    {"bound_improves", rep.bound_improves},
                    {"cdf_dominates", rep.cdf_dominates}});
  }
  c.detail = {{"problems", world.n_problems()},
              {"p_star_raised", raised},
              {"cdf_dominates", cdf},
              {"rows", rows}};
  return c;
}

Job verify_job(const ExperimentConfig& cfg) {
  using Fn = std::function<Check()>;
  auto checks = std::make_shared<std::vector<Fn>>(std::vector<Fn>{
      [] { return check_closed_forms(); },
      [&cfg] { return check_bound_directions(cfg).first; },
      [&cfg] { return check_bound_directions(cfg).second; },
      [&cfg] { return check_tightness(cfg); },
      [&cfg] { return check_monotone_bound(cfg); },
      [&cfg] { return check_dominance(cfg); },
  });
  Job job;
  job.units = checks->size();
  job.run = [checks, &cfg](std::size_t u) {
    const Check c = (*checks)[u]();
    json r = {{"schema_version", kSchemaVersion},
              {"subcommand", "verify"},
              {"seed", cfg.seed},
              {"check", c.name},
              {"passed", c.passed},
              {"asserted", c.asserted},
              {"cases", c.cases},
              {"violations", c.violations},
              {"detail", c.detail}};
    return std::vector<json>{r};
  };
  job.summarize = [](const std::vector<json>& recs, const fs::path& dir, RunSummary& s) {
    auto out = open_out(dir / "verify.csv");
    out << "check,asserted,passed,cases,violations\n";
    for (const auto& r : recs) {
      const bool ok = r.at("passed"), asserted = r.at("asserted");
      out << r.at("check").get<std::string>() << ',' << (asserted ? "true" : "false") << ','
          << (ok ? "true" : "false") << ',' << r.at("cases") << ',' << r.at("violations") << '\n';
      if (!ok && asserted) {
        s.checks_passed = false;
        s.messages.push_back("verify: " + r.at("check").get<std::string>() + " failed");
      }
    }
    // Dominance table on the enumerable world, one block per problem.
    for (const auto& r : recs) {
      if (r.at("check") != "dominance_on_enumerable_world") continue;
      auto d = open_out(dir / "dominance.csv");
      d << "problem,p_base,p_cal,bound_improves,cdf_dominates\n";
      for (const auto& row : r.at("detail").at("rows"))
        d << row.at("problem") << ',' << fmt(row.at("p_base")) << ',' << fmt(row.at("p_cal")) << ','
          << row.at("bound_improves") << ',' << row.at("cdf_dominates") << '\n';
    }
    return std::vector<std::string>{"verify.csv", "dominance.csv"};
  };
  return job;
}

// --- files ----------------------------------------------------------------

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<json> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const auto& subs = subcommands();
  if (std::find(subs.begin(), subs.end(), options.subcommand) == subs.end())
    throw ConfigError("unknown subcommand '" + options.subcommand + "'");
  config.world.validate();
  config.train.validate();
  (void)config.carbon_plan();
  if (config.bon_budgets.empty() || config.search_probes.empty() || config.temperatures.empty())
    throw ConfigError("empty list in config");

  const std::string& sub = options.subcommand;
  std::unique_ptr<SyntheticWorld> world;
  std::unique_ptr<RewardOracle> oracle;
  if (sub == "bon" || sub == "carbon" || sub == "beam" || sub == "tempsweep") {
    world = std::make_unique<SyntheticWorld>(make_world(config.world_seed, config.world));
    oracle = std::make_unique<RewardOracle>(*world);
  }
  Job job;
  if (sub == "bon") job = bon_job(config, *world, *oracle);
  else if (sub == "carbon") job = carbon_job(config, *world, *oracle);
  else if (sub == "beam") job = beam_job(config, *world, *oracle);
  else if (sub == "tempsweep") job = tempsweep_job(config, *world, *oracle);
  else if (sub == "binsearch") job = binsearch_job(config);
  else if (sub == "verify") job = verify_job(config);
  else {
    require(config.analyze_problems <= config.world.n_problems, "analyze.problems exceeds world.n_problems");
    auto worlds = std::make_shared<std::vector<SyntheticWorld>>();
    for (std::size_t s = 0; s < config.analyze_seeds; ++s)
      worlds->push_back(make_world(config.world_seed + s, config.world));
    job = analyze_job(config, worlds);
  }

  fs::create_directories(options.out);
  const fs::path results = options.out / "results.jsonl";
  const fs::path manifest = options.out / "manifest.json";
  const std::string hash = hex64(config_hash(config));

  RunSummary summary;
  summary.units_total = job.units;
  std::size_t done = 0;
  if (options.resume && fs::exists(manifest)) {
    std::ifstream in(manifest, std::ios::binary);
    json m;
    try {
      m = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(manifest.string() + ": unreadable manifest: " + e.what());
    }
    if (m.value("subcommand", "") != sub || m.value("config_hash", "") != hash)
      throw ConfigError(manifest.string() + ": manifest belongs to a different subcommand or config");
    done = m.at("completed_units").get<std::size_t>();
    const auto bytes = m.at("results_bytes").get<std::uintmax_t>();
    if (!fs::exists(results) || fs::file_size(results) < bytes)
      throw ConfigError(results.string() + ": shorter than the manifest records");
    fs::resize_file(results, bytes);  // drop records of an interrupted chunk
  } else {
    std::ofstream(results, std::ios::binary | std::ios::trunc);
  }

  auto write_manifest = [&](const std::string& status, const std::vector<std::string>& outputs) {
    json m = {{"schema_version", kSchemaVersion},
              {"tool_version", kToolVersion},
              {"subcommand", sub},
              {"seed", config.seed},
              {"world_seed", config.world_seed},
              {"config_hash", hash},
              {"config", canonical_config(config)},
              {"status", status},
              {"units_total", job.units},
              {"completed_units", done},
              {"results_bytes", fs::file_size(results)},
              {"outputs", outputs},
              {"checks_passed", summary.checks_passed}};
    write_atomic(manifest, m.dump(2) + "\n");
  };
  write_manifest(done == job.units ? "running" : "partial", {});

  const std::size_t chunk = std::max<std::size_t>(8, 4 * options.jobs);
  std::size_t fresh = 0;
  while (done < job.units && (options.max_units == 0 || fresh < options.max_units)) {
    std::size_t count = std::min(chunk, job.units - done);
    if (options.max_units) count = std::min(count, options.max_units - fresh);
    const std::size_t first = done;
    const auto recs = parallel_map(count, options.jobs, [&](std::size_t i) { return job.run(first + i); });
    {
      std::ofstream out(results, std::ios::binary | std::ios::app);
      for (const auto& unit : recs)
        for (const auto& r : unit) out << r.dump() << '\n';
      out.flush();
      if (!out) throw std::runtime_error("write failed: " + results.string());
    }
    done += count;
    fresh += count;
    write_manifest("partial", {});
  }
  summary.units_done = done;

  const std::vector<json> records = read_records(results);
  summary.records = records.size();
  if (done < job.units) {
    summary.messages.push_back("stopped after " + std::to_string(done) + " of " +
                               std::to_string(job.units) + " units; rerun with --resume");
    write_manifest("partial", {"results.jsonl"});
    return summary;
  }
  std::vector<std::string> outputs{"results.jsonl"};
  for (auto& f : job.summarize(records, options.out, summary)) outputs.push_back(std::move(f));
  summary.complete = true;
  write_manifest("complete", outputs);
  return summary;
}

}  // namespace ttcal
