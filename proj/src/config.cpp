#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ttcal/experiments.hpp"

namespace ttcal {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("bad value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string v = trim(text);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean '" + v + "' for " + key);
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string fmt(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}
std::string fmt(std::uint64_t x) { return std::to_string(x); }
std::string fmt(int x) { return std::to_string(x); }
std::string fmt(bool x) { return x ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>)
      s += fmt(double(v[i]));
    else
      s += std::to_string(v[i]);
  }
  return s;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define TTCAL_FIELD(path, T)                                                                  \
  Field {                                                                                     \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) {                     \
      c.path = parse_number<T>(k, v);                                                         \
    },                                                                                        \
        [](const ExperimentConfig& c) {                                                       \
          return fmt(static_cast<std::conditional_t<std::is_floating_point_v<T>, double,      \
                                                    std::conditional_t<std::is_signed_v<T>, int, \
                                                                       std::uint64_t>>>(c.path)); \
        }                                                                                     \
  }

#define TTCAL_LIST(path, T)                                                                      \
  Field {                                                                                        \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) {                        \
      c.path = parse_list<T>(k, v);                                                              \
    },                                                                                           \
        [](const ExperimentConfig& c) { return fmt_list(c.path); }                               \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["seed"] = TTCAL_FIELD(seed, std::uint64_t);
    f["world.seed"] = TTCAL_FIELD(world_seed, std::uint64_t);
    f["world.vocab_size"] = TTCAL_FIELD(world.vocab_size, std::size_t);
    f["world.hidden_dim"] = TTCAL_FIELD(world.hidden_dim, std::size_t);
    f["world.n_problems"] = TTCAL_FIELD(world.n_problems, std::size_t);
    f["world.levels"] = TTCAL_LIST(world.levels, int);
    f["world.reasoning_steps"] = TTCAL_FIELD(world.reasoning_steps, std::size_t);
    f["world.step_tokens"] = TTCAL_FIELD(world.step_tokens, std::size_t);
    f["world.answer_tokens"] = TTCAL_FIELD(world.answer_tokens, std::size_t);
    f["world.max_len"] = TTCAL_FIELD(world.max_len, std::size_t);
    f["world.structure_strength"] = TTCAL_FIELD(world.structure_strength, double);
    f["world.answer_strength"] = TTCAL_FIELD(world.answer_strength, double);
    f["world.answer_agreement_power"] = TTCAL_FIELD(world.answer_agreement_power, double);
    f["world.miscalibration"] = TTCAL_FIELD(world.miscalibration, double);
    f["world.context_scale"] = TTCAL_FIELD(world.context_scale, double);
    f["world.context_decay"] = TTCAL_FIELD(world.context_decay, double);
    f["world.head_scale"] = TTCAL_FIELD(world.head_scale, double);
    f["world.reward_noise"] = TTCAL_FIELD(world.reward_noise, double);
    f["world.floor_score"] = TTCAL_FIELD(world.floor_score, double);
    f["world.answer_weight"] = TTCAL_FIELD(world.answer_weight, double);
    f["world.level1.gold"] = TTCAL_FIELD(world.profile[0].gold_strength, double);
    f["world.level2.gold"] = TTCAL_FIELD(world.profile[1].gold_strength, double);
    f["world.level3.gold"] = TTCAL_FIELD(world.profile[2].gold_strength, double);
    f["world.level4.gold"] = TTCAL_FIELD(world.profile[3].gold_strength, double);
    f["world.level5.gold"] = TTCAL_FIELD(world.profile[4].gold_strength, double);
    f["world.level1.distractor"] = TTCAL_FIELD(world.profile[0].distractor_strength, double);
    f["world.level2.distractor"] = TTCAL_FIELD(world.profile[1].distractor_strength, double);
    f["world.level3.distractor"] = TTCAL_FIELD(world.profile[2].distractor_strength, double);
    f["world.level4.distractor"] = TTCAL_FIELD(world.profile[3].distractor_strength, double);
    f["world.level5.distractor"] = TTCAL_FIELD(world.profile[4].distractor_strength, double);
    f["world.level1.distractors"] = TTCAL_FIELD(world.profile[0].distractors, std::size_t);
    f["world.level2.distractors"] = TTCAL_FIELD(world.profile[1].distractors, std::size_t);
    f["world.level3.distractors"] = TTCAL_FIELD(world.profile[2].distractors, std::size_t);
    f["world.level4.distractors"] = TTCAL_FIELD(world.profile[3].distractors, std::size_t);
    f["world.level5.distractors"] = TTCAL_FIELD(world.profile[4].distractors, std::size_t);
    f["world.level1.answer_distractor"] = TTCAL_FIELD(world.profile[0].answer_distractor, double);
    f["world.level2.answer_distractor"] = TTCAL_FIELD(world.profile[1].answer_distractor, double);
    f["world.level3.answer_distractor"] = TTCAL_FIELD(world.profile[2].answer_distractor, double);
    f["world.level4.answer_distractor"] = TTCAL_FIELD(world.profile[3].answer_distractor, double);
    f["world.level5.answer_distractor"] = TTCAL_FIELD(world.profile[4].answer_distractor, double);
    f["world.level1.noise_scale"] = TTCAL_FIELD(world.profile[0].noise_scale, double);
    f["world.level2.noise_scale"] = TTCAL_FIELD(world.profile[1].noise_scale, double);
    f["world.level3.noise_scale"] = TTCAL_FIELD(world.profile[2].noise_scale, double);
    f["world.level4.noise_scale"] = TTCAL_FIELD(world.profile[3].noise_scale, double);
    f["world.level5.noise_scale"] = TTCAL_FIELD(world.profile[4].noise_scale, double);
    f["train.learning_rate"] = TTCAL_FIELD(train.learning_rate, double);
    f["train.epochs"] = TTCAL_FIELD(train.epochs, std::size_t);
    f["train.weight_decay"] = TTCAL_FIELD(train.weight_decay, double);
    f["train.base_temperature"] = TTCAL_FIELD(train.base_temperature, double);
    f["train.beta1"] = TTCAL_FIELD(train.beta1, double);
    f["train.beta2"] = TTCAL_FIELD(train.beta2, double);
    f["train.epsilon"] = TTCAL_FIELD(train.epsilon, double);
    f["train.learn_delta"] = {
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.learn_delta = parse_bool(k, v); },
        [](const ExperimentConfig& c) { return fmt(c.train.learn_delta); }};
    f["train.learn_temperature"] = {
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.train.learn_temperature = parse_bool(k, v);
        },
        [](const ExperimentConfig& c) { return fmt(c.train.learn_temperature); }};
    f["selection.rule"] = {
        [](ExperimentConfig& c, const std::string&, const std::string& v) {
          try {
            c.rule = parse_rule(trim(v));
          } catch (const ContractViolation& e) {
            throw ConfigError(e.what());
          }
        },
        [](const ExperimentConfig& c) { return std::string(to_string(c.rule)); }};
    f["bon.budgets"] = TTCAL_LIST(bon_budgets, std::size_t);
    f["carbon.budget"] = TTCAL_FIELD(carbon_budget, std::size_t);
    f["carbon.explore"] = TTCAL_FIELD(carbon_explore, std::size_t);
    f["carbon.top_k"] = TTCAL_FIELD(carbon_top_k, std::size_t);
    f["beam.budget"] = TTCAL_FIELD(beam_budget, std::size_t);
    f["beam.width"] = TTCAL_FIELD(beam_width, std::size_t);
    f["binsearch.low"] = TTCAL_FIELD(search.low, std::int64_t);
    f["binsearch.high"] = TTCAL_FIELD(search.high, std::int64_t);
    f["binsearch.sigma"] = TTCAL_FIELD(search.sigma, double);
    f["binsearch.margin"] = TTCAL_FIELD(search.margin, double);
    f["binsearch.trials"] = TTCAL_FIELD(search.trials, std::size_t);
    f["binsearch.probes"] = TTCAL_LIST(search_probes, std::size_t);
    f["tempsweep.budget"] = TTCAL_FIELD(tempsweep_budget, std::size_t);
    f["tempsweep.temperatures"] = TTCAL_LIST(temperatures, double);
    f["analyze.seeds"] = TTCAL_FIELD(analyze_seeds, std::size_t);
    f["analyze.problems"] = TTCAL_FIELD(analyze_problems, std::size_t);
    f["analyze.budget"] = TTCAL_FIELD(analyze_budget, std::size_t);
    f["verify.ns"] = TTCAL_LIST(verify_ns, std::size_t);
    f["verify.landscapes"] = TTCAL_FIELD(verify_landscapes, std::size_t);
    f["verify.problems"] = TTCAL_FIELD(verify_problems, std::size_t);
    return f;
  }();
  return table;
}

}  // namespace

BudgetPlan ExperimentConfig::carbon_plan() const {
  if (carbon_explore == 0 && carbon_top_k == 0) return BudgetPlan::from_total(carbon_budget);
  BudgetPlan p;
  p.total = carbon_budget;
  p.explore = carbon_explore == 0 ? carbon_budget / 2 : carbon_explore;
  require(p.explore <= carbon_budget, "carbon.explore exceeds carbon.budget");
  p.exploit = carbon_budget - p.explore;
  p.top_k = carbon_top_k == 0 ? std::max<std::size_t>(1, p.explore / 4) : carbon_top_k;
  p.validate();
  return p;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown key '" + key + "'");
  it->second.set(c, key, value);
}

std::string get_config_value(const ExperimentConfig& c, const std::string& key) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown key '" + key + "'");
  return it->second.get(c);
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin,
                              ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    try {
      set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path, std::move(base));
}

std::string canonical_config(const ExperimentConfig& c) {
  std::string s;
  for (const auto& [k, f] : fields()) s += k + " = " + f.get(c) + "\n";
  return s;
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  const std::string s = canonical_config(c);
  return fnv1a(s.data(), s.size());
}

}  // namespace ttcal
