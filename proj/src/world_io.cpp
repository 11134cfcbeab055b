#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ttcal/world.hpp"

namespace ttcal {

using nlohmann::json;

namespace {

json config_to_json(const WorldConfig& c) {
  json profile = json::array();
  for (const auto& lp : c.profile)
    profile.push_back({{"gold", lp.gold_strength},
                       {"distractor", lp.distractor_strength},
                       {"count", lp.distractors},
                       {"answer_distractor", lp.answer_distractor},
                       {"noise_scale", lp.noise_scale}});
  return {{"vocab_size", c.vocab_size},
          {"hidden_dim", c.hidden_dim},
          {"n_problems", c.n_problems},
          {"levels", c.levels},
          {"reasoning_steps", c.reasoning_steps},
          {"step_tokens", c.step_tokens},
          {"answer_tokens", c.answer_tokens},
          {"max_len", c.max_len},
          {"structure_strength", c.structure_strength},
          {"profile", profile},
          {"answer_strength", c.answer_strength},
          {"answer_agreement_power", c.answer_agreement_power},
          {"miscalibration", c.miscalibration},
          {"context_scale", c.context_scale},
          {"context_decay", c.context_decay},
          {"head_scale", c.head_scale},
          {"reward_noise", c.reward_noise},
          {"floor_score", c.floor_score},
          {"answer_weight", c.answer_weight}};
}

WorldConfig config_from_json(const json& j) {
  WorldConfig c;
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("n_problems").get_to(c.n_problems);
  j.at("levels").get_to(c.levels);
  j.at("reasoning_steps").get_to(c.reasoning_steps);
  j.at("step_tokens").get_to(c.step_tokens);
  j.at("answer_tokens").get_to(c.answer_tokens);
  j.at("max_len").get_to(c.max_len);
  j.at("structure_strength").get_to(c.structure_strength);
  const auto& prof = j.at("profile");
  if (prof.size() != c.profile.size()) throw ConstructionError("world file: profile must have 5 levels");
  for (std::size_t i = 0; i < c.profile.size(); ++i) {
    prof[i].at("gold").get_to(c.profile[i].gold_strength);
    prof[i].at("distractor").get_to(c.profile[i].distractor_strength);
    prof[i].at("count").get_to(c.profile[i].distractors);
    prof[i].at("answer_distractor").get_to(c.profile[i].answer_distractor);
    prof[i].at("noise_scale").get_to(c.profile[i].noise_scale);
  }
  j.at("answer_strength").get_to(c.answer_strength);
  j.at("answer_agreement_power").get_to(c.answer_agreement_power);
  j.at("miscalibration").get_to(c.miscalibration);
  j.at("context_scale").get_to(c.context_scale);
  j.at("context_decay").get_to(c.context_decay);
  j.at("head_scale").get_to(c.head_scale);
  j.at("reward_noise").get_to(c.reward_noise);
  j.at("floor_score").get_to(c.floor_score);
  j.at("answer_weight").get_to(c.answer_weight);
  return c;
}

}  // namespace

std::string world_to_json(const SyntheticWorld& world) {
  json problems = json::array();
  for (const auto& p : world.problems()) {
    problems.push_back({{"level", p.level},
                        {"gold_steps", p.gold_steps},
                        {"distractors", p.distractors},
                        {"answer", p.answer},
                        {"wrong_answer", p.wrong_answer},
                        {"bias_direction", p.bias_direction},
                        {"gold", p.gold}});
  }
  json j = {{"format", "ttcal-world"},
            {"version", kWorldFormatVersion},
            {"seed", world.seed()},
            {"config", config_to_json(world.config())},
            {"head",
             {{"vocab", world.head().vocab()},
              {"hidden", world.head().hidden()},
              {"weights", world.head().weights()}}},
            {"last_embedding", world.last_embedding()},
            {"bag_embedding", world.bag_embedding()},
            {"problems", problems}};
  return j.dump();
}

SyntheticWorld world_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConstructionError(std::string("world file: ") + e.what());
  }
  if (j.value("format", "") != "ttcal-world") throw ConstructionError("world file: bad format tag");
  if (j.value("version", -1) != kWorldFormatVersion)
    throw ConstructionError("world file: unsupported version " + j.value("version", json()).dump());
  try {
    WorldConfig config = config_from_json(j.at("config"));
    const auto& h = j.at("head");
    LmHead head(h.at("vocab").get<std::size_t>(), h.at("hidden").get<std::size_t>(),
                h.at("weights").get<std::vector<double>>());
    std::vector<Problem> problems;
    for (const auto& pj : j.at("problems")) {
      Problem p;
      pj.at("level").get_to(p.level);
      pj.at("gold_steps").get_to(p.gold_steps);
      pj.at("distractors").get_to(p.distractors);
      pj.at("answer").get_to(p.answer);
      pj.at("wrong_answer").get_to(p.wrong_answer);
      pj.at("bias_direction").get_to(p.bias_direction);
      pj.at("gold").get_to(p.gold);
      problems.push_back(std::move(p));
    }
    return SyntheticWorld(j.at("seed").get<std::uint64_t>(), std::move(config), std::move(head),
                          j.at("last_embedding").get<std::vector<double>>(),
                          j.at("bag_embedding").get<std::vector<double>>(), std::move(problems));
  } catch (const json::exception& e) {
    throw ConstructionError(std::string("world file: ") + e.what());
  }
}

void save_world(const SyntheticWorld& world, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << world_to_json(world) << '\n';
}

SyntheticWorld load_world(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return world_from_json(ss.str());
}

}  // namespace ttcal
