// Command-line entry point: one subcommand per experiment.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ttcal/experiments.hpp"

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 1;
  std::string out;
  std::vector<std::string> overrides;
  bool resume = false;
  std::size_t max_units = 0;
  bool print_config = false;
};

int run(const std::string& sub, const Flags& f) {
  using namespace ttcal;
  ExperimentConfig cfg;
  if (!f.config.empty()) cfg = load_config_file(f.config);
  for (const auto& o : f.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set " + o + ": expected key=value");
    try {
      set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("--set " + o + ": " + e.what());
    }
  }
  if (f.seed_set) cfg.seed = f.seed;
  if (f.print_config) {
    std::cout << canonical_config(cfg);
    return 0;
  }

  RunOptions opt;
  opt.subcommand = sub;
  opt.out = f.out.empty() ? "out/" + sub : f.out;
  opt.jobs = std::max<std::size_t>(1, f.jobs);
  opt.resume = f.resume;
  opt.max_units = f.max_units;

  const RunSummary s = run_experiment(cfg, opt);
  for (const auto& m : s.messages) std::cerr << sub << ": " << m << '\n';
  std::cerr << sub << ": " << s.units_done << '/' << s.units_total << " units, " << s.records
            << " records -> " << opt.out.string() << '\n';
  if (!s.checks_passed) return 3;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time calibration experiments on synthetic worlds"};
  app.set_version_flag("--version", std::string(ttcal::kToolVersion));
  app.require_subcommand(1);

  Flags flags;
  std::string chosen;
  const char* help[] = {
      "Best-of-N accuracy over a list of budgets",
      "Two-phase explore/calibrate/exploit runs against Best-of-N at N and 2N",
      "Plain and calibrated step-level beam search",
      "Binary search with noisy reward probes, swept over probe counts",
      "Best-of-N over a grid of sampling temperatures",
      "Fitted temperature, entropy and token overlap by difficulty",
      "Numerical checks of the expected-reward lower bound",
  };
  const auto& subs = ttcal::subcommands();
  for (std::size_t i = 0; i < subs.size(); ++i) {
    auto* sc = app.add_subcommand(subs[i], help[i]);
    sc->add_option("--config", flags.config, "Config file (key = value lines)");
    sc->add_option("--seed", flags.seed, "Run seed")->each([&](const std::string&) { flags.seed_set = true; });
    sc->add_option("--jobs,-j", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sc->add_option("--out,-o", flags.out, "Output directory (default out/<subcommand>)");
    sc->add_option("--set", flags.overrides, "Override a config key: key=value (repeatable)");
    sc->add_flag("--resume", flags.resume, "Continue an interrupted run in --out");
    sc->add_option("--max-units", flags.max_units, "Stop after this many new work units");
    sc->add_flag("--print-config", flags.print_config, "Print the effective config and exit");
    sc->callback([&chosen, name = subs[i]] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return run(chosen, flags);
  } catch (const ttcal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ttcal::ContractViolation& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ttcal::ConstructionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
