// Command-line entry point. Every command reads one experiment config and
// writes under the run directory derived from it.
//
// Exit codes: 0 success, 2 config error, 3 missing prerequisite, 4 runtime failure.

#include <CLI11.hpp>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icudg/config.hpp"
#include "icudg/error.hpp"
#include "icudg/experiment.hpp"

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::size_t> workers;
};

int run_command(const Options& opt, const std::function<void(const icudg::RunContext&)>& stage) {
  try {
    const auto config = icudg::load_config(opt.config_path, opt.overrides);
    const auto ctx = icudg::open_run(config, opt.workers);
    std::cerr << "run directory: " << ctx.run_dir << '\n';
    stage(ctx);
    std::cout << ctx.run_dir << '\n';
    return 0;
  } catch (const icudg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const icudg::MissingPrerequisite& e) {
    std::cerr << "missing prerequisite: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain ICU prediction workbench"};
  app.require_subcommand(1);

  Options opt;
  const std::map<std::string, std::pair<std::string, void (*)(const icudg::RunContext&)>> commands{
      {"synth", {"Generate synthetic multi-site statics and events", icudg::run_synth}},
      {"cohort", {"Apply exclusions and write the attrition report", icudg::run_cohort}},
      {"label", {"Derive task labels for the included stays", icudg::run_label}},
      {"featurize", {"Build hourly grids, splits, tensors and normalisation stats", icudg::run_featurize}},
      {"train", {"Train every model of the evaluation matrix", icudg::run_train}},
      {"evaluate", {"Score checkpoints and write results and calibration CSVs", icudg::run_evaluate}},
      {"reproduce", {"Run every stage end to end", icudg::run_reproduce}},
  };
  std::string chosen;
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    sub->add_option("-c,--config", opt.config_path, "Experiment config (INI)")->required();
    sub->add_option("--set", opt.overrides, "Override a key, e.g. --set train.max_epochs=5");
    sub->add_option("-w,--workers", opt.workers, "Worker threads (overrides ICUDG_WORKERS)")
        ->check(CLI::PositiveNumber);
    sub->callback([&chosen, name = name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return run_command(opt, commands.at(chosen).second);
}
