// flexfas command-line entry point.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flexfas/flexfas.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct ConfigFailure {
  std::string message;
};

flexfas::RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_flag) {
  try {
    auto seed = seed_flag ? seed_flag : flexfas::seed_from_env();
    return flexfas::load_run_config(path, seed);
  } catch (const flexfas::Error& e) {
    throw ConfigFailure{e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flexfas: flexible-modal face anti-spoofing toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed (takes precedence over FLEXFAS_SEED)");
    sub->add_flag("-v,--verbose", verbose, "progress messages on stderr");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);
  auto* train = app.add_subcommand("train", "train model(s) and write checkpoints");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints under every configured protocol");
  add_common(eval);
  std::vector<std::string> checkpoints;
  eval->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable; default: the run's checkpoints)");
  auto* cost = app.add_subcommand("cost", "parameter and FLOP counts of the configured model");
  add_common(cost);

  auto* metrics = app.add_subcommand("metrics", "recompute a report from score files");
  std::string test_scores, val_scores, rule_name = "eer_on_validation";
  metrics->add_option("--scores", test_scores, "test score file")->required();
  metrics->add_option("--val-scores", val_scores, "validation score file (for eer_on_validation)");
  metrics->add_option("--rule", rule_name, "threshold rule")->check(CLI::IsMember({"eer_on_validation", "fixed_0_5"}));

  auto* schema = app.add_subcommand("schema", "print the run configuration JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  std::ostream* log = verbose ? &std::cerr : nullptr;
  try {
    if (schema->parsed()) {
      std::cout << flexfas::run_config_schema().dump(2) << "\n";
      return kExitOk;
    }
    if (metrics->parsed()) {
      const auto rule = rule_name == "fixed_0_5" ? flexfas::ThresholdRule::kFixedHalf
                                                 : flexfas::ThresholdRule::kEerOnValidation;
      std::optional<flexfas::fs::path> val;
      if (!val_scores.empty()) val = val_scores;
      std::cout << flexfas::report_to_json(flexfas::cmd_metrics(test_scores, val, rule)).dump(2) << "\n";
      return kExitOk;
    }
    const flexfas::RunConfig rc = load_config(config_path, seed);
    if (synth->parsed()) {
      const auto s = flexfas::cmd_synth(rc);
      std::cout << s.manifest.string() << "\n";
      if (log) *log << "wrote " << s.n_samples << " samples\n";
    } else if (train->parsed()) {
      for (const auto& p : flexfas::cmd_train(rc, log)) std::cout << p.string() << "\n";
    } else if (eval->parsed()) {
      std::vector<flexfas::fs::path> paths(checkpoints.begin(), checkpoints.end());
      const auto summary = flexfas::cmd_eval(rc, paths, log);
      std::cout << summary.dump(2) << "\n";
    } else if (cost->parsed()) {
      std::cout << flexfas::cmd_cost(rc).dump(2) << "\n";
    }
  } catch (const ConfigFailure& e) {
    std::cerr << "flexfas: " << e.message << "\n";
    return kExitUsage;
  } catch (const flexfas::Error& e) {
    std::cerr << "flexfas: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "flexfas: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
