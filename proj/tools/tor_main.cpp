// Command-line front end: train, analyze, gradcheck, and compare commands
// over TOML-style config files with dotted-key overrides.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tor/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale RLVR engine with token reweighting"};
  app.require_subcommand(1);

  std::string configPath;
  std::vector<std::string> overrides;
  std::string runName;

  CLI::App* train = app.add_subcommand("train", "Run one training job");
  train->add_option("--config", configPath, "Config file")->required();
  train->add_option("--set", overrides, "Dotted-key override, key=value");
  train->add_option("--name", runName, "Run name (default: config file stem)");

  std::string checkpointPath;
  CLI::App* analyze = app.add_subcommand("analyze", "Emit analysis reports for a checkpoint");
  analyze->add_option("--checkpoint", checkpointPath, "Checkpoint file")->required();
  analyze->add_option("--config", configPath, "Config file")->required();
  analyze->add_option("--set", overrides, "Dotted-key override, key=value");

  bool corruptAdjoint = false;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference check of all objectives");
  gradcheck->add_option("--config", configPath, "Config file")->required();
  gradcheck->add_flag("--corrupt-first-adjoint", corruptAdjoint,
                      "Corrupt one gradient entry to prove the check can fail");

  std::vector<std::string> algorithms;
  std::vector<std::uint64_t> seeds;
  CLI::App* compare = app.add_subcommand("compare", "Train an algorithm-by-seed grid");
  compare->add_option("--config", configPath, "Config file")->required();
  compare->add_option("--algorithms", algorithms, "Algorithm names")->required();
  compare->add_option("--seeds", seeds, "Seeds")->required();
  compare->add_option("--set", overrides, "Dotted-key override, key=value");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return tor::run::commandTrain(configPath, overrides, runName);
    }
    if (analyze->parsed()) {
      return tor::run::commandAnalyze(checkpointPath, configPath, overrides);
    }
    if (gradcheck->parsed()) {
      return tor::run::commandGradCheck(configPath, corruptAdjoint);
    }
    if (compare->parsed()) {
      return tor::run::commandCompare(configPath, algorithms, seeds, overrides);
    }
  } catch (const tor::Error& error) {
    std::cerr << "error: " << error.what() << '\n';
    return tor::run::exitConfig;
  }
  return tor::run::exitConfig;
}
