// Command-line driver for the pipeline stages.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "adadec/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-conditioned adaptive decoder: data, retrieval, training, decoding, scoring"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool print_config = false;

  app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override one setting, e.g. --set training.max_epochs=5 (repeatable)");
  app.add_option("--seed", seed, "Seed for training and synthetic data");
  app.add_option("--out", out_dir, "Output directory for stage artifacts");
  app.add_flag("--print-config", print_config, "Print the resolved config before running");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth-data", "Write the synthetic template corpus to the corpus paths"},
      {"preprocess", "Build vocab.json and binary token files"},
      {"retrieve", "Assign a training exemplar to every instance"},
      {"train", "Fit the configured variant and write model.ckpt"},
      {"generate", "Decode the test split into predictions.txt"},
      {"evaluate", "Score predictions.txt against the test references"},
      {"gradcheck", "Finite-difference check of the full adaptive loss"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  CLI11_PARSE(app, argc, argv);

  adadec::RunConfig config;
  try {
    if (!config_path.empty()) config = adadec::RunConfig::load(config_path);
    if (seed) {
      overrides.push_back("training.seed=" + std::to_string(*seed));
      overrides.push_back("synth.seed=" + std::to_string(*seed));
    }
    if (!out_dir.empty()) overrides.push_back("out_dir=" + nlohmann::json(out_dir).dump());
    config = adadec::RunConfig::with_overrides(config, overrides);
  } catch (const adadec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  if (print_config) std::cout << config.to_json_text();

  const std::string sub = app.get_subcommands().front()->get_name();
  return adadec::run(sub, config, std::cout, std::cerr);
}
