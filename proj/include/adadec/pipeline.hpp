#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "adadec/decoding.hpp"
#include "adadec/gradcheck.hpp"
#include "adadec/metrics.hpp"
#include "adadec/model.hpp"
#include "adadec/synth.hpp"
#include "adadec/training.hpp"

namespace adadec {

/// Thrown for config problems; `keys` lists every offending dotted key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, std::vector<std::string> keys)
      : std::runtime_error(message), keys(std::move(keys)) {}
  std::vector<std::string> keys;
};

/// A stage found an upstream artifact missing or produced under a different
/// config. `stage` names what must be run first.
class PrerequisiteError : public std::runtime_error {
 public:
  PrerequisiteError(const std::string& message, std::string stage)
      : std::runtime_error(message), stage(std::move(stage)) {}
  std::string stage;
};

struct CorpusSettings {
  std::string train = "data/train.jsonl";
  std::string dev = "data/dev.jsonl";
  std::string test = "data/test.jsonl";
  std::size_t vocab_size = 5000;
  std::size_t max_source_len = 100;  // 0 = no truncation
};

struct DecodingSettings {
  std::size_t beam_width = 5;
  std::size_t max_len = 50;
  double length_penalty = 1.0;
  bool greedy = false;
};

struct EvaluationSettings {
  RougeMode mode = RougeMode::F1;
};

struct GradcheckSettings {
  std::size_t hidden = 8;  // d = r
  std::size_t vocab = 20;
  std::size_t length = 5;
  std::size_t batch = 2;
  std::size_t coordinates = 420;  // 10 per tensor
  double epsilon = 1e-5;
  // Gradients below ~1e-7 are lost to f64 rounding at epsilon 1e-5; the
  // default training init produces many of them in the encoder.
  double init_range = 1.0;
  double tolerance = 1e-4;
  std::string cell = "lstm";
};

/// Every setting a stage can read. Layout of the JSON form:
///   {"out_dir", "corpus": {...}, "model": {...}, "training": {...},
///    "decoding": {...}, "evaluation": {...}, "synth": {...}, "gradcheck": {...}}
/// with field names as in the structs above. The model's variant, vocabulary
/// size and source limit come from training.variant and the corpus section.
struct RunConfig {
  std::string out_dir = "run";
  CorpusSettings corpus;
  ModelConfig model;
  TrainConfig training;
  DecodingSettings decoding;
  EvaluationSettings evaluation;
  SynthConfig synth;
  GradcheckSettings gradcheck;

  /// Missing keys keep their defaults. Unknown keys, wrong types and failed
  /// validation raise ConfigError naming every offending key.
  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;

  /// "section.key=value"; value is parsed as JSON, else taken as a string.
  void apply_override(const std::string& assignment);
  /// Applies overrides atomically against the JSON form and revalidates.
  static RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& overrides);

  void validate() const;
};

/// FNV-1a digests chained across stages so each artifact records exactly
/// which settings and inputs produced it.
std::uint64_t preprocess_digest(const RunConfig& config);
std::uint64_t retrieve_digest(const RunConfig& config);
std::uint64_t train_digest(const RunConfig& config);
std::uint64_t generate_digest(const RunConfig& config);

std::string hex_digest(std::uint64_t digest);

// Stage entry points. Each writes into config.out_dir and logs to `log`.
void run_synth_data(const RunConfig& config, std::ostream& log);
void run_preprocess(const RunConfig& config, std::ostream& log);
void run_retrieve(const RunConfig& config, std::ostream& log);
void run_train(const RunConfig& config, std::ostream& log);
void run_generate(const RunConfig& config, std::ostream& log);
ScoreReport run_evaluate(const RunConfig& config, std::ostream& log);
GradCheckResult run_gradcheck(const RunConfig& config, std::ostream& log);

/// Dispatch by subcommand name; returns the process exit status. Errors are
/// reported on `err`.
int run(const std::string& subcommand, const RunConfig& config, std::ostream& log, std::ostream& err);

const std::vector<std::string>& subcommands();

}  // namespace adadec
