#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adadec/autodiff.hpp"
#include "adadec/corpus.hpp"
#include "adadec/model.hpp"
#include "adadec/retrieval.hpp"

namespace adadec {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 0.001;  // initial eta
  double anneal_factor = 0.2;
  std::size_t anneal_every = 4;  // epochs
  double weight_decay = 0.01;    // decoupled, scaled by the current eta
  double clip_norm = 1.0;
  double dropout = 0.15;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  std::string early_stop_metric = "rouge_l";  // or "rouge_4"
  Variant variant = Variant::AdaDec;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Precision precision = Precision::F32;
  std::size_t dev_max_len = 50;  // greedy decoding length for early stopping

  void validate() const;
};

/// eta for a 1-based epoch: eta0 * factor^floor((epoch - 1) / anneal_every).
double learning_rate_for_epoch(const TrainConfig& config, std::size_t epoch);

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
  double learning_rate = 0.001;

  explicit OptimizerState(const ParameterSet& params, double lr = 0.001);
};

struct StepStats {
  double grad_norm = 0.0;  // before clipping
  double clipped_norm = 0.0;
};

/// Global-norm clipping, bias-corrected Adam, then decoupled weight decay
/// p <- p - eta * weight_decay * p. `grads` is clipped in place.
StepStats adam_step(ParameterSet& params, Gradients& grads, OptimizerState& state, const TrainConfig& config);

/// Exemplar target for every instance of a split (nullptr when the variant
/// does not read exemplars).
using ExemplarTable = std::vector<const TokenSequence*>;

ExemplarTable build_exemplar_table(const std::vector<Instance>& split,
                                   const std::vector<ExemplarAssignment>& assignments,
                                   const std::vector<Instance>& train);

struct BatchLoss {
  double mean = 0.0;        // mean NLL per non-PAD target token
  std::size_t tokens = 0;
};

/// Teacher-forced mean NLL over the batch. When `grads` is given the
/// gradient of that mean is accumulated into it.
BatchLoss nll_loss(const Seq2SeqModel& model, const std::vector<const Instance*>& batch,
                   const std::vector<const TokenSequence*>& exemplars, const ForwardOptions& opts,
                   Precision precision, Gradients* grads = nullptr);

/// One pass over `train` in a shuffled order drawn from `rng`. Returns the
/// token-weighted mean training loss.
double train_epoch(Seq2SeqModel& model, const std::vector<Instance>& train, const ExemplarTable& exemplars,
                   const TrainConfig& config, OptimizerState& optimizer, RandomStream& rng);

/// Greedy decoding of every instance in `split`.
std::vector<TokenSequence> greedy_outputs(const Seq2SeqModel& model, const std::vector<Instance>& split,
                                          const ExemplarTable& exemplars, std::size_t max_len,
                                          Precision precision);

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double dev_score = 0.0;
  bool improved = false;

  std::string to_json(const std::string& metric) const;
};

struct FitResult {
  ParameterSet best_params;
  std::size_t best_epoch = 0;
  double best_score = -1.0;
  std::vector<EpochRecord> log;
  std::string log_jsonl;
};

/// Epoch loop with annealing, dev early stopping on the configured metric
/// (greedy decoding) and patience.
FitResult fit(Seq2SeqModel& model, const std::vector<Instance>& train, const std::vector<Instance>& dev,
              const ExemplarTable& train_exemplars, const ExemplarTable& dev_exemplars, const Vocabulary& vocab,
              const TrainConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian layout:
//   "ADAD" | u32 version | str variant | u64 config digest | str model config JSON
//   | u32 tensor count | per tensor: str name | u32 rank | u64 dims[rank]
//   | u8 dtype (0 = f32, 1 = f64) | row-major payload
// where str is a u32 byte length followed by UTF-8 bytes.
// ---------------------------------------------------------------------------

struct Checkpoint {
  Variant variant = Variant::AdaDec;
  std::uint64_t config_digest = 0;
  std::string model_config;
  Precision dtype = Precision::F32;
  ParameterSet params;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError on bad magic, version, truncation, or a variant other
/// than `expected` (when given).
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected = std::nullopt);
Checkpoint parse_checkpoint(std::string bytes, std::optional<Variant> expected = std::nullopt);

}  // namespace adadec
