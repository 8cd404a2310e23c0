#include "adadec/training.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "adadec/binary_io.hpp"
#include "adadec/decoding.hpp"
#include "adadec/metrics.hpp"

namespace adadec {

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (batch_size == 0) bad.emplace_back("batch_size");
  if (!(learning_rate > 0)) bad.emplace_back("learning_rate");
  if (!(anneal_factor > 0)) bad.emplace_back("anneal_factor");
  if (anneal_every == 0) bad.emplace_back("anneal_every");
  if (!(weight_decay >= 0)) bad.emplace_back("weight_decay");
  if (!(clip_norm > 0)) bad.emplace_back("clip_norm");
  if (!(dropout >= 0 && dropout < 1)) bad.emplace_back("dropout");
  if (max_epochs == 0) bad.emplace_back("max_epochs");
  if (patience == 0) bad.emplace_back("patience");
  if (early_stop_metric != "rouge_l" && early_stop_metric != "rouge_4") bad.emplace_back("early_stop_metric");
  if (!(beta1 >= 0 && beta1 < 1)) bad.emplace_back("beta1");
  if (!(beta2 >= 0 && beta2 < 1)) bad.emplace_back("beta2");
  if (!(epsilon > 0)) bad.emplace_back("epsilon");
  if (dev_max_len == 0) bad.emplace_back("dev_max_len");
  if (!bad.empty()) {
    std::string msg = "invalid training config values:";
    for (const auto& b : bad) msg += " " + b;
    throw std::invalid_argument(msg);
  }
}

double learning_rate_for_epoch(const TrainConfig& config, std::size_t epoch) {
  if (epoch == 0) throw std::invalid_argument("epochs are 1-based");
  const auto k = static_cast<double>((epoch - 1) / config.anneal_every);
  return config.learning_rate * std::pow(config.anneal_factor, k);
}

OptimizerState::OptimizerState(const ParameterSet& params, double lr) : learning_rate(lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    first_moment.emplace_back(params.value(i).shape());
    second_moment.emplace_back(params.value(i).shape());
  }
}

StepStats adam_step(ParameterSet& params, Gradients& grads, OptimizerState& state, const TrainConfig& config) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: gradient/parameter count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient for " + params.name(i) + "; step aborted");
      }
    }
  }
  StepStats stats;
  stats.grad_norm = grads.global_norm();
  if (stats.grad_norm > config.clip_norm) grads.scale(config.clip_norm / stats.grad_norm);
  stats.clipped_norm = grads.global_norm();

  const Precision prec = config.precision;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double lr = state.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.value(i).data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = quantize(config.beta1 * m[j] + (1.0 - config.beta1) * g[j], prec);
      v[j] = quantize(config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j], prec);
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      double updated = p[j] - lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
      // Decoupled decay: its magnitude follows the current eta.
      updated -= lr * config.weight_decay * updated;
      p[j] = quantize(updated, prec);
    }
  }
  return stats;
}

ExemplarTable build_exemplar_table(const std::vector<Instance>& split,
                                   const std::vector<ExemplarAssignment>& assignments,
                                   const std::vector<Instance>& train) {
  ExemplarTable table(split.size(), nullptr);
  if (assignments.size() != split.size()) {
    throw std::invalid_argument("exemplar assignments cover " + std::to_string(assignments.size()) +
                                " instances, split has " + std::to_string(split.size()));
  }
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& a = assignments[i];
    if (a.id != split[i].id) throw std::invalid_argument("exemplar assignment order does not match split");
    if (a.exemplar_id >= train.size()) {
      throw std::invalid_argument("exemplar id " + std::to_string(a.exemplar_id) + " outside training split");
    }
    table[i] = &train[a.exemplar_id].target;
  }
  return table;
}

namespace {

std::size_t target_tokens(const TokenSequence& target) {
  std::size_t n = 0;
  for (TokenId t : target) {
    if (t != kPad) ++n;
    if (t == kEos) break;
  }
  return n;
}

}  // namespace

BatchLoss nll_loss(const Seq2SeqModel& model, const std::vector<const Instance*>& batch,
                   const std::vector<const TokenSequence*>& exemplars, const ForwardOptions& opts,
                   Precision precision, Gradients* grads) {
  if (exemplars.size() != batch.size()) throw std::invalid_argument("nll_loss: exemplar count mismatch");
  BatchLoss out;
  for (const Instance* inst : batch) out.tokens += target_tokens(inst->target);
  if (out.tokens == 0) throw std::invalid_argument("nll_loss: batch has no target tokens");
  const double inv = 1.0 / static_cast<double>(out.tokens);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape tape(precision);
    DecoderContext ctx = model.prepare(tape, batch[i]->source, exemplars[i], opts);
    std::size_t count = 0;
    Var nll = model.sequence_nll(tape, ctx, batch[i]->target, opts, count);
    total += tape.value(nll).item();
    if (grads) tape.backprop_into(nll, *grads, inv);
  }
  out.mean = total * inv;
  return out;
}

double train_epoch(Seq2SeqModel& model, const std::vector<Instance>& train, const ExemplarTable& exemplars,
                   const TrainConfig& config, OptimizerState& optimizer, RandomStream& rng) {
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  ForwardOptions opts{.train = true, .dropout = config.dropout, .rng = &rng};
  double loss_sum = 0.0;
  std::size_t token_sum = 0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    std::vector<const Instance*> batch;
    std::vector<const TokenSequence*> ex;
    for (std::size_t k = start; k < end; ++k) {
      batch.push_back(&train[order[k]]);
      ex.push_back(exemplars.empty() ? nullptr : exemplars[order[k]]);
    }
    Gradients grads(model.params());
    BatchLoss loss = nll_loss(model, batch, ex, opts, config.precision, &grads);
    adam_step(model.params(), grads, optimizer, config);
    loss_sum += loss.mean * static_cast<double>(loss.tokens);
    token_sum += loss.tokens;
  }
  return token_sum ? loss_sum / static_cast<double>(token_sum) : 0.0;
}

std::vector<TokenSequence> greedy_outputs(const Seq2SeqModel& model, const std::vector<Instance>& split,
                                          const ExemplarTable& exemplars, std::size_t max_len,
                                          Precision precision) {
  std::vector<TokenSequence> out;
  out.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    ModelScorer scorer(model, split[i].source, exemplars.empty() ? nullptr : exemplars[i], precision);
    out.push_back(greedy_decode(scorer, max_len).tokens);
  }
  return out;
}

std::string EpochRecord::to_json(const std::string& metric) const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["learning_rate"] = learning_rate;
  j["train_loss"] = train_loss;
  j["dev_" + metric] = dev_score;
  j["improved"] = improved;
  return j.dump();
}

namespace {

std::vector<std::string> to_words(const TokenSequence& ids, const Vocabulary& vocab) {
  return tokenize(decode(ids, vocab));
}

}  // namespace

FitResult fit(Seq2SeqModel& model, const std::vector<Instance>& train, const std::vector<Instance>& dev,
              const ExemplarTable& train_exemplars, const ExemplarTable& dev_exemplars, const Vocabulary& vocab,
              const TrainConfig& config) {
  config.validate();
  if (model.config().variant != config.variant) {
    throw std::invalid_argument("fit: model variant " + to_string(model.config().variant) +
                                " does not match training variant " + to_string(config.variant));
  }
  if (uses_exemplar(config.variant) &&
      (train_exemplars.size() != train.size() || dev_exemplars.size() != dev.size())) {
    throw std::invalid_argument("fit: variant " + to_string(config.variant) +
                                " needs exemplar assignments for train and dev");
  }
  if (train.empty()) throw std::invalid_argument("fit: empty training split");

  RandomStream rng(config.seed);
  OptimizerState optimizer(model.params(), config.learning_rate);
  FitResult result;
  result.best_params = model.params();
  std::size_t since_best = 0;

  std::vector<std::vector<std::string>> references;
  for (const auto& inst : dev) references.push_back(to_words(inst.target, vocab));

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    optimizer.learning_rate = learning_rate_for_epoch(config, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = optimizer.learning_rate;
    rec.train_loss = train_epoch(model, train, train_exemplars, config, optimizer, rng);

    if (!dev.empty()) {
      auto outputs = greedy_outputs(model, dev, dev_exemplars, config.dev_max_len, config.precision);
      std::vector<std::vector<std::string>> candidates;
      for (const auto& o : outputs) candidates.push_back(to_words(o, vocab));
      ScoreReport report = score_corpus(candidates, references);
      rec.dev_score = config.early_stop_metric == "rouge_4" ? report.rouge4.f1 : report.rougeL.f1;
    }
    rec.improved = rec.dev_score > result.best_score;
    if (rec.improved) {
      result.best_score = rec.dev_score;
      result.best_epoch = epoch;
      result.best_params = model.params();
      since_best = 0;
    } else {
      ++since_best;
    }
    result.log_jsonl += rec.to_json(config.early_stop_metric) + "\n";
    result.log.push_back(rec);
    if (since_best >= config.patience) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kCheckpointMagic = "ADAD";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  BinaryWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(to_string(ck.variant));
  w.u64(ck.config_digest);
  w.str(ck.model_config);
  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const Tensor& t = ck.params.value(i);
    w.str(ck.params.name(i));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    w.u8(ck.dtype == Precision::F32 ? 0 : 1);
    for (double x : t.data()) {
      if (ck.dtype == Precision::F32) w.f32(static_cast<float>(x));
      else w.f64(x);
    }
  }
  return w.buffer();
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint parse_checkpoint(std::string bytes, std::optional<Variant> expected) {
  BinaryReader r(std::move(bytes));
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::string variant = r.str();
  try {
    ck.variant = parse_variant(variant);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (expected && *expected != ck.variant) {
    throw FormatError("checkpoint: variant mismatch: file holds " + variant + ", run expects " +
                      to_string(*expected));
  }
  ck.config_digest = r.u64();
  ck.model_config = r.str();
  const std::uint32_t count = r.u32();
  bool any = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) throw FormatError("checkpoint: unknown dtype tag " + std::to_string(dtype));
    const Precision p = dtype == 0 ? Precision::F32 : Precision::F64;
    if (any && p != ck.dtype) throw FormatError("checkpoint: mixed tensor dtypes");
    ck.dtype = p;
    any = true;
    const std::size_t n = shape_size(shape);
    if (r.remaining() < n * (dtype == 0 ? 4 : 8)) throw FormatError("truncated file: tensor " + name);
    std::vector<double> data(n);
    for (auto& x : data) x = dtype == 0 ? static_cast<double>(r.f32()) : r.f64();
    ck.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected) {
  try {
    return parse_checkpoint(read_file(path), expected);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace adadec
