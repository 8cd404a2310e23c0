#include "adadec/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace adadec {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Seq2Seq: return "seq2seq";
    case Variant::AttExp: return "attexp";
    case Variant::AdaDec: return "adadec";
    case Variant::AdaDecAttExp: return "adadec+attexp";
  }
  return "?";
}

std::string to_string(CellKind c) { return c == CellKind::Lstm ? "lstm" : "elman"; }

Variant parse_variant(const std::string& s) {
  if (s == "seq2seq") return Variant::Seq2Seq;
  if (s == "attexp") return Variant::AttExp;
  if (s == "adadec") return Variant::AdaDec;
  if (s == "adadec+attexp") return Variant::AdaDecAttExp;
  throw std::invalid_argument("unknown variant \"" + s + "\" (expected seq2seq, attexp, adadec, adadec+attexp)");
}

CellKind parse_cell(const std::string& s) {
  if (s == "lstm") return CellKind::Lstm;
  if (s == "elman") return CellKind::Elman;
  throw std::invalid_argument("unknown cell \"" + s + "\" (expected lstm or elman)");
}

bool uses_exemplar(Variant v) { return v != Variant::Seq2Seq; }
bool is_adaptive(Variant v) { return v == Variant::AdaDec || v == Variant::AdaDecAttExp; }
bool attends_exemplar(Variant v) { return v == Variant::AttExp || v == Variant::AdaDecAttExp; }

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (vocab_size < kReservedTokens) problems.emplace_back("vocab_size must be >= " + std::to_string(kReservedTokens));
  if (embed_dim == 0) problems.emplace_back("embed_dim must be >= 1");
  if (encoder_hidden == 0) problems.emplace_back("encoder_hidden must be >= 1");
  if (encoder_layers == 0) problems.emplace_back("encoder_layers must be >= 1");
  if (decoder_hidden == 0) problems.emplace_back("decoder_hidden must be >= 1");
  if (exemplar_hidden == 0 && uses_exemplar(variant)) problems.emplace_back("exemplar_hidden must be >= 1");
  if (copy && !attention) problems.emplace_back("copy requires attention");
  if (attends_exemplar(variant) && !attention) problems.emplace_back("exemplar attention requires attention");
  if (!(init_range > 0.0)) problems.emplace_back("init_range must be positive");
  if (!problems.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw std::invalid_argument(msg);
  }
}

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(c.variant);
  j["cell"] = to_string(c.cell);
  j["vocab_size"] = c.vocab_size;
  j["embed_dim"] = c.embed_dim;
  j["encoder_hidden"] = c.encoder_hidden;
  j["encoder_layers"] = c.encoder_layers;
  j["decoder_hidden"] = c.decoder_hidden;
  j["rank"] = c.rank;
  j["exemplar_hidden"] = c.exemplar_hidden;
  j["max_source_len"] = c.max_source_len;
  j["attention"] = c.attention;
  j["copy"] = c.copy;
  j["tie_embeddings"] = c.tie_embeddings;
  j["init_range"] = c.init_range;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.cell = parse_cell(j.at("cell").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
    c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    c.decoder_hidden = j.at("decoder_hidden").get<std::size_t>();
    c.rank = j.at("rank").get<std::size_t>();
    c.exemplar_hidden = j.at("exemplar_hidden").get<std::size_t>();
    c.max_source_len = j.at("max_source_len").get<std::size_t>();
    c.attention = j.at("attention").get<bool>();
    c.copy = j.at("copy").get<bool>();
    c.tie_embeddings = j.at("tie_embeddings").get<bool>();
    c.init_range = j.at("init_range").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad model config JSON: ") + e.what());
  }
  return c;
}

const char* gate_name(CellKind kind, std::size_t gate) {
  static const char* lstm[] = {"i", "f", "o", "g"};
  return kind == CellKind::Lstm ? lstm[gate] : "h";
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

Var compute_coefficients(Tape& tape, Var a, Var projection, std::size_t hidden) {
  Var raw = tape.matmul(projection, a);
  return tape.normalize(raw, std::sqrt(static_cast<double>(hidden)));
}

CellWeights materialize_cell(Tape& tape, const std::vector<GateBankVars>& banks, Var lambda) {
  const std::size_t r = tape.value(lambda).size();
  CellWeights cell;
  for (const auto& bank : banks) {
    for (Var f : {bank.up, bank.vp, bank.uq, bank.vq, bank.bias_bank}) {
      const Tensor& t = tape.value(f);
      if (t.rank() != 2 || t.cols() != r) {
        throw ShapeError("materialize_cell: factor " + shape_string(t.shape()) + " does not match " +
                         std::to_string(r) + " coefficients");
      }
    }
    // U diag(lambda) Vᵀ: scale U's columns, then contract against V's rows.
    Var p = tape.matmul(tape.mul(bank.up, lambda), bank.vp, /*transpose_rhs=*/true);
    Var q = tape.matmul(tape.mul(bank.uq, lambda), bank.vq, /*transpose_rhs=*/true);
    Var b = tape.matmul(bank.bias_bank, lambda);
    cell.gates.push_back({p, q, b});
  }
  return cell;
}

DecoderState cell_step(Tape& tape, CellKind kind, const CellWeights& cell, const DecoderState& prev, Var input) {
  auto preact = [&](const CellWeights::Gate& g) {
    return tape.add(tape.add(tape.matmul(g.recurrent, prev.h), tape.matmul(g.input, input)), g.bias);
  };
  if (kind == CellKind::Elman) {
    if (cell.gates.size() != 1) throw ShapeError("cell_step: Elman cell needs exactly one gate");
    Var h = tape.tanh(preact(cell.gates[0]));
    return {h, prev.c};
  }
  if (cell.gates.size() != 4) throw ShapeError("cell_step: LSTM cell needs four gates");
  Var i = tape.sigmoid(preact(cell.gates[0]));
  Var f = tape.sigmoid(preact(cell.gates[1]));
  Var o = tape.sigmoid(preact(cell.gates[2]));
  Var g = tape.tanh(preact(cell.gates[3]));
  Var c = tape.add(tape.mul(f, prev.c), tape.mul(i, g));
  Var h = tape.mul(o, tape.tanh(c));
  return {h, c};
}

AttentionResult attention_context(Tape& tape, Var query, Var memory, Var weight) {
  Var projected = tape.matmul(weight, query);     // [k]
  Var scores = tape.matmul(memory, projected);    // [S]
  Var weights = tape.softmax(scores);
  Var context = tape.matmul(weights, memory);     // [k]
  return {context, weights};
}

std::vector<Var> run_lstm(Tape& tape, const LstmWeights& weights, const std::vector<Var>& inputs, bool reverse) {
  const std::size_t hidden = tape.value(weights.u).cols();
  Var h = tape.constant(Tensor({hidden}));
  Var c = h;
  std::vector<Var> states(inputs.size());
  for (std::size_t step = 0; step < inputs.size(); ++step) {
    const std::size_t t = reverse ? inputs.size() - 1 - step : step;
    Var z = tape.add(tape.add(tape.matmul(weights.w, inputs[t]), tape.matmul(weights.u, h)), weights.bias);
    Var i = tape.sigmoid(tape.slice(z, 0, hidden));
    Var f = tape.sigmoid(tape.slice(z, hidden, hidden));
    Var o = tape.sigmoid(tape.slice(z, 2 * hidden, hidden));
    Var g = tape.tanh(tape.slice(z, 3 * hidden, hidden));
    c = tape.add(tape.mul(f, c), tape.mul(i, g));
    h = tape.mul(o, tape.tanh(c));
    states[t] = h;
  }
  return states;
}

// ---------------------------------------------------------------------------
// Tensor-level wrappers
// ---------------------------------------------------------------------------

Tensor compute_coefficients(const Tensor& a, const Tensor& projection, std::size_t hidden) {
  Tape tape;
  Var v = compute_coefficients(tape, tape.constant(a), tape.constant(projection), hidden);
  return tape.value(v);
}

MaterializedCell materialize_cell(const AdaptiveFactorBank& bank, const Tensor& lambda) {
  if (lambda.rank() != 1 || lambda.size() != bank.rank) {
    throw ShapeError("materialize_cell: " + std::to_string(lambda.size()) + " coefficients for a rank-" +
                     std::to_string(bank.rank) + " bank");
  }
  Tape tape;
  std::vector<GateBankVars> vars;
  for (const auto& g : bank.gates) {
    vars.push_back({tape.constant(g.up), tape.constant(g.vp), tape.constant(g.uq), tape.constant(g.vq),
                    tape.constant(g.bias_bank)});
  }
  CellWeights cell = materialize_cell(tape, vars, tape.constant(lambda));
  MaterializedCell out;
  for (const auto& g : cell.gates) {
    out.gates.push_back({tape.value(g.recurrent), tape.value(g.input), tape.value(g.bias)});
  }
  return out;
}

std::size_t ParameterCounts::total() const {
  return embedding + encoder + bridge + exemplar_encoder + coefficient_projection + recurrent_weights +
         recurrent_bias + attention + output + copy_gate;
}

namespace {

std::size_t lstm_params(std::size_t in, std::size_t hidden) { return 4 * hidden * in + 4 * hidden * hidden + 4 * hidden; }

std::size_t feature_width(const ModelConfig& c) {
  std::size_t w = c.decoder_hidden;
  if (c.attention) w += 2 * c.encoder_hidden;
  if (attends_exemplar(c.variant)) w += 2 * c.exemplar_hidden;
  return w;
}

}  // namespace

ParameterCounts count_parameters(const ModelConfig& c) {
  const std::size_t d = c.decoder_hidden;
  const std::size_t e = c.embed_dim;
  const std::size_t r = c.effective_rank();
  const std::size_t gates = c.gate_count();
  ParameterCounts n;
  n.embedding = c.vocab_size * e;
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    n.encoder += 2 * lstm_params(l == 0 ? e : 2 * c.encoder_hidden, c.encoder_hidden);
  }
  n.bridge = d * 2 * c.encoder_hidden + d;
  if (uses_exemplar(c.variant)) n.exemplar_encoder = 2 * lstm_params(e, c.exemplar_hidden);
  if (is_adaptive(c.variant)) {
    n.coefficient_projection = r * 2 * c.exemplar_hidden;
    n.recurrent_weights = gates * (d * r + d * r + d * r + e * r);
    n.recurrent_bias = gates * d * r;
  } else {
    n.recurrent_weights = gates * (d * d + d * e);
    n.recurrent_bias = gates * d;
  }
  if (c.attention) n.attention += 2 * c.encoder_hidden * d;
  if (attends_exemplar(c.variant)) n.attention += 2 * c.exemplar_hidden * d;
  const std::size_t features = feature_width(c);
  n.output = e * features + e + c.vocab_size + (c.tie_embeddings ? 0 : c.vocab_size * e);
  if (c.copy) {
    const std::size_t k = attends_exemplar(c.variant) ? 3 : 1;
    n.copy_gate = k * (features + e) + k;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Seq2SeqModel
// ---------------------------------------------------------------------------

Seq2SeqModel::Seq2SeqModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  init_parameters(seed);
}

void Seq2SeqModel::init_parameters(std::uint64_t seed) {
  RandomStream rng(seed);
  const double range = config_.init_range;
  auto add = [&](const std::string& name, Shape shape) {
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = rng.uniform(-range, range);
    params_.add(name, std::move(t));
  };
  const ModelConfig& c = config_;
  const std::size_t d = c.decoder_hidden;
  const std::size_t e = c.embed_dim;
  const std::size_t h = c.encoder_hidden;
  const std::size_t r = c.effective_rank();

  add("embedding", {c.vocab_size, e});
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const std::size_t in = l == 0 ? e : 2 * h;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = "encoder.l" + std::to_string(l) + "." + dir + ".";
      add(p + "W", {4 * h, in});
      add(p + "U", {4 * h, h});
      add(p + "b", {4 * h});
    }
  }
  add("bridge.W", {d, 2 * h});
  add("bridge.b", {d});
  if (uses_exemplar(c.variant)) {
    const std::size_t x = c.exemplar_hidden;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = std::string("exemplar.") + dir + ".";
      add(p + "W", {4 * x, e});
      add(p + "U", {4 * x, x});
      add(p + "b", {4 * x});
    }
  }
  for (std::size_t g = 0; g < c.gate_count(); ++g) {
    const std::string gn = gate_name(c.cell, g);
    if (is_adaptive(c.variant)) {
      const std::string p = "bank." + gn + ".";
      add(p + "Up", {d, r});
      add(p + "Vp", {d, r});
      add(p + "Uq", {d, r});
      add(p + "Vq", {e, r});
      add(p + "B", {d, r});
    } else {
      const std::string p = "decoder." + gn + ".";
      add(p + "P", {d, d});
      add(p + "Q", {d, e});
      add(p + "b", {d});
    }
  }
  if (is_adaptive(c.variant)) add("bank.C", {r, 2 * c.exemplar_hidden});
  if (c.attention) add("attention.W", {2 * h, d});
  if (attends_exemplar(c.variant)) add("exemplar_attention.W", {2 * c.exemplar_hidden, d});
  const std::size_t features = feature_width(c);
  add("output.proj.W", {e, features});
  add("output.proj.b", {e});
  if (!c.tie_embeddings) add("output.W", {c.vocab_size, e});
  add("output.b", {c.vocab_size});
  if (c.copy) {
    const std::size_t k = attends_exemplar(c.variant) ? 3 : 1;
    add("copy.W", {k, features + e});
    add("copy.b", {k});
  }
}

void Seq2SeqModel::assign_parameters(const ParameterSet& other) {
  if (other.size() != params_.size()) {
    throw std::invalid_argument("parameter count mismatch: expected " + std::to_string(params_.size()) + ", got " +
                                std::to_string(other.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto j = other.find(params_.name(i));
    if (!j) throw std::invalid_argument("missing parameter: " + params_.name(i));
    if (other.value(*j).shape() != params_.value(i).shape()) {
      throw std::invalid_argument("shape mismatch for " + params_.name(i) + ": expected " +
                                  shape_string(params_.value(i).shape()) + ", got " +
                                  shape_string(other.value(*j).shape()));
    }
    params_.value(i) = other.value(*j);
  }
}

Var Seq2SeqModel::apply_dropout(Tape& tape, Var v, const ForwardOptions& opts) const {
  if (!opts.train || opts.dropout <= 0.0) return v;
  if (!opts.rng) throw std::invalid_argument("dropout requires a random stream");
  const double keep = 1.0 - opts.dropout;
  Tensor mask(tape.value(v).shape());
  for (double& m : mask.data()) m = opts.rng->uniform() < keep ? 1.0 / keep : 0.0;
  return tape.dropout(v, std::move(mask));
}

Var Seq2SeqModel::embed_token(Tape& tape, TokenId id, const ForwardOptions& opts) const {
  Var table = tape.param(params_, "embedding");
  return apply_dropout(tape, tape.embed(table, {id}, /*as_vector=*/true), opts);
}

EncodedSource Seq2SeqModel::encode_source(Tape& tape, const TokenSequence& source, const ForwardOptions& opts) const {
  TokenSequence tokens = content_tokens(source);
  if (tokens.empty()) throw std::invalid_argument("encode_source: empty source");
  if (config_.max_source_len != 0 && tokens.size() > config_.max_source_len) {
    throw std::invalid_argument("encode_source: source length " + std::to_string(tokens.size()) +
                                " exceeds configured maximum " + std::to_string(config_.max_source_len));
  }
  std::vector<Var> layer;
  for (TokenId id : tokens) layer.push_back(embed_token(tape, id, opts));

  const std::size_t h = config_.encoder_hidden;
  Var last;
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "encoder.l" + std::to_string(l) + ".";
    LstmWeights fwd{tape.param(params_, p + "fwd.W"), tape.param(params_, p + "fwd.U"), tape.param(params_, p + "fwd.b")};
    LstmWeights bwd{tape.param(params_, p + "bwd.W"), tape.param(params_, p + "bwd.U"), tape.param(params_, p + "bwd.b")};
    std::vector<Var> f = run_lstm(tape, fwd, layer, false);
    std::vector<Var> b = run_lstm(tape, bwd, layer, true);
    std::vector<Var> next;
    for (std::size_t t = 0; t < layer.size(); ++t) {
      Var both = tape.concat({f[t], b[t]});
      next.push_back(l == 0 ? both : tape.add(both, layer[t]));
    }
    last = tape.concat({f.back(), b.front()});
    layer = std::move(next);
  }

  EncodedSource out;
  out.tokens = tokens;
  out.states = layer;
  out.memory = tape.reshape(tape.concat(std::span<const Var>(layer)), {layer.size(), 2 * h});
  out.initial_state =
      tape.tanh(tape.add(tape.matmul(tape.param(params_, "bridge.W"), last), tape.param(params_, "bridge.b")));
  return out;
}

EncodedExemplar Seq2SeqModel::encode_exemplar(Tape& tape, const TokenSequence& exemplar,
                                              const ForwardOptions& opts) const {
  if (!uses_exemplar(config_.variant)) {
    throw std::logic_error("encode_exemplar: variant " + to_string(config_.variant) + " has no exemplar encoder");
  }
  TokenSequence tokens = content_tokens(exemplar);
  if (tokens.empty()) throw std::invalid_argument("encode_exemplar: empty exemplar");
  std::vector<Var> inputs;
  for (TokenId id : tokens) inputs.push_back(embed_token(tape, id, opts));
  LstmWeights fwd{tape.param(params_, "exemplar.fwd.W"), tape.param(params_, "exemplar.fwd.U"),
                  tape.param(params_, "exemplar.fwd.b")};
  LstmWeights bwd{tape.param(params_, "exemplar.bwd.W"), tape.param(params_, "exemplar.bwd.U"),
                  tape.param(params_, "exemplar.bwd.b")};
  std::vector<Var> f = run_lstm(tape, fwd, inputs, false);
  std::vector<Var> b = run_lstm(tape, bwd, inputs, true);

  EncodedExemplar out;
  out.tokens = tokens;
  for (std::size_t t = 0; t < inputs.size(); ++t) out.states.push_back(tape.concat({f[t], b[t]}));
  out.memory = tape.reshape(tape.concat(std::span<const Var>(out.states)), {inputs.size(), 2 * config_.exemplar_hidden});
  out.representation = tape.concat({f.back(), b.front()});
  return out;
}

std::vector<GateBankVars> Seq2SeqModel::bank_vars(Tape& tape) const {
  if (!is_adaptive(config_.variant)) throw std::logic_error("bank_vars: variant is not adaptive");
  std::vector<GateBankVars> out;
  for (std::size_t g = 0; g < config_.gate_count(); ++g) {
    const std::string p = std::string("bank.") + gate_name(config_.cell, g) + ".";
    out.push_back({tape.param(params_, p + "Up"), tape.param(params_, p + "Vp"), tape.param(params_, p + "Uq"),
                   tape.param(params_, p + "Vq"), tape.param(params_, p + "B")});
  }
  return out;
}

CellWeights Seq2SeqModel::dense_cell(Tape& tape) const {
  if (is_adaptive(config_.variant)) throw std::logic_error("dense_cell: variant is adaptive");
  CellWeights cell;
  for (std::size_t g = 0; g < config_.gate_count(); ++g) {
    const std::string p = std::string("decoder.") + gate_name(config_.cell, g) + ".";
    cell.gates.push_back({tape.param(params_, p + "P"), tape.param(params_, p + "Q"), tape.param(params_, p + "b")});
  }
  return cell;
}

AdaptiveFactorBank Seq2SeqModel::factor_bank() const {
  if (!is_adaptive(config_.variant)) throw std::logic_error("factor_bank: variant is not adaptive");
  AdaptiveFactorBank bank;
  bank.hidden = config_.decoder_hidden;
  bank.rank = config_.effective_rank();
  bank.projection = params_.value(params_.id("bank.C"));
  for (std::size_t g = 0; g < config_.gate_count(); ++g) {
    const std::string p = std::string("bank.") + gate_name(config_.cell, g) + ".";
    auto v = [&](const std::string& n) { return params_.value(params_.id(p + n)); };
    bank.gates.push_back({v("Up"), v("Vp"), v("Uq"), v("Vq"), v("B")});
  }
  return bank;
}

DecoderContext Seq2SeqModel::prepare(Tape& tape, const TokenSequence& source, const TokenSequence* exemplar,
                                     const ForwardOptions& opts,
                                     const std::optional<Tensor>& fixed_coefficients) const {
  DecoderContext ctx;
  ctx.source = encode_source(tape, source, opts);
  const bool need_exemplar =
      attends_exemplar(config_.variant) || (is_adaptive(config_.variant) && !fixed_coefficients);
  if (need_exemplar) {
    if (!exemplar) throw std::invalid_argument("variant " + to_string(config_.variant) + " requires an exemplar");
    ctx.exemplar = encode_exemplar(tape, *exemplar, opts);
  }
  if (is_adaptive(config_.variant)) {
    Var lambda;
    if (fixed_coefficients) {
      lambda = tape.constant(*fixed_coefficients);
    } else {
      lambda = compute_coefficients(tape, ctx.exemplar->representation, tape.param(params_, "bank.C"),
                                    config_.decoder_hidden);
    }
    ctx.coefficients = lambda;
    ctx.cell = materialize_cell(tape, bank_vars(tape), lambda);
  } else {
    ctx.cell = dense_cell(tape);
  }
  return ctx;
}

DecoderState Seq2SeqModel::initial_state(Tape& tape, const DecoderContext& ctx) const {
  DecoderState s;
  s.h = ctx.source.initial_state;
  s.c = tape.constant(Tensor({config_.decoder_hidden}));
  return s;
}

StepResult Seq2SeqModel::step(Tape& tape, const DecoderContext& ctx, const DecoderState& state, TokenId previous,
                              const ForwardOptions& opts) const {
  const ModelConfig& c = config_;
  StepResult out;
  Var input = embed_token(tape, previous, opts);
  out.state = cell_step(tape, c.cell, ctx.cell, state, input);

  std::vector<Var> features{out.state.h};
  if (c.attention) {
    AttentionResult att =
        attention_context(tape, out.state.h, ctx.source.memory, tape.param(params_, "attention.W"));
    features.push_back(att.context);
    out.source_attention = att.weights;
  }
  if (attends_exemplar(c.variant)) {
    AttentionResult att = attention_context(tape, out.state.h, ctx.exemplar->memory,
                                            tape.param(params_, "exemplar_attention.W"));
    features.push_back(att.context);
    out.exemplar_attention = att.weights;
  }
  Var feat = tape.concat(std::span<const Var>(features));
  Var hidden = tape.tanh(
      tape.add(tape.matmul(tape.param(params_, "output.proj.W"), feat), tape.param(params_, "output.proj.b")));
  hidden = apply_dropout(tape, hidden, opts);
  Var out_w = tape.param(params_, c.tie_embeddings ? "embedding" : "output.W");
  Var logits = tape.add(tape.matmul(out_w, hidden), tape.param(params_, "output.b"));

  if (!c.copy) {
    out.log_probs = tape.log_softmax(logits);
    return out;
  }

  Var p_vocab = tape.softmax(logits);
  Var gate_in = tape.concat({feat, input});
  Var gate_logits = tape.add(tape.matmul(tape.param(params_, "copy.W"), gate_in), tape.param(params_, "copy.b"));
  const std::size_t v = c.vocab_size;
  Var copy_src = tape.scatter(*out.source_attention, ctx.source.tokens, v);
  Var mixed;
  if (attends_exemplar(c.variant)) {
    Var gates = tape.softmax(gate_logits);
    Var copy_ex = tape.scatter(*out.exemplar_attention, ctx.exemplar->tokens, v);
    mixed = tape.add(tape.add(tape.mul(tape.pick(gates, 0), p_vocab), tape.mul(tape.pick(gates, 1), copy_src)),
                     tape.mul(tape.pick(gates, 2), copy_ex));
  } else {
    Var p_gen = tape.sigmoid(gate_logits);
    Var p_copy = tape.add(tape.scale(p_gen, -1.0), tape.constant(Tensor::scalar(1.0)));
    mixed = tape.add(tape.mul(p_gen, p_vocab), tape.mul(p_copy, copy_src));
  }
  // Floor keeps log finite when f32 rounds a mixture entry to zero.
  out.log_probs = tape.log(tape.add(mixed, tape.constant(Tensor::scalar(1e-20))));
  return out;
}

Var Seq2SeqModel::sequence_nll(Tape& tape, const DecoderContext& ctx, const TokenSequence& target,
                               const ForwardOptions& opts, std::size_t& token_count) const {
  token_count = 0;
  DecoderState state = initial_state(tape, ctx);
  TokenId previous = kBos;
  std::vector<Var> terms;
  for (TokenId gold : target) {
    StepResult r = step(tape, ctx, state, previous, opts);
    state = r.state;
    if (gold != kPad) {
      terms.push_back(tape.pick(r.log_probs, static_cast<std::size_t>(gold)));
      ++token_count;
    }
    previous = gold;
    if (gold == kEos) break;
  }
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  Var total = tape.sum(tape.concat(std::span<const Var>(terms)));
  return tape.scale(total, -1.0);
}

}  // namespace adadec
