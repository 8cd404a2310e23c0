#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adadec/autodiff.hpp"
#include "adadec/corpus.hpp"
#include "adadec/random.hpp"

namespace adadec {

enum class Variant { Seq2Seq, AttExp, AdaDec, AdaDecAttExp };
enum class CellKind { Elman, Lstm };

std::string to_string(Variant v);
std::string to_string(CellKind c);
Variant parse_variant(const std::string& s);
CellKind parse_cell(const std::string& s);

/// Variants that read a retrieved exemplar.
bool uses_exemplar(Variant v);
/// Variants whose decoder is composed from factor banks.
bool is_adaptive(Variant v);
/// Variants that attend over and copy from exemplar states.
bool attends_exemplar(Variant v);

struct ModelConfig {
  Variant variant = Variant::AdaDec;
  CellKind cell = CellKind::Lstm;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t encoder_hidden = 32;  // per direction
  std::size_t encoder_layers = 1;
  std::size_t decoder_hidden = 64;  // d
  std::size_t rank = 0;             // r; 0 means r = d
  std::size_t exemplar_hidden = 32;
  std::size_t max_source_len = 0;   // 0 = unbounded
  bool attention = true;
  bool copy = true;
  bool tie_embeddings = true;
  double init_range = 0.1;

  std::size_t effective_rank() const { return rank == 0 ? decoder_hidden : rank; }
  std::size_t gate_count() const { return cell == CellKind::Lstm ? 4 : 1; }
  /// Throws std::invalid_argument listing every violated constraint.
  void validate() const;
};

/// Compact JSON with every ModelConfig field; stored in checkpoints.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Tape-level building blocks
// ---------------------------------------------------------------------------

/// Concrete recurrence for one exemplar: per gate P (d x d), Q (d x e), b (d).
/// Gate order for LSTM is input, forget, output, candidate.
struct CellWeights {
  struct Gate {
    Var recurrent;  // P
    Var input;      // Q
    Var bias;       // b
  };
  std::vector<Gate> gates;
};

struct DecoderState {
  Var h;
  Var c;  // LSTM memory cell; unused for Elman
};

struct GateBankVars {
  Var up, vp, uq, vq, bias_bank;
};

struct AttentionResult {
  Var context;
  Var weights;
};

/// lambda = C a, rescaled to l2 norm sqrt(d). Differentiable through the
/// rescaling; throws NumericError when |C a| < 1e-12.
Var compute_coefficients(Tape& tape, Var a, Var projection, std::size_t hidden);

/// P = Up diag(lambda) Vpᵀ, Q = Uq diag(lambda) Vqᵀ, b = B lambda per gate.
CellWeights materialize_cell(Tape& tape, const std::vector<GateBankVars>& banks, Var lambda);

DecoderState cell_step(Tape& tape, CellKind kind, const CellWeights& cell, const DecoderState& prev, Var input);

/// Multiplicative attention: score_s = h_sᵀ W q over rows h_s of `memory`.
AttentionResult attention_context(Tape& tape, Var query, Var memory, Var weight);

struct LstmWeights {
  Var w;     // [4h x in]
  Var u;     // [4h x h]
  Var bias;  // [4h]
};

/// One LSTM direction over `inputs`; with `reverse` the sequence is consumed
/// right to left but states are returned in input order.
std::vector<Var> run_lstm(Tape& tape, const LstmWeights& weights, const std::vector<Var>& inputs, bool reverse);

// ---------------------------------------------------------------------------
// Tensor-level views of the adaptive parameterisation
// ---------------------------------------------------------------------------

struct AdaptiveFactorBank {
  struct Gate {
    Tensor up, vp, uq, vq, bias_bank;  // d x r, d x r, d x r, e x r, d x r
  };
  std::vector<Gate> gates;
  Tensor projection;  // C: r x 2 d_ex
  std::size_t hidden = 0;
  std::size_t rank = 0;
};

struct MaterializedCell {
  struct Gate {
    Tensor recurrent, input, bias;
  };
  std::vector<Gate> gates;
};

Tensor compute_coefficients(const Tensor& a, const Tensor& projection, std::size_t hidden);
MaterializedCell materialize_cell(const AdaptiveFactorBank& bank, const Tensor& lambda);

struct ParameterCounts {
  std::size_t embedding = 0;
  std::size_t encoder = 0;
  std::size_t bridge = 0;
  std::size_t exemplar_encoder = 0;
  std::size_t coefficient_projection = 0;
  std::size_t recurrent_weights = 0;  // P/Q or their factor banks
  std::size_t recurrent_bias = 0;     // b or the bias bank B
  std::size_t attention = 0;
  std::size_t output = 0;
  std::size_t copy_gate = 0;

  std::size_t total() const;
};

ParameterCounts count_parameters(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

struct ForwardOptions {
  bool train = false;
  double dropout = 0.0;
  RandomStream* rng = nullptr;
};

struct EncodedSource {
  std::vector<Var> states;  // S vectors of width 2 * encoder_hidden
  Var memory;               // [S x 2 * encoder_hidden]
  Var initial_state;        // h0, width d
  TokenSequence tokens;
};

struct EncodedExemplar {
  Var representation;  // a, width 2 * exemplar_hidden
  std::vector<Var> states;
  Var memory;
  TokenSequence tokens;
};

/// Everything a decoder needs for one input, built once per input.
struct DecoderContext {
  EncodedSource source;
  std::optional<EncodedExemplar> exemplar;
  std::optional<Var> coefficients;
  CellWeights cell;
};

struct StepResult {
  DecoderState state;
  Var log_probs;  // [V]
  std::optional<Var> source_attention;
  std::optional<Var> exemplar_attention;
};

class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Replace parameter values; names and shapes must match exactly.
  void assign_parameters(const ParameterSet& other);

  EncodedSource encode_source(Tape& tape, const TokenSequence& source, const ForwardOptions& opts = {}) const;
  EncodedExemplar encode_exemplar(Tape& tape, const TokenSequence& exemplar, const ForwardOptions& opts = {}) const;

  std::vector<GateBankVars> bank_vars(Tape& tape) const;
  CellWeights dense_cell(Tape& tape) const;
  AdaptiveFactorBank factor_bank() const;

  /// Encode the source, then (exemplar variants) encode the exemplar, compute
  /// coefficients and construct the decoder cell. `fixed_coefficients`
  /// bypasses the exemplar path and uses the given lambda directly.
  DecoderContext prepare(Tape& tape, const TokenSequence& source, const TokenSequence* exemplar,
                         const ForwardOptions& opts = {},
                         const std::optional<Tensor>& fixed_coefficients = std::nullopt) const;

  DecoderState initial_state(Tape& tape, const DecoderContext& ctx) const;

  StepResult step(Tape& tape, const DecoderContext& ctx, const DecoderState& state, TokenId previous,
                  const ForwardOptions& opts = {}) const;

  /// Teacher-forced sum of -log p(y_t | y_<t, x) over non-PAD target tokens.
  Var sequence_nll(Tape& tape, const DecoderContext& ctx, const TokenSequence& target,
                   const ForwardOptions& opts, std::size_t& token_count) const;

 private:
  void init_parameters(std::uint64_t seed);
  Var embed_token(Tape& tape, TokenId id, const ForwardOptions& opts) const;
  Var apply_dropout(Tape& tape, Var v, const ForwardOptions& opts) const;

  ModelConfig config_;
  ParameterSet params_;
};

const char* gate_name(CellKind kind, std::size_t gate);

}  // namespace adadec
