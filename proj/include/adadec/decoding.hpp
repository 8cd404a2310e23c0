#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "adadec/corpus.hpp"
#include "adadec/model.hpp"

namespace adadec {

/// ((5 + length) / 6)^alpha.
double length_penalty(std::size_t length, double alpha);

/// Incremental next-token scorer for one input. States are opaque handles.
class StepScorer {
 public:
  using StateId = std::size_t;
  virtual ~StepScorer() = default;

  virtual StateId initial_state() = 0;
  /// Consume `token` from `state`; return the new state and log-probabilities
  /// over the next token.
  virtual std::pair<StateId, std::vector<double>> advance(StateId state, TokenId token) = 0;
};

struct Hypothesis {
  TokenSequence tokens;
  double log_prob = 0.0;
  StepScorer::StateId state = 0;
  bool finished = false;
};

/// Penalised ranking score log_prob / length_penalty(|tokens|, alpha).
double penalized_score(const Hypothesis& h, double alpha);

struct BeamOptions {
  std::size_t width = 5;
  std::size_t max_len = 50;
  double alpha = 1.0;
};

/// Live hypotheses are pruned to `width` by raw cumulative log-probability;
/// candidates ending in EOS that survive pruning move to the finished pool;
/// hypotheses still live at max_len are force-finished. The pool member with
/// the best penalised score wins (ties: shorter, then smaller ids).
Hypothesis beam_search(StepScorer& scorer, const BeamOptions& options);

/// Argmax decoding (ties to the smallest id) until EOS or max_len.
Hypothesis greedy_decode(StepScorer& scorer, std::size_t max_len);

/// StepScorer over a trained model for one input (source plus optional
/// exemplar). The decoder is constructed once in the constructor.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const Seq2SeqModel& model, const TokenSequence& source, const TokenSequence* exemplar,
              Precision precision = Precision::F64);

  StateId initial_state() override { return 0; }
  std::pair<StateId, std::vector<double>> advance(StateId state, TokenId token) override;

 private:
  const Seq2SeqModel& model_;
  std::unique_ptr<Tape> tape_;
  DecoderContext context_;
  std::vector<DecoderState> states_;
};

}  // namespace adadec
