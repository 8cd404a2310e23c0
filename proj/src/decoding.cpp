#include "adadec/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adadec {

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

double penalized_score(const Hypothesis& h, double alpha) {
  return h.log_prob / length_penalty(std::max<std::size_t>(h.tokens.size(), 1), alpha);
}

namespace {

// Better final hypothesis: higher penalised score, then shorter, then smaller ids.
bool better_final(const Hypothesis& a, const Hypothesis& b, double alpha) {
  const double sa = penalized_score(a, alpha);
  const double sb = penalized_score(b, alpha);
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

struct Candidate {
  std::size_t parent;
  TokenId token;
  double log_prob;
};

}  // namespace

Hypothesis beam_search(StepScorer& scorer, const BeamOptions& options) {
  if (options.width < 1) throw std::invalid_argument("beam_search: width must be >= 1");
  if (options.max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");

  struct Live {
    Hypothesis hyp;
    std::vector<double> next;  // log-probs for the next token
  };
  std::vector<Live> live;
  {
    auto [state, lp] = scorer.advance(scorer.initial_state(), kBos);
    live.push_back({Hypothesis{{}, 0.0, state, false}, std::move(lp)});
  }
  std::vector<Hypothesis> pool;

  for (std::size_t len = 1; len <= options.max_len && !live.empty(); ++len) {
    std::vector<Candidate> candidates;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const auto& next = live[p].next;
      for (std::size_t t = 0; t < next.size(); ++t) {
        candidates.push_back({p, static_cast<TokenId>(t), live[p].hyp.log_prob + next[t]});
      }
    }
    const std::size_t keep = std::min(options.width, candidates.size());
    // Raw log-prob ranking; ties by parent order then token id, so that width 1
    // reproduces greedy argmax.
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Live> next_live;
    for (std::size_t k = 0; k < keep; ++k) {
      const Candidate& c = candidates[k];
      Hypothesis h = live[c.parent].hyp;
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      if (c.token == kEos) {
        h.finished = true;
        pool.push_back(std::move(h));
        continue;
      }
      if (len == options.max_len) {
        pool.push_back(std::move(h));
        continue;
      }
      auto [state, lp] = scorer.advance(h.state, c.token);
      h.state = state;
      next_live.push_back({std::move(h), std::move(lp)});
    }
    live = std::move(next_live);
  }

  Hypothesis best = pool.front();
  for (const auto& h : pool)
    if (better_final(h, best, options.alpha)) best = h;
  return best;
}

Hypothesis greedy_decode(StepScorer& scorer, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  Hypothesis h;
  auto [state, lp] = scorer.advance(scorer.initial_state(), kBos);
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::size_t arg = 0;
    for (std::size_t t = 1; t < lp.size(); ++t)
      if (lp[t] > lp[arg]) arg = t;
    h.tokens.push_back(static_cast<TokenId>(arg));
    h.log_prob += lp[arg];
    if (arg == static_cast<std::size_t>(kEos)) {
      h.finished = true;
      break;
    }
    if (len == max_len) break;
    std::tie(state, lp) = scorer.advance(state, static_cast<TokenId>(arg));
  }
  h.state = state;
  return h;
}

ModelScorer::ModelScorer(const Seq2SeqModel& model, const TokenSequence& source, const TokenSequence* exemplar,
                         Precision precision)
    : model_(model), tape_(std::make_unique<Tape>(precision)) {
  context_ = model_.prepare(*tape_, source, exemplar);
  states_.push_back(model_.initial_state(*tape_, context_));
}

std::pair<StepScorer::StateId, std::vector<double>> ModelScorer::advance(StateId state, TokenId token) {
  StepResult r = model_.step(*tape_, context_, states_.at(state), token);
  states_.push_back(r.state);
  const auto& lp = tape_->value(r.log_probs).values();
  return {states_.size() - 1, lp};
}

}  // namespace adadec
