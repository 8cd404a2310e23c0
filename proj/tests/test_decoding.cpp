#include <doctest.h>

#include <cmath>

#include "adadec/decoding.hpp"
#include "oracles.hpp"

using namespace adadec;

namespace {

ModelConfig tiny(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.vocab_size = 12;
  c.embed_dim = 6;
  c.encoder_hidden = 5;
  c.decoder_hidden = 7;
  c.exemplar_hidden = 4;
  c.init_range = 0.6;
  return c;
}

// Fixed next-token distribution regardless of prefix.
class ConstantScorer : public StepScorer {
 public:
  explicit ConstantScorer(std::vector<double> logp) : logp_(std::move(logp)) {}
  StateId initial_state() override { return 0; }
  std::pair<StateId, std::vector<double>> advance(StateId s, TokenId) override { return {s + 1, logp_}; }

 private:
  std::vector<double> logp_;
};

}  // namespace

TEST_CASE("length penalty values") {
  for (double a : {0.0, 0.5, 1.0, 2.0}) CHECK(length_penalty(1, a) == 1.0);
  for (std::size_t n : {1u, 5u, 40u}) CHECK(length_penalty(n, 0.0) == 1.0);
  CHECK(length_penalty(7, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("beam search matches exhaustive enumeration") {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    for (double alpha : {0.0, 1.0}) {
      oracle::TableScorer scorer(4, seed, seed % 3 == 0 ? 1.0 : 0.0);
      const Hypothesis expect = oracle::exhaustive_best(scorer, 3, alpha);
      // Width |V|^3 keeps every prefix, so the search is exhaustive.
      Hypothesis got = beam_search(scorer, {64, 3, alpha});
      CAPTURE(seed);
      CHECK(got.tokens == expect.tokens);
      CHECK(got.log_prob == doctest::Approx(expect.log_prob).epsilon(1e-12));
    }
  }
}

TEST_CASE("width one equals greedy") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    oracle::TableScorer a(6, seed), b(6, seed);
    Hypothesis beam = beam_search(a, {1, 12, 1.0});
    Hypothesis greedy = greedy_decode(b, 12);
    CHECK(beam.tokens == greedy.tokens);
  }
}

TEST_CASE("returned sequences end in eos or reach max_len") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    for (std::size_t width : {1u, 3u, 5u}) {
      oracle::TableScorer s(7, seed);
      Hypothesis h = beam_search(s, {width, 6, 1.0});
      CHECK((h.tokens.back() == kEos || h.tokens.size() == 6));
      CHECK(h.tokens.size() <= 6);
    }
  }
}

TEST_CASE("length penalty selection maximises the penalised score") {
  // Long outputs are favoured by a strong penalty for early EOS.
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    oracle::TableScorer s0(5, seed, -1.5), s1(5, seed, -1.5);
    Hypothesis h0 = beam_search(s0, {5, 8, 0.0});
    Hypothesis h1 = beam_search(s1, {5, 8, 1.0});
    CHECK(penalized_score(h1, 1.0) >= penalized_score(h0, 1.0));
  }
}

TEST_CASE("eos first when it dominates") {
  std::vector<double> lp(5, std::log(0.05));
  lp[kEos] = std::log(0.8);
  ConstantScorer s(lp);
  Hypothesis h = beam_search(s, {3, 10, 1.0});
  CHECK(h.tokens == TokenSequence{kEos});
  CHECK(h.finished);
  CHECK_THROWS(beam_search(s, {0, 10, 1.0}));
}

TEST_CASE("model scorer beam and greedy agree at width one") {
  RandomStream rng(14);
  for (Variant v : {Variant::Seq2Seq, Variant::AdaDec, Variant::AdaDecAttExp}) {
    Seq2SeqModel m(tiny(v), rng.next_u64());
    for (int t = 0; t < 5; ++t) {
      TokenSequence src, ex;
      for (int k = 0; k < 4; ++k) src.push_back(static_cast<TokenId>(4 + rng.below(8)));
      for (int k = 0; k < 3; ++k) ex.push_back(static_cast<TokenId>(4 + rng.below(8)));
      src.push_back(kEos);
      ex.push_back(kEos);
      ModelScorer a(m, src, &ex), b(m, src, &ex);
      CHECK(beam_search(a, {1, 15, 1.0}).tokens == greedy_decode(b, 15).tokens);
      ModelScorer c(m, src, &ex), d(m, src, &ex);
      Hypothesis w5 = beam_search(c, {5, 15, 1.0});
      Hypothesis w1 = beam_search(d, {1, 15, 1.0});
      CHECK(penalized_score(w5, 1.0) >= penalized_score(w1, 1.0) - 1e-12);
    }
  }
}
