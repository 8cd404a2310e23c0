#include <doctest.h>

#include <filesystem>

#include "adadec/retrieval.hpp"
#include "oracles.hpp"

using namespace adadec;

namespace {

constexpr TokenId A = 10, B = 11, C = 12, D = 13;

Instance doc(std::size_t id, TokenSequence src) {
  src.push_back(kEos);
  return {id, src, {A, kEos}};
}

std::vector<Instance> random_corpus(std::size_t n, std::size_t vocab, std::size_t max_len, RandomStream& rng) {
  std::vector<Instance> out;
  for (std::size_t i = 0; i < n; ++i) {
    TokenSequence s;
    const std::size_t len = rng.below(max_len + 1);
    for (std::size_t k = 0; k < len; ++k) s.push_back(static_cast<TokenId>(kReservedTokens + rng.below(vocab)));
    out.push_back(doc(i, s));
  }
  return out;
}

}  // namespace

TEST_CASE("bag of words counts") {
  CHECK(bow_vector({A, B, A, kEos}) == BowVector{{A, 2}, {B, 1}});
  CHECK(bow_vector({A}) == BowVector{{A, 1}});
  CHECK(bow_vector({}).empty());
  CHECK(bow_vector({kPad, kUnk, kBos, kEos}).empty());
  CHECK(cosine({}, BowVector{{A, 3}}) == 0.0);
}

TEST_CASE("cosine values") {
  const BowVector u{{A, 2}, {B, 1}}, v{{A, 1}, {B, 2}};
  CHECK(cosine(u, u) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(u, BowVector{{C, 1}, {D, 4}}) == 0.0);
  CHECK(cosine(u, v) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("cosine is symmetric and bounded") {
  RandomStream rng(21);
  auto corpus = random_corpus(200, 12, 10, rng);
  for (std::size_t i = 0; i + 1 < corpus.size(); i += 2) {
    const auto u = bow_vector(corpus[i].source), v = bow_vector(corpus[i + 1].source);
    const double s = cosine(u, v);
    CHECK(s == cosine(v, u));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0 + 1e-12);
  }
}

TEST_CASE("query identical to one training source") {
  std::vector<Instance> train = {doc(0, {A, B}), doc(1, {C, D, C}), doc(2, {A, D})};
  auto r = retrieve_exemplars(train, {doc(0, {D, C, C})}, false);
  REQUIRE(r.size() == 1);
  CHECK(r[0].exemplar_id == 1);
  CHECK(r[0].similarity == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("self exclusion picks the duplicate") {
  std::vector<Instance> train = {doc(0, {A, B}), doc(1, {C, D}), doc(2, {A, B})};
  auto r = retrieve_exemplars(train, train, true);
  CHECK(r[0].exemplar_id == 2);
  CHECK(r[0].similarity == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r[2].exemplar_id == 0);
  CHECK(r[1].exemplar_id != 1);
  auto no_excl = retrieve_exemplars(train, train, false);
  CHECK(no_excl[2].exemplar_id == 0);  // tie goes to the smaller id
}

TEST_CASE("no overlap falls back to the smallest allowed id") {
  std::vector<Instance> train = {doc(0, {A}), doc(1, {B}), doc(2, {C})};
  auto r = retrieve_exemplars(train, {doc(0, {D})}, true);
  CHECK(r[0].exemplar_id == 1);
  CHECK(r[0].similarity == 0.0);
  auto r2 = retrieve_exemplars(train, {doc(5, {D})}, false);
  CHECK(r2[0].exemplar_id == 0);
}

TEST_CASE("degenerate training splits are errors") {
  CHECK_THROWS(retrieve_exemplars({}, {doc(0, {A})}, false));
  CHECK_THROWS(retrieve_exemplars({doc(0, {A})}, {doc(0, {A})}, true));
  CHECK_NOTHROW(retrieve_exemplars({doc(0, {A})}, {doc(0, {A})}, false));
}

TEST_CASE("three document toy corpus matches the oracle") {
  std::vector<Instance> train = {doc(0, {A, B, C}), doc(1, {A, B, D}), doc(2, {C, C, D})};
  for (bool excl : {false, true}) CHECK(retrieve_exemplars(train, train, excl) == oracle::retrieve(train, train, excl));
}

TEST_CASE("inverted index agrees with brute force on random corpora") {
  RandomStream rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t vocab = 3 + rng.below(30);
    auto train = random_corpus(20 + rng.below(120), vocab, 8, rng);
    auto queries = random_corpus(30, vocab, 8, rng);
    CHECK(retrieve_exemplars(train, queries, false) == oracle::retrieve(train, queries, false));
    CHECK(retrieve_exemplars(train, train, true) == oracle::retrieve(train, train, true));
  }
}

TEST_CASE("scaling a query's counts keeps its exemplar") {
  RandomStream rng(44);
  auto train = random_corpus(150, 15, 9, rng);
  auto queries = random_corpus(40, 15, 9, rng);
  auto base = retrieve_exemplars(train, queries, false);
  for (int c : {2, 3, 7}) {
    std::vector<Instance> scaled;
    for (const auto& q : queries) {
      TokenSequence s;
      for (TokenId t : content_tokens(q.source))
        for (int k = 0; k < c; ++k) s.push_back(t);
      scaled.push_back(doc(q.id, s));
    }
    auto r = retrieve_exemplars(train, scaled, false);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i].exemplar_id == base[i].exemplar_id);
  }
}

TEST_CASE("exemplar files round trip") {
  RandomStream rng(55);
  auto train = random_corpus(50, 10, 6, rng);
  auto r = retrieve_exemplars(train, train, true);
  auto path = std::filesystem::temp_directory_path() / "adadec_test_exemplars.jsonl";
  save_exemplars(r, path);
  CHECK(load_exemplars(path) == r);
}
