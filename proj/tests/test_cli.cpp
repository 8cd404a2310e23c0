#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <sstream>

#include "adadec/binary_io.hpp"
#include "adadec/pipeline.hpp"
#include "oracles.hpp"

using namespace adadec;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("adadec_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunConfig toy_config(const fs::path& root, const std::string& variant) {
  return RunConfig::with_overrides(
      RunConfig{}, {"out_dir=" + nlohmann::json((root / "run").string()).dump(),
                    "corpus.train=" + nlohmann::json((root / "data/train.jsonl").string()).dump(),
                    "corpus.dev=" + nlohmann::json((root / "data/dev.jsonl").string()).dump(),
                    "corpus.test=" + nlohmann::json((root / "data/test.jsonl").string()).dump(),
                    "synth.pairs=50", "synth.dev_fraction=0.2", "synth.test_fraction=0.2",
                    "model.embed_dim=12", "model.encoder_hidden=6", "model.decoder_hidden=12",
                    "model.exemplar_hidden=6", "training.max_epochs=2", "training.batch_size=8",
                    "training.dev_max_len=25", "decoding.max_len=25", "training.variant=" + variant});
}

int stage(const std::string& name, const RunConfig& c, std::string* err_out = nullptr) {
  std::ostringstream log, err;
  const int code = run(name, c, log, err);
  if (err_out) *err_out = err.str();
  if (code != 0) MESSAGE(name << ": " << err.str());
  return code;
}

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad values") {
  try {
    RunConfig::from_json_text(R"({"model": {"decoder_hidden": 8, "colour": 1}, "extra": {}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    auto keys = e.keys;
    std::sort(keys.begin(), keys.end());
    CHECK(keys == std::vector<std::string>{"extra", "model.colour"});
  }
  try {
    RunConfig::from_json_text(R"({"training": {"batch_size": -3, "variant": "gpt"}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.keys.size() == 2);
  }
  try {
    RunConfig::from_json_text(R"({"training": {"dropout": 1.5}, "decoding": {"beam_width": 0}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    auto keys = e.keys;
    std::sort(keys.begin(), keys.end());
    CHECK(keys == std::vector<std::string>{"decoding.beam_width", "training.dropout"});
  }
  CHECK_THROWS_AS(RunConfig::from_json_text("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("{oops"), ConfigError);
}

TEST_CASE("config round trips and overrides") {
  RunConfig c;
  RunConfig back = RunConfig::from_json_text(c.to_json_text());
  CHECK(back.to_json_text() == c.to_json_text());

  RunConfig o = RunConfig::with_overrides(
      c, {"training.variant=seq2seq", "model.cell=elman", "out_dir=elsewhere", "decoding.length_penalty=0.5"});
  CHECK(o.training.variant == Variant::Seq2Seq);
  CHECK(o.model.cell == CellKind::Elman);
  CHECK(o.out_dir == "elsewhere");
  CHECK(o.decoding.length_penalty == 0.5);
  CHECK_THROWS_AS(RunConfig::with_overrides(c, {"model.nonsense=1"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::with_overrides(c, {"no_equals_sign"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::with_overrides(c, {"training.max_epochs=many"}), ConfigError);
}

TEST_CASE("digests follow the settings they cover") {
  RunConfig a;
  RunConfig b = RunConfig::with_overrides(a, {"decoding.beam_width=3"});
  CHECK(train_digest(a) == train_digest(b));
  CHECK(generate_digest(a) != generate_digest(b));
  RunConfig c = RunConfig::with_overrides(a, {"training.learning_rate=0.01"});
  CHECK(train_digest(a) != train_digest(c));
  CHECK(retrieve_digest(a) == retrieve_digest(c));
}

TEST_CASE("unknown subcommand") {
  std::ostringstream log, err;
  CHECK(run("fly", RunConfig{}, log, err) != 0);
  CHECK(subcommands().size() == 7);
}

TEST_CASE("stages name the missing prerequisite") {
  const fs::path root = fresh_dir("prereq");
  RunConfig c = toy_config(root, "adadec");
  std::string err;
  CHECK(stage("preprocess", c, &err) != 0);
  CHECK(err.find("synth-data") != std::string::npos);
  REQUIRE(stage("synth-data", c) == 0);
  CHECK(stage("retrieve", c, &err) != 0);
  CHECK(err.find("`preprocess`") != std::string::npos);
  REQUIRE(stage("preprocess", c) == 0);
  CHECK(stage("train", c, &err) != 0);
  CHECK(err.find("exemplars.jsonl") != std::string::npos);
  CHECK(err.find("`retrieve`") != std::string::npos);
  CHECK(stage("generate", c, &err) != 0);
  CHECK(stage("evaluate", c, &err) != 0);
  CHECK(err.find("`generate`") != std::string::npos);

  // Seq2seq needs no exemplars.
  RunConfig s = RunConfig::with_overrides(c, {"training.variant=seq2seq"});
  CHECK(stage("train", s) == 0);
}

TEST_CASE("stale artifacts are detected") {
  const fs::path root = fresh_dir("stale");
  RunConfig c = toy_config(root, "adadec");
  REQUIRE(stage("synth-data", c) == 0);
  REQUIRE(stage("preprocess", c) == 0);
  REQUIRE(stage("retrieve", c) == 0);
  std::string err;
  RunConfig changed = RunConfig::with_overrides(c, {"corpus.vocab_size=50"});
  CHECK(stage("retrieve", changed, &err) != 0);
  CHECK(err.find("rerun `preprocess`") != std::string::npos);

  REQUIRE(stage("train", c) == 0);
  RunConfig other = RunConfig::with_overrides(c, {"model.decoder_hidden=10"});
  CHECK(stage("generate", other, &err) != 0);
  CHECK(err.find("`train`") != std::string::npos);

  // Editing the corpus after preprocessing invalidates everything downstream.
  write_file(c.corpus.dev, read_file(c.corpus.dev) + read_file(c.corpus.dev));
  CHECK(stage("train", c, &err) != 0);
  CHECK(err.find("`preprocess`") != std::string::npos);
}

TEST_CASE("retrieve on a three document corpus matches brute force") {
  const fs::path root = fresh_dir("three");
  fs::create_directories(root / "data");
  const std::string lines =
      "{\"source\":\"red fox jumps\",\"target\":\"a\"}\n"
      "{\"source\":\"red fox sleeps\",\"target\":\"b\"}\n"
      "{\"source\":\"blue whale sleeps sleeps\",\"target\":\"c\"}\n";
  for (const char* s : {"train", "dev", "test"}) write_file(root / "data" / (std::string(s) + ".jsonl"), lines);
  RunConfig c = toy_config(root, "adadec");
  REQUIRE(stage("preprocess", c) == 0);
  REQUIRE(stage("retrieve", c) == 0);
  auto train = load_tokens(root / "run/train.tokens");
  CHECK(load_exemplars(root / "run/exemplars.jsonl") == oracle::retrieve(train, train, true));
  CHECK(load_exemplars(root / "run/test.exemplars.jsonl") == oracle::retrieve(train, train, false));
}

TEST_CASE("toy pipeline end to end for both variants") {
  for (const std::string variant : {"seq2seq", "adadec"}) {
    CAPTURE(variant);
    const fs::path root = fresh_dir("e2e_" + variant);
    RunConfig c = toy_config(root, variant);
    for (const char* s : {"synth-data", "preprocess", "retrieve", "train", "generate", "evaluate"})
      REQUIRE(stage(s, c) == 0);
    for (const char* f : {"vocab.json", "train.tokens", "dev.tokens", "test.tokens", "exemplars.jsonl",
                          "model.ckpt", "train_log.jsonl", "predictions.txt", "scores.json", "scores.txt"})
      CHECK(fs::exists(root / "run" / f));

    // Every stage is idempotent.
    std::map<std::string, std::string> before;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) before[e.path().string()] = slurp(e.path());
    for (const char* s : {"synth-data", "preprocess", "retrieve", "train", "generate", "evaluate"})
      REQUIRE(stage(s, c) == 0);
    std::map<std::string, std::string> after;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) after[e.path().string()] = slurp(e.path());
    CHECK(before == after);

    // Width-1 beam and the greedy path write the same file.
    RunConfig beam1 = RunConfig::with_overrides(c, {"decoding.beam_width=1"});
    REQUIRE(stage("generate", beam1) == 0);
    const std::string by_beam = slurp(root / "run/predictions.txt");
    RunConfig greedy = RunConfig::with_overrides(c, {"decoding.greedy=true"});
    REQUIRE(stage("generate", greedy) == 0);
    CHECK(slurp(root / "run/predictions.txt") == by_beam);
  }
}

TEST_CASE("checkpoint of another variant is refused") {
  const fs::path root = fresh_dir("variant");
  RunConfig s = toy_config(root, "seq2seq");
  for (const char* st : {"synth-data", "preprocess", "retrieve", "train"}) REQUIRE(stage(st, s) == 0);
  // Copy the seq2seq stamp so only the checkpoint header can object.
  RunConfig a = toy_config(root, "adadec");
  write_file(root / "run/stamps/train.digest", hex_digest(train_digest(a)) + "\n");
  std::string err;
  CHECK(stage("generate", a, &err) != 0);
  CHECK(err.find("variant") != std::string::npos);
}

TEST_CASE("gradcheck stage") {
  const fs::path root = fresh_dir("gradcheck");
  RunConfig c = RunConfig::with_overrides(RunConfig{}, {"out_dir=" + nlohmann::json((root / "run").string()).dump(),
                                                         "gradcheck.coordinates=84"});
  std::ostringstream log, err;
  CHECK(run("gradcheck", c, log, err) == 0);
  CHECK(fs::exists(root / "run/gradcheck.json"));
  CHECK(log.str().find("PASS") != std::string::npos);
}
