#include "adadec/pipeline.hpp"

#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "adadec/binary_io.hpp"
#include "adadec/corpus.hpp"
#include "adadec/retrieval.hpp"

namespace adadec {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config binding
// ---------------------------------------------------------------------------

namespace {

struct Field {
  std::string section;  // "" for top level
  std::string key;
  // Returns false on a type or value error.
  std::function<bool(RunConfig&, const json&)> set;
  std::function<ojson(const RunConfig&)> get;
};

template <typename Get>
Field size_field(std::string section, std::string key, Get member) {
  return {section, key,
          [member](RunConfig& c, const json& v) {
            if (!v.is_number_unsigned()) return false;
            member(c) = v.get<std::size_t>();
            return true;
          },
          [member](const RunConfig& c) { return ojson(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field u64_field(std::string section, std::string key, Get member) {
  return {section, key,
          [member](RunConfig& c, const json& v) {
            if (!v.is_number_unsigned()) return false;
            member(c) = v.get<std::uint64_t>();
            return true;
          },
          [member](const RunConfig& c) { return ojson(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field real_field(std::string section, std::string key, Get member) {
  return {section, key,
          [member](RunConfig& c, const json& v) {
            if (!v.is_number()) return false;
            member(c) = v.get<double>();
            return true;
          },
          [member](const RunConfig& c) { return ojson(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field bool_field(std::string section, std::string key, Get member) {
  return {section, key,
          [member](RunConfig& c, const json& v) {
            if (!v.is_boolean()) return false;
            member(c) = v.get<bool>();
            return true;
          },
          [member](const RunConfig& c) { return ojson(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field string_field(std::string section, std::string key, Get member) {
  return {section, key,
          [member](RunConfig& c, const json& v) {
            if (!v.is_string()) return false;
            member(c) = v.get<std::string>();
            return true;
          },
          [member](const RunConfig& c) { return ojson(member(const_cast<RunConfig&>(c))); }};
}

// String-valued enum: parse may throw, which counts as a bad value.
template <typename Get, typename Parse, typename Print>
Field enum_field(std::string section, std::string key, Get member, Parse parse, Print print) {
  return {section, key,
          [member, parse](RunConfig& c, const json& v) {
            if (!v.is_string()) return false;
            try {
              member(c) = parse(v.get<std::string>());
            } catch (const std::exception&) {
              return false;
            }
            return true;
          },
          [member, print](const RunConfig& c) { return ojson(print(member(const_cast<RunConfig&>(c)))); }};
}

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw std::invalid_argument("precision must be f32 or f64");
}
std::string precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

RougeMode parse_mode(const std::string& s) {
  if (s == "f1") return RougeMode::F1;
  if (s == "limited_recall") return RougeMode::LimitedRecall;
  throw std::invalid_argument("mode must be f1 or limited_recall");
}
std::string mode_name(RougeMode m) { return m == RougeMode::F1 ? "f1" : "limited_recall"; }

#define M(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      string_field("", "out_dir", M(out_dir)),

      string_field("corpus", "train", M(corpus.train)),
      string_field("corpus", "dev", M(corpus.dev)),
      string_field("corpus", "test", M(corpus.test)),
      size_field("corpus", "vocab_size", M(corpus.vocab_size)),
      size_field("corpus", "max_source_len", M(corpus.max_source_len)),

      enum_field("model", "cell", M(model.cell), parse_cell, [](CellKind k) { return to_string(k); }),
      size_field("model", "embed_dim", M(model.embed_dim)),
      size_field("model", "encoder_hidden", M(model.encoder_hidden)),
      size_field("model", "encoder_layers", M(model.encoder_layers)),
      size_field("model", "decoder_hidden", M(model.decoder_hidden)),
      size_field("model", "rank", M(model.rank)),
      size_field("model", "exemplar_hidden", M(model.exemplar_hidden)),
      bool_field("model", "attention", M(model.attention)),
      bool_field("model", "copy", M(model.copy)),
      bool_field("model", "tie_embeddings", M(model.tie_embeddings)),
      real_field("model", "init_range", M(model.init_range)),

      size_field("training", "batch_size", M(training.batch_size)),
      real_field("training", "learning_rate", M(training.learning_rate)),
      real_field("training", "anneal_factor", M(training.anneal_factor)),
      size_field("training", "anneal_every", M(training.anneal_every)),
      real_field("training", "weight_decay", M(training.weight_decay)),
      real_field("training", "clip_norm", M(training.clip_norm)),
      real_field("training", "dropout", M(training.dropout)),
      size_field("training", "max_epochs", M(training.max_epochs)),
      size_field("training", "patience", M(training.patience)),
      string_field("training", "early_stop_metric", M(training.early_stop_metric)),
      enum_field("training", "variant", M(training.variant), parse_variant, [](Variant v) { return to_string(v); }),
      u64_field("training", "seed", M(training.seed)),
      real_field("training", "beta1", M(training.beta1)),
      real_field("training", "beta2", M(training.beta2)),
      real_field("training", "epsilon", M(training.epsilon)),
      enum_field("training", "precision", M(training.precision), parse_precision, precision_name),
      size_field("training", "dev_max_len", M(training.dev_max_len)),

      size_field("decoding", "beam_width", M(decoding.beam_width)),
      size_field("decoding", "max_len", M(decoding.max_len)),
      real_field("decoding", "length_penalty", M(decoding.length_penalty)),
      bool_field("decoding", "greedy", M(decoding.greedy)),

      enum_field("evaluation", "mode", M(evaluation.mode), parse_mode, mode_name),

      size_field("synth", "pairs", M(synth.pairs)),
      size_field("synth", "templates", M(synth.templates)),
      real_field("synth", "dev_fraction", M(synth.dev_fraction)),
      real_field("synth", "test_fraction", M(synth.test_fraction)),
      u64_field("synth", "seed", M(synth.seed)),

      size_field("gradcheck", "hidden", M(gradcheck.hidden)),
      size_field("gradcheck", "vocab", M(gradcheck.vocab)),
      size_field("gradcheck", "length", M(gradcheck.length)),
      size_field("gradcheck", "batch", M(gradcheck.batch)),
      size_field("gradcheck", "coordinates", M(gradcheck.coordinates)),
      real_field("gradcheck", "epsilon", M(gradcheck.epsilon)),
      real_field("gradcheck", "tolerance", M(gradcheck.tolerance)),
      real_field("gradcheck", "init_range", M(gradcheck.init_range)),
      string_field("gradcheck", "cell", M(gradcheck.cell)),
  };
  return all;
}

#undef M

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

bool is_section(const std::string& name) {
  for (const auto& f : fields())
    if (!f.section.empty() && f.section == name) return true;
  return false;
}

std::string dotted(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

[[noreturn]] void throw_config(const std::string& what, const std::vector<std::string>& keys) {
  std::string msg = what;
  for (std::size_t i = 0; i < keys.size(); ++i) msg += (i ? ", " : " ") + keys[i];
  throw ConfigError(msg, keys);
}

ojson section_json(const RunConfig& c, const std::string& section) {
  ojson out = ojson::object();
  for (const auto& f : fields())
    if (f.section == section) out[f.key] = f.get(c);
  return out;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what(), {});
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object", {});

  RunConfig config;
  std::vector<std::string> unknown, invalid;
  for (auto it = root.begin(); it != root.end(); ++it) {
    if (const Field* f = find_field("", it.key())) {
      if (!f->set(config, it.value())) invalid.push_back(it.key());
      continue;
    }
    if (!is_section(it.key())) {
      unknown.push_back(it.key());
      continue;
    }
    if (!it.value().is_object()) {
      invalid.push_back(it.key());
      continue;
    }
    for (auto kv = it.value().begin(); kv != it.value().end(); ++kv) {
      const Field* f = find_field(it.key(), kv.key());
      if (!f) {
        unknown.push_back(dotted(it.key(), kv.key()));
      } else if (!f->set(config, kv.value())) {
        invalid.push_back(dotted(it.key(), kv.key()));
      }
    }
  }
  if (!unknown.empty()) throw_config("unknown config keys:", unknown);
  if (!invalid.empty()) throw_config("config keys with a wrong type or value:", invalid);
  config.validate();
  return config;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string(), {});
  return from_json_text(read_file(path));
}

std::string RunConfig::to_json_text() const {
  ojson root;
  root["out_dir"] = out_dir;
  for (const char* s : {"corpus", "model", "training", "decoding", "evaluation", "synth", "gradcheck"})
    root[s] = section_json(*this, s);
  return root.dump(2) + "\n";
}

void RunConfig::apply_override(const std::string& assignment) {
  *this = with_overrides(*this, {assignment});
}

RunConfig RunConfig::with_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  json root = json::parse(base.to_json_text());
  std::vector<std::string> malformed;
  for (const auto& a : overrides) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) {
      malformed.push_back(a);
      continue;
    }
    const std::string key = a.substr(0, eq);
    const std::string raw = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      root[key] = value;
    } else {
      const std::string section = key.substr(0, dot);
      json& sec = root[section];
      if (!sec.is_object()) sec = json::object();
      sec[key.substr(dot + 1)] = value;
    }
  }
  if (!malformed.empty()) throw_config("overrides must look like section.key=value:", malformed);
  return from_json_text(root.dump());
}

void RunConfig::validate() const {
  std::vector<std::string> bad;
  if (out_dir.empty()) bad.emplace_back("out_dir");
  if (corpus.train.empty()) bad.emplace_back("corpus.train");
  if (corpus.dev.empty()) bad.emplace_back("corpus.dev");
  if (corpus.test.empty()) bad.emplace_back("corpus.test");
  if (corpus.vocab_size < kReservedTokens + 1) bad.emplace_back("corpus.vocab_size");

  if (model.embed_dim == 0) bad.emplace_back("model.embed_dim");
  if (model.encoder_hidden == 0) bad.emplace_back("model.encoder_hidden");
  if (model.encoder_layers == 0) bad.emplace_back("model.encoder_layers");
  if (model.decoder_hidden == 0) bad.emplace_back("model.decoder_hidden");
  if (model.exemplar_hidden == 0) bad.emplace_back("model.exemplar_hidden");
  if (!(model.init_range > 0)) bad.emplace_back("model.init_range");
  if (model.copy && !model.attention) bad.emplace_back("model.copy");
  if (attends_exemplar(training.variant) && !model.attention) bad.emplace_back("model.attention");

  const TrainConfig& t = training;
  if (t.batch_size == 0) bad.emplace_back("training.batch_size");
  if (!(t.learning_rate > 0)) bad.emplace_back("training.learning_rate");
  if (!(t.anneal_factor > 0)) bad.emplace_back("training.anneal_factor");
  if (t.anneal_every == 0) bad.emplace_back("training.anneal_every");
  if (!(t.weight_decay >= 0)) bad.emplace_back("training.weight_decay");
  if (!(t.clip_norm > 0)) bad.emplace_back("training.clip_norm");
  if (!(t.dropout >= 0 && t.dropout < 1)) bad.emplace_back("training.dropout");
  if (t.max_epochs == 0) bad.emplace_back("training.max_epochs");
  if (t.patience == 0) bad.emplace_back("training.patience");
  if (t.early_stop_metric != "rouge_l" && t.early_stop_metric != "rouge_4")
    bad.emplace_back("training.early_stop_metric");
  if (!(t.beta1 >= 0 && t.beta1 < 1)) bad.emplace_back("training.beta1");
  if (!(t.beta2 >= 0 && t.beta2 < 1)) bad.emplace_back("training.beta2");
  if (!(t.epsilon > 0)) bad.emplace_back("training.epsilon");
  if (t.dev_max_len == 0) bad.emplace_back("training.dev_max_len");

  if (decoding.beam_width == 0) bad.emplace_back("decoding.beam_width");
  if (decoding.max_len == 0) bad.emplace_back("decoding.max_len");
  if (!(decoding.length_penalty >= 0)) bad.emplace_back("decoding.length_penalty");

  if (synth.pairs == 0) bad.emplace_back("synth.pairs");
  if (synth.templates < 1 || synth.templates > 8) bad.emplace_back("synth.templates");
  if (!(synth.dev_fraction >= 0)) bad.emplace_back("synth.dev_fraction");
  if (!(synth.test_fraction >= 0)) bad.emplace_back("synth.test_fraction");
  if (!(synth.dev_fraction + synth.test_fraction < 1)) bad.emplace_back("synth.test_fraction");

  if (gradcheck.hidden == 0) bad.emplace_back("gradcheck.hidden");
  if (gradcheck.vocab < kReservedTokens + 1) bad.emplace_back("gradcheck.vocab");
  if (gradcheck.length == 0) bad.emplace_back("gradcheck.length");
  if (gradcheck.batch == 0) bad.emplace_back("gradcheck.batch");
  if (!(gradcheck.epsilon > 0)) bad.emplace_back("gradcheck.epsilon");
  if (!(gradcheck.tolerance > 0)) bad.emplace_back("gradcheck.tolerance");
  if (!(gradcheck.init_range > 0)) bad.emplace_back("gradcheck.init_range");
  if (gradcheck.cell != "lstm" && gradcheck.cell != "elman") bad.emplace_back("gradcheck.cell");

  if (!bad.empty()) throw_config("invalid config values:", bad);
}

// ---------------------------------------------------------------------------
// Digests and stamps
// ---------------------------------------------------------------------------

std::string hex_digest(std::uint64_t digest) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, digest >>= 4) s[static_cast<std::size_t>(i)] = digits[digest & 0xf];
  return s;
}

namespace {

std::string file_fingerprint(const std::string& path) {
  if (!fs::exists(path)) return "missing";
  return hex_digest(fnv1a64(read_file(path)));
}

fs::path out(const RunConfig& c, const std::string& name) { return fs::path(c.out_dir) / name; }
fs::path stamp_path(const RunConfig& c, const std::string& stage) { return out(c, "stamps") / (stage + ".digest"); }

void write_stamp(const RunConfig& c, const std::string& stage, std::uint64_t digest) {
  fs::create_directories(out(c, "stamps"));
  write_file(stamp_path(c, stage), hex_digest(digest) + "\n");
}

// Every file in `files` must exist and the stage stamp must match `expected`.
void require_stage(const RunConfig& c, const std::string& stage, std::uint64_t expected,
                   const std::vector<fs::path>& files) {
  for (const auto& f : files) {
    if (!fs::exists(f)) {
      throw PrerequisiteError("missing " + f.string() + "; run `" + stage + "` first", stage);
    }
  }
  const fs::path sp = stamp_path(c, stage);
  if (!fs::exists(sp)) throw PrerequisiteError("missing " + sp.string() + "; run `" + stage + "` first", stage);
  std::string got = read_file(sp);
  while (!got.empty() && (got.back() == '\n' || got.back() == '\r')) got.pop_back();
  if (got != hex_digest(expected)) {
    throw PrerequisiteError("artifacts of `" + stage + "` in " + c.out_dir +
                                " were produced under different settings or inputs (digest " + got + ", expected " +
                                hex_digest(expected) + "); rerun `" + stage + "`",
                            stage);
  }
}

}  // namespace

std::uint64_t preprocess_digest(const RunConfig& c) {
  // Paths are left out so a relocated corpus with the same bytes keeps its digest.
  ojson corpus = section_json(c, "corpus");
  for (const char* split : {"train", "dev", "test"}) corpus.erase(split);
  std::string s = "preprocess|" + corpus.dump();
  s += "|" + file_fingerprint(c.corpus.train);
  s += "|" + file_fingerprint(c.corpus.dev);
  s += "|" + file_fingerprint(c.corpus.test);
  return fnv1a64(s);
}

std::uint64_t retrieve_digest(const RunConfig& c) { return fnv1a64("retrieve|" + hex_digest(preprocess_digest(c))); }

std::uint64_t train_digest(const RunConfig& c) {
  std::string s = "train|" + hex_digest(preprocess_digest(c));
  if (uses_exemplar(c.training.variant)) s += "|" + hex_digest(retrieve_digest(c));
  s += "|" + section_json(c, "model").dump() + "|" + section_json(c, "training").dump();
  return fnv1a64(s);
}

std::uint64_t generate_digest(const RunConfig& c) {
  return fnv1a64("generate|" + hex_digest(train_digest(c)) + "|" + section_json(c, "decoding").dump());
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kSplits = {"train", "dev", "test"};

std::string split_path(const RunConfig& c, const std::string& split) {
  if (split == "train") return c.corpus.train;
  if (split == "dev") return c.corpus.dev;
  return c.corpus.test;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

// Exemplar assignments for a split. Training queries exclude themselves.
fs::path exemplar_path(const RunConfig& c, const std::string& split) {
  return split == "train" ? out(c, "exemplars.jsonl") : out(c, split + ".exemplars.jsonl");
}

std::optional<std::size_t> source_limit(const RunConfig& c) {
  if (c.corpus.max_source_len == 0) return std::nullopt;
  return c.corpus.max_source_len;
}

ModelConfig effective_model(const RunConfig& c, std::size_t vocab_size) {
  ModelConfig m = c.model;
  m.variant = c.training.variant;
  m.vocab_size = vocab_size;
  m.max_source_len = c.corpus.max_source_len;
  return m;
}

}  // namespace

void run_synth_data(const RunConfig& c, std::ostream& log) {
  SynthCorpus corpus = generate_synthetic(c.synth);
  const std::vector<std::pair<std::string, const std::vector<std::string>*>> parts = {
      {c.corpus.train, &corpus.train}, {c.corpus.dev, &corpus.dev}, {c.corpus.test, &corpus.test}};
  for (const auto& [path, lines] : parts) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file(p, join_lines(*lines));
    log << "synth-data: wrote " << lines->size() << " pairs to " << path << "\n";
  }
}

void run_preprocess(const RunConfig& c, std::ostream& log) {
  std::vector<std::vector<TextInstance>> text;
  for (const auto& split : kSplits) {
    const std::string path = split_path(c, split);
    if (!fs::exists(path)) {
      throw PrerequisiteError("missing corpus file " + path + "; run `synth-data` first or set corpus." + split,
                              "synth-data");
    }
    text.push_back(load_jsonl(path));
  }
  Vocabulary vocab = build_vocab(text[0], c.corpus.vocab_size);
  fs::create_directories(c.out_dir);
  save_vocab(vocab, out(c, "vocab.json"));
  for (std::size_t s = 0; s < kSplits.size(); ++s) {
    auto instances = encode_instances(text[s], vocab, source_limit(c));
    save_tokens(instances, out(c, kSplits[s] + ".tokens"));
    log << "preprocess: " << kSplits[s] << " " << instances.size() << " instances\n";
  }
  log << "preprocess: vocabulary " << vocab.size() << " tokens\n";
  write_stamp(c, "preprocess", preprocess_digest(c));
}

void run_retrieve(const RunConfig& c, std::ostream& log) {
  std::vector<fs::path> inputs;
  for (const auto& s : kSplits) inputs.push_back(out(c, s + ".tokens"));
  require_stage(c, "preprocess", preprocess_digest(c), inputs);
  const auto train = load_tokens(out(c, "train.tokens"));
  for (const auto& split : kSplits) {
    const bool self = split == "train";
    const auto queries = self ? train : load_tokens(out(c, split + ".tokens"));
    const auto assignments = retrieve_exemplars(train, queries, self);
    save_exemplars(assignments, exemplar_path(c, split));
    log << "retrieve: " << split << " " << assignments.size() << " assignments -> "
        << exemplar_path(c, split).string() << "\n";
  }
  write_stamp(c, "retrieve", retrieve_digest(c));
}

namespace {

void require_exemplars(const RunConfig& c, const std::vector<std::string>& splits) {
  std::vector<fs::path> files;
  for (const auto& s : splits) files.push_back(exemplar_path(c, s));
  require_stage(c, "retrieve", retrieve_digest(c), files);
}

}  // namespace

void run_train(const RunConfig& c, std::ostream& log) {
  const Variant variant = c.training.variant;
  require_stage(c, "preprocess", preprocess_digest(c),
                {out(c, "vocab.json"), out(c, "train.tokens"), out(c, "dev.tokens")});
  if (uses_exemplar(variant)) require_exemplars(c, {"train", "dev"});

  const Vocabulary vocab = load_vocab(out(c, "vocab.json"));
  const auto train = load_tokens(out(c, "train.tokens"));
  const auto dev = load_tokens(out(c, "dev.tokens"));
  ExemplarTable train_ex, dev_ex;
  if (uses_exemplar(variant)) {
    train_ex = build_exemplar_table(train, load_exemplars(exemplar_path(c, "train")), train);
    dev_ex = build_exemplar_table(dev, load_exemplars(exemplar_path(c, "dev")), train);
  }

  Seq2SeqModel model(effective_model(c, vocab.size()), c.training.seed);
  log << "train: " << to_string(variant) << " with " << model.params().scalar_count() << " parameters, "
      << train.size() << " training pairs\n";
  FitResult result = fit(model, train, dev, train_ex, dev_ex, vocab, c.training);
  for (const auto& r : result.log) {
    log << "epoch " << r.epoch << " lr " << r.learning_rate << " loss " << r.train_loss << " dev_"
        << c.training.early_stop_metric << " " << r.dev_score << (r.improved ? " *" : "") << "\n";
  }
  model.assign_parameters(result.best_params);

  Checkpoint ck;
  ck.variant = variant;
  ck.config_digest = train_digest(c);
  ck.model_config = model_config_to_json(model.config());
  ck.dtype = c.training.precision;
  ck.params = model.params();
  save_checkpoint(ck, out(c, "model.ckpt"));
  write_file(out(c, "train_log.jsonl"), result.log_jsonl);
  log << "train: best epoch " << result.best_epoch << " dev " << result.best_score << "\n";
  write_stamp(c, "train", train_digest(c));
}

void run_generate(const RunConfig& c, std::ostream& log) {
  const Variant variant = c.training.variant;
  require_stage(c, "preprocess", preprocess_digest(c),
                {out(c, "vocab.json"), out(c, "train.tokens"), out(c, "test.tokens")});
  if (uses_exemplar(variant)) require_exemplars(c, {"test"});
  require_stage(c, "train", train_digest(c), {out(c, "model.ckpt")});

  Checkpoint ck = load_checkpoint(out(c, "model.ckpt"), variant);
  if (ck.config_digest != train_digest(c)) {
    throw PrerequisiteError("checkpoint digest " + hex_digest(ck.config_digest) +
                                " does not match the current config; rerun `train`",
                            "train");
  }
  Seq2SeqModel model(model_config_from_json(ck.model_config), 0);
  model.assign_parameters(ck.params);

  const Vocabulary vocab = load_vocab(out(c, "vocab.json"));
  const auto test = load_tokens(out(c, "test.tokens"));
  std::vector<Instance> train;
  ExemplarTable test_ex;
  if (uses_exemplar(variant)) {
    train = load_tokens(out(c, "train.tokens"));
    test_ex = build_exemplar_table(test, load_exemplars(exemplar_path(c, "test")), train);
  }

  const BeamOptions beam{c.decoding.beam_width, c.decoding.max_len, c.decoding.length_penalty};
  std::string predictions;
  for (std::size_t i = 0; i < test.size(); ++i) {
    ModelScorer scorer(model, test[i].source, test_ex.empty() ? nullptr : test_ex[i], c.training.precision);
    Hypothesis h = c.decoding.greedy ? greedy_decode(scorer, c.decoding.max_len) : beam_search(scorer, beam);
    predictions += decode(h.tokens, vocab) + "\n";
  }
  write_file(out(c, "predictions.txt"), predictions);
  log << "generate: " << test.size() << " predictions ("
      << (c.decoding.greedy ? std::string("greedy") : "beam " + std::to_string(beam.width)) << ") -> "
      << out(c, "predictions.txt").string() << "\n";
  write_stamp(c, "generate", generate_digest(c));
}

ScoreReport run_evaluate(const RunConfig& c, std::ostream& log) {
  require_stage(c, "generate", generate_digest(c), {out(c, "predictions.txt")});
  if (!fs::exists(c.corpus.test)) throw CorpusError("missing reference file " + c.corpus.test);
  const auto refs_text = load_jsonl(c.corpus.test);
  std::vector<std::vector<std::string>> candidates, references;
  std::istringstream in(read_file(out(c, "predictions.txt")));
  for (std::string line; std::getline(in, line);) candidates.push_back(tokenize(line));
  for (const auto& r : refs_text) references.push_back(r.target);
  if (candidates.size() != references.size()) {
    throw CorpusError("predictions.txt has " + std::to_string(candidates.size()) + " lines but " + c.corpus.test +
                      " has " + std::to_string(references.size()) + " references");
  }
  ScoreReport report = score_corpus(candidates, references, c.evaluation.mode);
  write_file(out(c, "scores.json"), report.to_json());
  write_file(out(c, "scores.txt"), report.to_text());
  log << report.to_text();
  return report;
}

GradCheckResult run_gradcheck(const RunConfig& c, std::ostream& log) {
  const GradcheckSettings& g = c.gradcheck;
  ModelConfig m;
  m.variant = Variant::AdaDec;
  m.cell = parse_cell(g.cell);
  m.vocab_size = g.vocab;
  m.embed_dim = g.hidden;
  m.encoder_hidden = g.hidden;
  m.decoder_hidden = g.hidden;
  m.rank = g.hidden;
  m.exemplar_hidden = g.hidden;
  m.init_range = g.init_range;
  Seq2SeqModel model(m, c.training.seed);

  RandomStream rng(c.training.seed + 1);
  auto sequence = [&] {
    TokenSequence s;
    for (std::size_t t = 0; t < g.length; ++t)
      s.push_back(static_cast<TokenId>(kReservedTokens + rng.below(g.vocab - kReservedTokens)));
    s.push_back(kEos);
    return s;
  };
  std::vector<Instance> batch;
  std::vector<TokenSequence> exemplars;
  for (std::size_t b = 0; b < g.batch; ++b) {
    batch.push_back(Instance{b, sequence(), sequence()});
    exemplars.push_back(sequence());
  }

  LossBuilder loss = [&](Tape& tape) {
    std::vector<Var> terms;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      DecoderContext ctx = model.prepare(tape, batch[b].source, &exemplars[b]);
      std::size_t count = 0;
      terms.push_back(model.sequence_nll(tape, ctx, batch[b].target, {}, count));
      tokens += count;
    }
    return tape.scale(tape.sum(tape.concat(terms)), 1.0 / static_cast<double>(tokens));
  };
  GradCheckOptions opts;
  opts.epsilon = g.epsilon;
  opts.tolerance = g.tolerance;
  opts.max_coordinates = g.coordinates;
  opts.seed = c.training.seed;
  GradCheckResult r = grad_check(loss, model.params(), opts);

  ojson j;
  j["passed"] = r.passed;
  j["max_relative_error"] = r.max_relative_error;
  j["worst_parameter"] = r.worst_parameter;
  j["worst_index"] = r.worst_index;
  j["coordinates_checked"] = r.coordinates_checked;
  j["tensors_checked"] = r.tensors_checked;
  fs::create_directories(c.out_dir);
  write_file(out(c, "gradcheck.json"), j.dump(2) + "\n");
  log << "gradcheck: " << (r.passed ? "PASS" : "FAIL") << " max relative error " << r.max_relative_error
      << " at " << r.worst_parameter << "[" << r.worst_index << "] over " << r.coordinates_checked
      << " coordinates in " << r.tensors_checked << " tensors\n";
  return r;
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"preprocess", "retrieve", "train",    "generate",
                                                 "evaluate",   "gradcheck", "synth-data"};
  return names;
}

int run(const std::string& subcommand, const RunConfig& config, std::ostream& log, std::ostream& err) {
  try {
    config.validate();
    if (subcommand == "synth-data") {
      run_synth_data(config, log);
    } else if (subcommand == "preprocess") {
      run_preprocess(config, log);
    } else if (subcommand == "retrieve") {
      run_retrieve(config, log);
    } else if (subcommand == "train") {
      run_train(config, log);
    } else if (subcommand == "generate") {
      run_generate(config, log);
    } else if (subcommand == "evaluate") {
      run_evaluate(config, log);
    } else if (subcommand == "gradcheck") {
      return run_gradcheck(config, log).passed ? 0 : 1;
    } else {
      err << "error: unknown subcommand '" << subcommand << "'\n";
      return 2;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const PrerequisiteError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace adadec
