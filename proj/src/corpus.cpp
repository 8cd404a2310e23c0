#include "adadec/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "adadec/binary_io.hpp"

namespace adadec {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string linearize_records(const RecordTable& table) {
  if (table.empty()) throw CorpusError("linearize_records: empty record table");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& [attribute, value] = table[i];
    if (attribute.empty()) throw CorpusError("linearize_records: empty attribute name");
    if (i) out.emplace_back("|");
    out.push_back(attribute);
    out.emplace_back(":");
    for (auto& t : tokenize(value)) out.push_back(std::move(t));
  }
  return join_tokens(out);
}

namespace {

RecordTable parse_records(const json& records) {
  if (!records.is_array()) throw CorpusError("\"records\" must be an array");
  RecordTable table;
  for (const auto& r : records) {
    if (r.is_array() && r.size() == 2 && r[0].is_string() && r[1].is_string()) {
      table.emplace_back(r[0].get<std::string>(), r[1].get<std::string>());
    } else if (r.is_object() && r.contains("attribute") && r.contains("value") && r["attribute"].is_string() &&
               r["value"].is_string()) {
      table.emplace_back(r["attribute"].get<std::string>(), r["value"].get<std::string>());
    } else {
      throw CorpusError("record must be [attribute, value] or {\"attribute\", \"value\"}");
    }
  }
  return table;
}

}  // namespace

std::vector<TextInstance> parse_jsonl(std::string_view content) {
  enum class Kind { Unknown, Text, Records };
  Kind kind = Kind::Unknown;
  std::vector<TextInstance> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    const std::string where = "line " + std::to_string(line_no) + ": ";
    try {
      json obj = json::parse(line);
      if (!obj.is_object()) throw CorpusError("expected a JSON object");
      if (!obj.contains("target") || !obj["target"].is_string()) throw CorpusError("missing string field \"target\"");
      const bool has_source = obj.contains("source");
      const bool has_records = obj.contains("records");
      if (has_source == has_records) throw CorpusError("need exactly one of \"source\" or \"records\"");
      Kind line_kind = has_source ? Kind::Text : Kind::Records;
      if (kind != Kind::Unknown && kind != line_kind) throw CorpusError("mixed source and records shapes in one file");
      kind = line_kind;

      TextInstance inst;
      inst.id = out.size();
      if (has_source) {
        if (!obj["source"].is_string()) throw CorpusError("\"source\" must be a string");
        inst.source = tokenize(obj["source"].get<std::string>());
      } else {
        inst.source = tokenize(linearize_records(parse_records(obj["records"])));
      }
      inst.target = tokenize(obj["target"].get<std::string>());
      out.push_back(std::move(inst));
    } catch (const json::exception& e) {
      throw CorpusError(where + "malformed JSON: " + e.what());
    } catch (const CorpusError& e) {
      throw CorpusError(where + e.what());
    }
  }
  return out;
}

std::vector<TextInstance> load_jsonl(const std::filesystem::path& path) {
  try {
    return parse_jsonl(read_file(path));
  } catch (const CorpusError& e) {
    throw CorpusError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {
const std::vector<std::string> kReservedNames{"<pad>", "<unk>", "<s>", "</s>"};
}

Vocabulary::Vocabulary() : Vocabulary(kReservedNames) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kReservedTokens || !std::equal(kReservedNames.begin(), kReservedNames.end(), tokens_.begin())) {
    throw CorpusError("vocabulary must start with the reserved tokens <pad> <unk> <s> </s>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw CorpusError("duplicate vocabulary entry: " + tokens_[i]);
    }
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end() || it->second < static_cast<TokenId>(kReservedTokens)) return kUnk;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw CorpusError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(const std::vector<TextInstance>& instances, std::size_t max_size) {
  if (max_size < 5) throw CorpusError("vocabulary size must be at least 5");
  std::map<std::string, std::size_t> counts;
  for (const auto& inst : instances) {
    for (const auto& t : inst.source) ++counts[t];
    for (const auto& t : inst.target) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens = kReservedNames;
  for (const auto& [token, count] : ranked) {
    if (tokens.size() >= max_size) break;
    if (std::find(kReservedNames.begin(), kReservedNames.end(), token) != kReservedNames.end()) continue;
    tokens.push_back(token);
  }
  return Vocabulary(std::move(tokens));
}

TokenSequence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                     std::optional<std::size_t> max_tokens) {
  TokenSequence out;
  const std::size_t n = max_tokens ? std::min(*max_tokens, tokens.size()) : tokens.size();
  out.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) out.push_back(vocab.id(tokens[i]));
  out.push_back(kEos);
  return out;
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab) { return encode(tokenize(text), vocab); }

std::string decode(const TokenSequence& ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (TokenId id : ids) {
    const std::string& tok = vocab.token(id);
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    words.push_back(tok);
  }
  return join_tokens(words);
}

std::vector<Instance> encode_instances(const std::vector<TextInstance>& text, const Vocabulary& vocab,
                                       std::optional<std::size_t> max_source_tokens) {
  std::vector<Instance> out;
  out.reserve(text.size());
  for (const auto& t : text) out.push_back({t.id, encode(t.source, vocab, max_source_tokens), encode(t.target, vocab)});
  return out;
}

TokenSequence content_tokens(const TokenSequence& ids) {
  auto it = std::find(ids.begin(), ids.end(), kEos);
  return TokenSequence(ids.begin(), it);
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  write_file(path, json(vocab.tokens()).dump() + "\n");
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw CorpusError(path.string() + ": malformed vocabulary: " + e.what());
  }
  if (!j.is_array()) throw CorpusError(path.string() + ": vocabulary must be a JSON array");
  return Vocabulary(j.get<std::vector<std::string>>());
}

namespace {
constexpr std::string_view kTokensMagic = "ADTK";
constexpr std::uint32_t kTokensVersion = 1;

void put_sequence(BinaryWriter& w, const TokenSequence& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  for (TokenId id : s) w.u32(static_cast<std::uint32_t>(id));
}

TokenSequence get_sequence(BinaryReader& r) {
  TokenSequence s(r.u32());
  for (auto& id : s) id = static_cast<TokenId>(r.u32());
  return s;
}
}  // namespace

void save_tokens(const std::vector<Instance>& instances, const std::filesystem::path& path) {
  BinaryWriter w;
  w.bytes(kTokensMagic);
  w.u32(kTokensVersion);
  w.u32(static_cast<std::uint32_t>(instances.size()));
  for (const auto& inst : instances) {
    w.u32(static_cast<std::uint32_t>(inst.id));
    put_sequence(w, inst.source);
    put_sequence(w, inst.target);
  }
  write_file(path, w.buffer());
}

std::vector<Instance> load_tokens(const std::filesystem::path& path) {
  BinaryReader r(read_file(path));
  if (r.bytes(kTokensMagic.size()) != kTokensMagic) throw FormatError(path.string() + ": bad token-file magic");
  if (r.u32() != kTokensVersion) throw FormatError(path.string() + ": unsupported token-file version");
  std::vector<Instance> out(r.u32());
  for (auto& inst : out) {
    inst.id = r.u32();
    inst.source = get_sequence(r);
    inst.target = get_sequence(r);
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after token data");
  return out;
}

}  // namespace adadec
