#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace adadec {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr std::size_t kReservedTokens = 4;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered (attribute, value) pairs of a structured record.
using RecordTable = std::vector<std::pair<std::string, std::string>>;

/// Whitespace-tokenised source/target pair, before id conversion.
struct TextInstance {
  std::size_t id = 0;
  std::vector<std::string> source;
  std::vector<std::string> target;
};

/// Id-converted pair. Both sequences end with EOS.
struct Instance {
  std::size_t id = 0;
  TokenSequence source;
  TokenSequence target;
};

std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);

/// "attr : value tokens | attr : value tokens ...".
std::string linearize_records(const RecordTable& table);

/// One JSON object per line: {"source","target"} or {"records","target"}.
/// Records are [[attribute, value], ...] or [{"attribute":..,"value":..}, ...].
std::vector<TextInstance> load_jsonl(const std::filesystem::path& path);
std::vector<TextInstance> parse_jsonl(std::string_view content);

class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens_in_id_order);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Top (max_size - 4) tokens by frequency over sources and targets, ties
/// broken by ascending byte order.
Vocabulary build_vocab(const std::vector<TextInstance>& instances, std::size_t max_size);

/// Appends EOS; `max_tokens` truncates before EOS is appended.
TokenSequence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                     std::optional<std::size_t> max_tokens = std::nullopt);
TokenSequence encode(std::string_view text, const Vocabulary& vocab);
/// Stops at the first EOS; PAD and BOS are skipped.
std::string decode(const TokenSequence& ids, const Vocabulary& vocab);

std::vector<Instance> encode_instances(const std::vector<TextInstance>& text, const Vocabulary& vocab,
                                       std::optional<std::size_t> max_source_tokens = std::nullopt);

/// Strip the trailing EOS (and anything after it).
TokenSequence content_tokens(const TokenSequence& ids);

// vocab.json: JSON array of tokens in id order.
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

// Binary token file, little-endian:
//   "ADTK" | u32 version (1) | u32 instance count |
//   per instance: u32 id | u32 source length | u32 ids... | u32 target length | u32 ids...
void save_tokens(const std::vector<Instance>& instances, const std::filesystem::path& path);
std::vector<Instance> load_tokens(const std::filesystem::path& path);

}  // namespace adadec
