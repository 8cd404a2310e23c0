#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "adadec/corpus.hpp"

namespace adadec {

/// Sparse term-frequency vector; ordered so iteration is deterministic.
using BowVector = std::map<TokenId, std::int64_t>;

struct ExemplarAssignment {
  std::size_t id = 0;           // query instance id
  std::size_t exemplar_id = 0;  // training instance id
  double similarity = 0.0;

  friend bool operator==(const ExemplarAssignment&, const ExemplarAssignment&) = default;
};

/// Counts every non-reserved token of `source`.
BowVector bow_vector(const TokenSequence& source);

std::int64_t dot(const BowVector& u, const BowVector& v);
std::int64_t squared_norm(const BowVector& v);

/// u.v / (|u||v|), and 0 when either vector is empty.
double cosine(const BowVector& u, const BowVector& v);
/// The same quantity from integer parts; shared by every retrieval path so
/// their similarities agree bit for bit.
double cosine_from_parts(std::int64_t dot, std::int64_t sq_norm_u, std::int64_t sq_norm_v);

/// Top-1 training exemplar per query by source cosine, ties to the smallest
/// training id. With `exclude_self`, query i never selects training id i.
/// Uses an inverted index so only training sources sharing a token with the
/// query are scored.
std::vector<ExemplarAssignment> retrieve_exemplars(const std::vector<Instance>& train,
                                                   const std::vector<Instance>& queries, bool exclude_self);

void save_exemplars(const std::vector<ExemplarAssignment>& assignments, const std::filesystem::path& path);
std::vector<ExemplarAssignment> load_exemplars(const std::filesystem::path& path);

}  // namespace adadec
