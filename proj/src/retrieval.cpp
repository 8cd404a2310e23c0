#include "adadec/retrieval.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "adadec/binary_io.hpp"

namespace adadec {

BowVector bow_vector(const TokenSequence& source) {
  BowVector v;
  for (TokenId id : source) {
    if (id < static_cast<TokenId>(kReservedTokens)) continue;
    ++v[id];
  }
  return v;
}

std::int64_t dot(const BowVector& u, const BowVector& v) {
  const BowVector& small = u.size() <= v.size() ? u : v;
  const BowVector& large = u.size() <= v.size() ? v : u;
  std::int64_t s = 0;
  for (const auto& [id, count] : small) {
    auto it = large.find(id);
    if (it != large.end()) s += count * it->second;
  }
  return s;
}

std::int64_t squared_norm(const BowVector& v) {
  std::int64_t s = 0;
  for (const auto& [id, count] : v) s += count * count;
  return s;
}

double cosine_from_parts(std::int64_t dot, std::int64_t sq_norm_u, std::int64_t sq_norm_v) {
  if (sq_norm_u == 0 || sq_norm_v == 0) return 0.0;
  return static_cast<double>(dot) /
         (std::sqrt(static_cast<double>(sq_norm_u)) * std::sqrt(static_cast<double>(sq_norm_v)));
}

double cosine(const BowVector& u, const BowVector& v) {
  return cosine_from_parts(dot(u, v), squared_norm(u), squared_norm(v));
}

std::vector<ExemplarAssignment> retrieve_exemplars(const std::vector<Instance>& train,
                                                   const std::vector<Instance>& queries, bool exclude_self) {
  if (train.empty()) throw std::invalid_argument("retrieve_exemplars: training split is empty");
  if (exclude_self && train.size() < 2) {
    throw std::invalid_argument("retrieve_exemplars: need at least two training instances when excluding self");
  }

  // Postings are appended in training order, so each list is sorted by index.
  struct Posting {
    std::uint32_t doc;
    std::int64_t count;
  };
  std::map<TokenId, std::vector<Posting>> index;
  std::vector<std::int64_t> norms(train.size());
  for (std::size_t d = 0; d < train.size(); ++d) {
    BowVector v = bow_vector(train[d].source);
    norms[d] = squared_norm(v);
    for (const auto& [id, count] : v) index[id].push_back({static_cast<std::uint32_t>(d), count});
  }

  std::vector<ExemplarAssignment> out;
  out.reserve(queries.size());
  std::vector<std::int64_t> acc(train.size(), 0);
  std::vector<std::uint32_t> touched;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    BowVector v = bow_vector(queries[q].source);
    const std::int64_t qnorm = squared_norm(v);
    touched.clear();
    for (const auto& [id, count] : v) {
      auto it = index.find(id);
      if (it == index.end()) continue;
      for (const Posting& p : it->second) {
        if (acc[p.doc] == 0) touched.push_back(p.doc);
        acc[p.doc] += count * p.count;
      }
    }

    // Fallback when nothing overlaps: similarity 0 at the smallest allowed id.
    const std::size_t self = queries[q].id;
    std::size_t best = (exclude_self && self == 0) ? 1 : 0;
    double best_sim = 0.0;
    for (std::uint32_t d : touched) {
      if (exclude_self && d == self) continue;
      const double sim = cosine_from_parts(acc[d], qnorm, norms[d]);
      if (sim > best_sim || (sim == best_sim && d < best)) {
        best_sim = sim;
        best = d;
      }
    }
    for (std::uint32_t d : touched) acc[d] = 0;
    out.push_back({queries[q].id, train[best].id, best_sim});
  }
  return out;
}

void save_exemplars(const std::vector<ExemplarAssignment>& assignments, const std::filesystem::path& path) {
  std::ostringstream os;
  for (const auto& a : assignments) {
    nlohmann::ordered_json j;
    j["id"] = a.id;
    j["exemplar_id"] = a.exemplar_id;
    j["similarity"] = a.similarity;
    os << j.dump() << '\n';
  }
  write_file(path, os.str());
}

std::vector<ExemplarAssignment> load_exemplars(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<ExemplarAssignment> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::size_t>(), j.at("exemplar_id").get<std::size_t>(),
                     j.at("similarity").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace adadec
