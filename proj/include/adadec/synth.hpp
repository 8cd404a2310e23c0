#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adadec {

struct SynthConfig {
  std::size_t pairs = 2000;
  std::size_t templates = 8;  // 1..8
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 7;
};

/// JSONL lines ({"records", "target", "template"}) per split.
struct SynthCorpus {
  std::vector<std::string> train;
  std::vector<std::string> dev;
  std::vector<std::string> test;
};

/// Biography-style record tables. Each latent template fixes both the set of
/// attributes present in the table and the phrasing of the target sentence,
/// so a source-similar training instance usually shares the target phrasing.
SynthCorpus generate_synthetic(const SynthConfig& config);

}  // namespace adadec
