#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace adadec {

/// Seeded random stream built on std::mt19937_64, whose output sequence is
/// fixed by the C++ standard. The standard distributions are not portable, so
/// every conversion to a real or bounded integer is done here.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Fisher-Yates shuffle of `items`.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Derive an independent child stream.
  RandomStream fork() { return RandomStream(next_u64() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

}  // namespace adadec
