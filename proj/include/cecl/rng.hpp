#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace cecl {

// Splitmix64-based generator. Every random draw in the library goes through
// this class so results are bit-identical across compilers and standard
// libraries (std::normal_distribution and friends are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  // Random permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed with a sequence of tags (epoch, batch, stream id, ...)
// into an independent stream seed. Used instead of carrying generator state
// across epochs so that a resumed run draws the same numbers.
std::uint64_t derive_seed(std::uint64_t seed,
                          std::initializer_list<std::uint64_t> tags);

}  // namespace cecl
