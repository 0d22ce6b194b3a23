#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sentdecomp {

// Seeded generator whose derived draws are identical on every standard
// library: only the raw mt19937_64 stream is used, never std:: distributions
// (their algorithms are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal();

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent child seed from a root seed and a stream label.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace sentdecomp
