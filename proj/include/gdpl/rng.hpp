#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gdpl {

/// Seeded random stream. Each experiment keeps separate streams for data,
/// initialization and training noise so ablations can share data.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  std::vector<double> normal_vector(std::size_t n, double stddev) {
    std::vector<double> v(n);
    for (double& x : v) x = normal(0.0, stddev);
    return v;
  }
  std::vector<double> uniform_vector(std::size_t n, double bound) {
    std::vector<double> v(n);
    for (double& x : v) x = uniform(-bound, bound);
    return v;
  }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace gdpl
