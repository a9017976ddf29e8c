#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "brac/tensor.hpp"

namespace brac {

/// Seeded random stream. Every draw goes through this type so that training
/// is reproducible bit-for-bit from a seed; the normal distribution's cached
/// second variate is part of the stream state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  /// rows x cols standard normals drawn in row-major order.
  Tensor normal_matrix(std::size_t rows, std::size_t cols);
  Tensor uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi);

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Mixes a base seed with a list of integer keys (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys);

}  // namespace brac
