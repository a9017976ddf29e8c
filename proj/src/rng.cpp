#include "brac/rng.hpp"

namespace brac {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Tensor Rng::normal_matrix(std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.storage()) v = normal();
  return t;
}

Tensor Rng::uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.storage()) v = uniform(lo, hi);
  return t;
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace brac
