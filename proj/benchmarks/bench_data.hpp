#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lirank/dense_index.hpp"
#include "lirank/types.hpp"

namespace bench {

inline std::vector<float> gaussian(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline lirank::DenseRecords records(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  lirank::DenseRecords out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.emplace_back("p" + std::to_string(i), lirank::DenseVector(gaussian(rng, dim)));
  return out;
}

inline lirank::TokenMatrix tokens(std::mt19937_64& rng, std::size_t count, std::size_t dim) {
  return lirank::TokenMatrix(count, dim, gaussian(rng, count * dim));
}

}  // namespace bench
