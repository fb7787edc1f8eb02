#include "lirank/similarity.hpp"

#include <cmath>

#include "lirank/errors.hpp"

namespace lirank {

double dot(std::span<const float> u, std::span<const float> v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    acc += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  }
  return acc;
}

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

double similarity(std::span<const float> u, std::span<const float> v, SimilarityKind kind) {
  if (u.size() != v.size()) throw DimensionMismatch(u.size(), v.size());
  const double uv = dot(u, v);
  if (kind == SimilarityKind::Dot) return uv;
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) {
    throw InvalidArgument("cosine similarity of a zero-norm vector");
  }
  return cosine_with_norms(uv, nu, nv);
}

double similarity(const DenseVector& u, const DenseVector& v, SimilarityKind kind) {
  return similarity(u.values(), v.values(), kind);
}

}  // namespace lirank
