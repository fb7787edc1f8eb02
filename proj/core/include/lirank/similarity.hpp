#pragma once

#include <span>

#include "lirank/types.hpp"

namespace lirank {

double dot(std::span<const float> u, std::span<const float> v);
double l2_norm(std::span<const float> v);

/// Dot: sum of u_i * v_i. Cosine: dot / (|u| |v|).
/// Throws DimensionMismatch, or InvalidArgument for a zero-norm operand under Cosine.
double similarity(std::span<const float> u, std::span<const float> v, SimilarityKind kind);
double similarity(const DenseVector& u, const DenseVector& v, SimilarityKind kind);

/// Cosine with caller-supplied norms (hot loops with cached norms). No checks.
inline double cosine_with_norms(double dot_uv, double norm_u, double norm_v) {
  return dot_uv / (norm_u * norm_v);
}

}  // namespace lirank
