#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "copatch/error.hpp"

namespace copatch {

// All reductions accumulate in double, left to right, so results are
// independent of how callers split work across threads.

template <class A, class B>
double dot(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) {
    throw ValidationError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <class A>
double l2_norm(std::span<const A> a) {
  return std::sqrt(dot(a, a));
}

/// Cosine similarity; returns 0 when either side has zero norm and sets
/// `degenerate` if a pointer is supplied. Clamped to [-1, 1].
template <class A, class B>
double cosine(std::span<const A> a, std::span<const B> b, bool* degenerate = nullptr) {
  const double num = dot(a, b);
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (degenerate) *degenerate = false;
  if (na == 0.0 || nb == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  double c = num / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

template <class A>
bool all_finite(std::span<const A> a) {
  for (const auto& v : a) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

}  // namespace copatch
