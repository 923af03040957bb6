#pragma once

#include <span>
#include <vector>

#include "copatch/error.hpp"
#include "copatch/vecmath.hpp"

namespace copatch {

inline constexpr double kDefaultGamma = 0.5;

/// Weighted sum of the sentence embedding and the noun+context embedding.
struct HybridTextFeature {
  std::vector<double> e_context;
  double gamma = kDefaultGamma;
};

/// e_context[i] = gamma * e_sen[i] + (1 - gamma) * e_noun[i]. Not normalized:
/// every consumer is a cosine, which absorbs a global scale.
template <class T>
HybridTextFeature fuse(std::span<const T> e_sen, std::span<const T> e_noun, double gamma) {
  if (e_sen.size() != e_noun.size()) throw ValidationError("fuse: e_sen and e_noun differ in length");
  if (e_sen.empty()) throw ValidationError("fuse: empty embeddings");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("fuse: gamma must lie in [0, 1]");
  if (!all_finite(e_sen) || !all_finite(e_noun)) throw ValidationError("fuse: non-finite input");

  HybridTextFeature out;
  out.gamma = gamma;
  out.e_context.resize(e_sen.size());
  const double rest = 1.0 - gamma;
  for (std::size_t i = 0; i < e_sen.size(); ++i) {
    // Written so that gamma in {0, 1} reproduces the input exactly.
    const double a = static_cast<double>(e_sen[i]);
    const double b = static_cast<double>(e_noun[i]);
    out.e_context[i] = (gamma == 1.0) ? a : (gamma == 0.0) ? b : gamma * a + rest * b;
  }
  return out;
}

template <class T>
HybridTextFeature fuse(const std::vector<T>& e_sen, const std::vector<T>& e_noun, double gamma) {
  return fuse(std::span<const T>(e_sen), std::span<const T>(e_noun), gamma);
}

}  // namespace copatch
