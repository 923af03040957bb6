#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "copatch/error.hpp"
#include "copatch/tensor.hpp"
#include "copatch/vecmath.hpp"

namespace copatch {

/// Post-LayerNorm affine parameters and the joint-space projection of the
/// visual encoder.
struct ProjectionParams {
  std::size_t d_star = 0;  // visual hidden width
  std::size_t d = 0;       // joint embedding width
  std::vector<float> ln_gamma;
  std::vector<float> ln_beta;
  double ln_eps = 1e-5;
  TensorF32 proj;  // [d_star, d], row-major
  int exit_layer = 0;
  std::size_t patch_grid = 0;  // p

  void validate() const {
    if (d_star == 0 || d == 0) throw ValidationError("projection params: zero width");
    if (ln_gamma.size() != d_star || ln_beta.size() != d_star) {
      throw ValidationError("projection params: LayerNorm vectors must have length d_star");
    }
    if (!(ln_eps > 0.0)) throw ValidationError("projection params: ln_eps must be > 0");
    if (proj.size() != d_star * d) {
      throw ValidationError("projection params: W must have d_star*d entries");
    }
    if (patch_grid < 1) throw ValidationError("projection params: patch grid must be >= 1");
  }
};

/// LayerNorm with biased (population) variance.
template <class T>
std::vector<double> layer_norm(std::span<const T> x, const ProjectionParams& params) {
  if (x.size() != params.d_star) {
    throw ValidationError("layer_norm: input length " + std::to_string(x.size()) +
                          " != d_star " + std::to_string(params.d_star));
  }
  if (!all_finite(x)) throw ValidationError("layer_norm: non-finite input");
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (const auto& v : x) mean += static_cast<double>(v);
  mean /= n;
  double var = 0.0;
  for (const auto& v : x) {
    const double c = static_cast<double>(v) - mean;
    var += c * c;
  }
  var /= n;
  const double inv = 1.0 / std::sqrt(var + params.ln_eps);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = static_cast<double>(params.ln_gamma[i]) * ((static_cast<double>(x[i]) - mean) * inv) +
           static_cast<double>(params.ln_beta[i]);
  }
  return y;
}

/// LN(+-e) . W. With `negate` the sign flip happens before the LayerNorm.
template <class T>
std::vector<double> project_patch(std::span<const T> e, const ProjectionParams& params, bool negate) {
  if (params.proj.size() != params.d_star * params.d) {
    throw ValidationError("project_patch: W shape does not match d_star x d");
  }
  std::vector<double> y;
  if (negate) {
    std::vector<double> neg(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) neg[i] = -static_cast<double>(e[i]);
    y = layer_norm(std::span<const double>(neg), params);
  } else {
    y = layer_norm(e, params);
  }
  std::vector<double> out(params.d, 0.0);
  const auto w = params.proj.data();
  for (std::size_t i = 0; i < params.d_star; ++i) {
    const double yi = y[i];
    const float* wrow = w.data() + i * params.d;
    for (std::size_t j = 0; j < params.d; ++j) out[j] += yi * static_cast<double>(wrow[j]);
  }
  return out;
}

struct SimilarityMap {
  MapGrid values;                     // p x p, entries in [-1, 1]
  std::size_t zero_norm_patches = 0;  // entries forced to 0
};

/// Patch-level cosine map between projected patches [p, p, d_star] and the
/// hybrid text feature.
template <class T>
SimilarityMap raw_similarity_map(const TensorF32& patches, std::span<const T> e_context,
                                 const ProjectionParams& params, bool negate = true) {
  if (patches.ndim() != 3 || patches.dim(0) != params.patch_grid ||
      patches.dim(1) != params.patch_grid || patches.dim(2) != params.d_star) {
    throw ValidationError("raw_similarity_map: patches must be [p, p, d_star]");
  }
  if (e_context.size() != params.d) throw ValidationError("raw_similarity_map: e_context length != d");
  if (l2_norm(e_context) == 0.0) throw ValidationError("raw_similarity_map: zero-norm text feature");

  const std::size_t p = params.patch_grid;
  SimilarityMap out{MapGrid({p, p}), 0};
  const auto all = patches.data();
  for (std::size_t idx = 0; idx < p * p; ++idx) {
    const auto patch = all.subspan(idx * params.d_star, params.d_star);
    const auto projected = project_patch(patch, params, negate);
    bool degenerate = false;
    out.values[idx] = cosine(std::span<const double>(projected), e_context, &degenerate);
    if (degenerate) ++out.zero_norm_patches;
  }
  return out;
}

/// Min-max rescale to [0, 1]; a constant map becomes all zeros.
inline MapGrid normalize_map(const MapGrid& m) {
  MapGrid out = m;
  if (m.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(m.values().begin(), m.values().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    std::fill(out.values().begin(), out.values().end(), 0.0);
    return out;
  }
  const double span = hi - lo;
  for (auto& v : out.values()) v = std::clamp((v - lo) / span, 0.0, 1.0);
  return out;
}

/// Bilinear upsampling with the align-corners=false convention:
/// src = (dst + 0.5) * in / out - 0.5, clamped at the borders.
inline MapGrid interpolate_map(const MapGrid& m, std::size_t height, std::size_t width) {
  if (height < 1 || width < 1) throw ValidationError("interpolate_map: target size must be >= 1");
  if (m.ndim() != 2) throw ValidationError("interpolate_map: map must be 2-D");
  const std::size_t in_h = m.dim(0);
  const std::size_t in_w = m.dim(1);

  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      if (src < 0.0) src = 0.0;
      auto i0 = static_cast<std::size_t>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(in_h, height);
  const auto tx = taps(in_w, width);

  MapGrid out({height, width});
  for (std::size_t y = 0; y < height; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < width; ++x) {
      const auto& b = tx[x];
      // a + (b - a) * t keeps constant regions exactly constant.
      const double top = m.at(a.i0, b.i0) + (m.at(a.i0, b.i1) - m.at(a.i0, b.i0)) * b.frac;
      const double bot = m.at(a.i1, b.i0) + (m.at(a.i1, b.i1) - m.at(a.i1, b.i0)) * b.frac;
      out.at(y, x) = top + (bot - top) * a.frac;
    }
  }
  return out;
}

}  // namespace copatch
