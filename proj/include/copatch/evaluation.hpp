#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "copatch/error.hpp"
#include "copatch/tensor.hpp"
#include "copatch/vecmath.hpp"

namespace copatch {

/// Exact pixel counts of one prediction against ground truth.
struct PixelCounts {
  std::uint64_t intersection = 0;
  std::uint64_t uni = 0;

  /// Both empty counts as perfect agreement.
  double iou() const {
    return uni == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(uni);
  }
};

inline PixelCounts pixel_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw ValidationError("iou: shape mismatch (" + std::to_string(pred.size()) + " vs " +
                          std::to_string(gt.size()) + " pixels)");
  }
  PixelCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0;
    const bool b = gt[i] != 0;
    c.intersection += (a && b) ? 1 : 0;
    c.uni += (a || b) ? 1 : 0;
  }
  return c;
}

inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  return pixel_counts(pred, gt).iou();
}

inline double iou(const Bitmap& pred, const Bitmap& gt) {
  if (pred.shape() != gt.shape()) throw ValidationError("iou: shape mismatch");
  return iou(pred.data(), gt.data());
}

struct Aggregate {
  double miou = 0.0;
  double oiou = 0.0;
  std::uint64_t total_intersection = 0;
  std::uint64_t total_union = 0;
};

/// mIoU is the mean of per-sample IoUs; oIoU is summed intersection over
/// summed union, both accumulated as integers.
inline Aggregate aggregate(std::span<const PixelCounts> samples) {
  if (samples.empty()) throw ValidationError("aggregate: no samples");
  Aggregate a;
  double sum = 0.0;
  for (const auto& s : samples) {
    sum += s.iou();
    a.total_intersection += s.intersection;
    a.total_union += s.uni;
  }
  a.miou = sum / static_cast<double>(samples.size());
  a.oiou = a.total_union == 0 ? 1.0
                              : static_cast<double>(a.total_intersection) /
                                    static_cast<double>(a.total_union);
  return a;
}

/// Best IoU among the selected candidates of `masks` [M, H, W].
inline double topk_oracle(std::span<const std::size_t> topk_ids, const Bitmap& masks,
                          std::span<const std::uint8_t> gt) {
  if (topk_ids.empty()) throw ValidationError("topk_oracle: empty top-k");
  double best = 0.0;
  for (std::size_t id : topk_ids) best = std::max(best, iou(masks.row(id), gt));
  return best;
}

/// Best IoU over every candidate mask.
inline double upper_bound(const Bitmap& masks, std::span<const std::uint8_t> gt) {
  if (masks.ndim() != 3) throw ValidationError("upper_bound: masks must be [M, H, W]");
  double best = 0.0;
  for (std::size_t m = 0; m < masks.dim(0); ++m) best = std::max(best, iou(masks.row(m), gt));
  return best;
}

struct LayerProfile {
  std::vector<double> cosines;
  std::size_t zero_norm_layers = 0;
};

/// Per-layer cosine between two [L, d] embedding sequences.
inline LayerProfile layer_profile(const TensorF32& a, const TensorF32& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw ValidationError("layer_profile: inputs must be [L, d]");
  if (a.dim(0) != b.dim(0)) throw ValidationError("layer_profile: layer counts differ");
  if (a.dim(1) != b.dim(1)) throw ValidationError("layer_profile: widths differ");
  LayerProfile out;
  out.cosines.resize(a.dim(0));
  for (std::size_t l = 0; l < a.dim(0); ++l) {
    bool degenerate = false;
    out.cosines[l] = cosine(a.row(l), b.row(l), &degenerate);
    if (degenerate) ++out.zero_norm_layers;
  }
  return out;
}

}  // namespace copatch
