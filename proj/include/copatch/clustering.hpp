#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <queue>
#include <utility>

#include "copatch/error.hpp"
#include "copatch/spatialmap.hpp"
#include "copatch/tensor.hpp"

namespace copatch {

enum class Connectivity { Four = 4, Eight = 8 };

/// Step by which the threshold is lowered when nothing passes it.
inline constexpr double kThresholdStep = 0.05;

/// Labeled patch grid. Labels 1..k are connected components numbered in
/// row-major seed order; 0 is background.
struct ClusterMap {
  LabelGrid labels;
  std::uint32_t k = 0;
  double delta_used = 0.0;
  std::optional<LabelGrid> interpolated;  // H x W, nearest-neighbor
};

/// Strict `m > delta`, entrywise.
inline Bitmap threshold(const MapGrid& m, double delta) {
  Bitmap b(m.shape(), std::uint8_t{0});
  for (std::size_t i = 0; i < m.size(); ++i) b[i] = m[i] > delta ? 1 : 0;
  return b;
}

/// Seeds are scanned row-major; each unlabeled foreground seed starts a
/// breadth-first flood that claims its whole component.
inline ClusterMap connected_components(const Bitmap& b, Connectivity conn = Connectivity::Four) {
  if (b.ndim() != 2) throw ValidationError("connected_components: grid must be 2-D");
  const std::size_t rows = b.dim(0);
  const std::size_t cols = b.dim(1);

  static constexpr std::array<std::pair<int, int>, 8> kOffsets{{
      {-1, 0}, {0, -1}, {0, 1}, {1, 0},      // 4-neighborhood
      {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};  // diagonals
  const std::size_t n_offsets = conn == Connectivity::Four ? 4 : 8;

  ClusterMap out;
  out.labels = LabelGrid(b.shape(), 0u);
  std::uint32_t label = 0;
  std::queue<std::pair<std::size_t, std::size_t>> queue;

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (b.at(r, c) == 0 || out.labels.at(r, c) != 0) continue;
      ++label;
      out.labels.at(r, c) = label;
      queue.emplace(r, c);
      while (!queue.empty()) {
        const auto [pr, pc] = queue.front();
        queue.pop();
        for (std::size_t o = 0; o < n_offsets; ++o) {
          const auto nr = static_cast<std::ptrdiff_t>(pr) + kOffsets[o].first;
          const auto nc = static_cast<std::ptrdiff_t>(pc) + kOffsets[o].second;
          if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(rows) ||
              nc >= static_cast<std::ptrdiff_t>(cols)) {
            continue;
          }
          const auto ur = static_cast<std::size_t>(nr);
          const auto uc = static_cast<std::size_t>(nc);
          if (b.at(ur, uc) != 0 && out.labels.at(ur, uc) == 0) {
            out.labels.at(ur, uc) = label;
            queue.emplace(ur, uc);
          }
        }
      }
    }
  }
  out.k = label;
  return out;
}

/// Nearest-neighbor resize of a label grid: src = floor(dst * in / out).
/// Labels are categorical, so no blending.
inline LabelGrid upsample_labels(const LabelGrid& labels, std::size_t height, std::size_t width) {
  if (height < 1 || width < 1) throw ValidationError("upsample_labels: target size must be >= 1");
  const std::size_t in_h = labels.dim(0);
  const std::size_t in_w = labels.dim(1);
  LabelGrid out({height, width}, 0u);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = y * in_h / height;
    for (std::size_t x = 0; x < width; ++x) out.at(y, x) = labels.at(sy, x * in_w / width);
  }
  return out;
}

/// Normalizes the raw map, thresholds it (lowering delta in fixed steps while
/// nothing passes and the threshold stays non-negative), labels the clusters
/// and upsamples the labels to height x width.
inline ClusterMap comap(const MapGrid& raw, double delta, std::size_t height, std::size_t width,
                        Connectivity conn = Connectivity::Four) {
  const MapGrid norm = normalize_map(raw);
  double used = delta;
  Bitmap b = threshold(norm, used);
  auto any = [](const Bitmap& g) {
    return std::any_of(g.values().begin(), g.values().end(), [](auto v) { return v != 0; });
  };
  for (int step = 1; !any(b); ++step) {
    const double next = delta - static_cast<double>(step) * kThresholdStep;
    if (next < 0.0) break;
    used = next;
    b = threshold(norm, used);
  }
  ClusterMap out = connected_components(b, conn);
  out.delta_used = used;
  out.interpolated = upsample_labels(out.labels, height, width);
  return out;
}

}  // namespace copatch
