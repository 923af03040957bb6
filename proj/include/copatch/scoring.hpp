#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "copatch/clustering.hpp"
#include "copatch/error.hpp"
#include "copatch/tensor.hpp"
#include "copatch/vecmath.hpp"

namespace copatch {

enum class OverlapMetric { UnionIoU, PerClusterMax };

struct MaskScore {
  std::size_t mask_id = 0;
  double s_pos = 0.0;                // cos(e_img, e_context)
  std::optional<double> s_neg;       // cos(e_img, e_neg)
  double overlap = 0.0;              // agreement with the cluster map
  double final_score = 0.0;
};

struct SelectionResult {
  std::vector<std::size_t> sorted_ids;     // by s_pos
  std::vector<std::size_t> clustered_ids;  // by overlap
  std::vector<std::size_t> topk_ids;
  std::size_t final_id = 0;
  std::size_t k_used = 0;
  std::vector<MaskScore> scores;  // indexed by mask id
  bool spatial_guidance = false;  // s_pos - alpha * s_neg was used
  bool sc_fallback = false;       // spatial cue present but no negative embedding
  std::size_t zero_norm_masks = 0;
};

struct InitialScores {
  std::vector<double> scores;
  std::size_t zero_norm_rows = 0;
};

/// Cosine of each row of `embeddings` [M, d] with `text`.
template <class T>
InitialScores initial_scores(const TensorF32& embeddings, std::span<const T> text) {
  if (embeddings.ndim() != 2 || embeddings.dim(1) != text.size()) {
    throw ValidationError("initial_scores: embeddings must be [M, d] with d matching the text feature");
  }
  InitialScores out;
  out.scores.resize(embeddings.dim(0));
  for (std::size_t m = 0; m < embeddings.dim(0); ++m) {
    bool degenerate = false;
    out.scores[m] = cosine(embeddings.row(m), text, &degenerate);
    if (degenerate) ++out.zero_norm_rows;
  }
  return out;
}

/// Descending by score, ties by ascending id.
inline std::vector<std::size_t> sort_masks(std::span<const double> scores) {
  std::vector<std::size_t> ids(scores.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return ids;
}

/// Overlap of one H x W mask with the interpolated cluster labels.
/// UnionIoU: IoU against the union of all clustered pixels.
/// PerClusterMax: best IoU against any single cluster.
/// Both are 0 when there are no clusters.
inline double cluster_overlap(std::span<const std::uint8_t> mask, const LabelGrid& labels,
                              std::uint32_t k, OverlapMetric metric = OverlapMetric::UnionIoU) {
  if (mask.size() != labels.size()) throw ValidationError("cluster_overlap: mask and cluster map differ in size");
  if (k == 0) return 0.0;
  if (metric == OverlapMetric::UnionIoU) {
    std::uint64_t inter = 0;
    std::uint64_t uni = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const bool a = mask[i] != 0;
      const bool b = labels[i] != 0;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  std::vector<std::uint64_t> inter(k + 1, 0);
  std::vector<std::uint64_t> size(k + 1, 0);
  std::uint64_t mask_size = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const auto l = labels[i];
    if (l > k) throw ValidationError("cluster_overlap: label exceeds cluster count");
    const bool a = mask[i] != 0;
    mask_size += a ? 1 : 0;
    ++size[l];
    if (a) ++inter[l];
  }
  double best = 0.0;
  for (std::uint32_t c = 1; c <= k; ++c) {
    const std::uint64_t uni = mask_size + size[c] - inter[c];
    if (uni > 0) best = std::max(best, static_cast<double>(inter[c]) / static_cast<double>(uni));
  }
  return best;
}

inline double cluster_overlap(std::span<const std::uint8_t> mask, const ClusterMap& cm,
                              OverlapMetric metric = OverlapMetric::UnionIoU) {
  if (!cm.interpolated) throw ValidationError("cluster_overlap: cluster map has no interpolated labels");
  return cluster_overlap(mask, *cm.interpolated, cm.k, metric);
}

namespace detail {

// Descending overlap, then descending s_pos, then ascending id.
inline bool overlap_before(std::size_t a, std::size_t b, std::span<const double> overlaps,
                           std::span<const double> s_pos) {
  if (overlaps[a] != overlaps[b]) return overlaps[a] > overlaps[b];
  if (s_pos[a] != s_pos[b]) return s_pos[a] > s_pos[b];
  return a < b;
}

}  // namespace detail

/// All candidates ordered by cluster overlap.
inline std::vector<std::size_t> order_by_overlap(std::span<const double> overlaps,
                                                 std::span<const double> s_pos) {
  std::vector<std::size_t> ids(overlaps.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    return detail::overlap_before(a, b, overlaps, s_pos);
  });
  return ids;
}

/// Number of candidates kept: the requested k if given, else the cluster
/// count (at least 1), capped by the number of masks.
inline std::size_t resolve_k(std::optional<std::size_t> requested_k, std::uint32_t cluster_count,
                             std::size_t n_masks) {
  const std::size_t want = requested_k ? *requested_k : std::max<std::size_t>(1, cluster_count);
  return std::min(std::max<std::size_t>(want, 1), n_masks);
}

/// Keeps the best image-text candidate in slot 0 and fills the remaining
/// k-1 slots from every other candidate by cluster overlap.
inline std::vector<std::size_t> rerank_top_candidates(std::span<const std::size_t> sorted_ids,
                                                      std::span<const double> overlaps,
                                                      std::span<const double> s_pos,
                                                      std::size_t k_used) {
  if (sorted_ids.empty()) throw ValidationError("rerank_top_candidates: no candidates");
  if (overlaps.size() != sorted_ids.size() || s_pos.size() != sorted_ids.size()) {
    throw ValidationError("rerank_top_candidates: score tables differ in length");
  }
  k_used = std::clamp<std::size_t>(k_used, 1, sorted_ids.size());
  std::vector<std::size_t> pool(sorted_ids.begin() + 1, sorted_ids.end());
  std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
    return detail::overlap_before(a, b, overlaps, s_pos);
  });
  std::vector<std::size_t> topk;
  topk.reserve(k_used);
  topk.push_back(sorted_ids.front());
  for (std::size_t i = 0; topk.size() < k_used; ++i) topk.push_back(pool[i]);
  return topk;
}

/// Overload taking the cluster map and the [M, H, W] candidate masks.
inline std::vector<std::size_t> rerank_top_candidates(std::span<const std::size_t> sorted_ids,
                                                      const ClusterMap& cm, const Bitmap& masks,
                                                      std::span<const double> s_pos,
                                                      std::optional<std::size_t> requested_k,
                                                      OverlapMetric metric = OverlapMetric::UnionIoU) {
  std::vector<double> overlaps(masks.dim(0));
  for (std::size_t m = 0; m < overlaps.size(); ++m) overlaps[m] = cluster_overlap(masks.row(m), cm, metric);
  return rerank_top_candidates(sorted_ids, overlaps, s_pos,
                               resolve_k(requested_k, cm.k, masks.dim(0)));
}

struct FinalChoice {
  std::size_t final_id = 0;
  std::vector<double> final_scores;  // aligned with topk_ids
  bool spatial_guidance = false;
  bool fallback = false;
};

/// Spatial-coherence guided choice among the top-k: s_pos - alpha * s_neg
/// when a spatial cue and a negative embedding are both present, plain
/// s_pos otherwise. Ties go to the smaller id.
inline FinalChoice select_final(std::span<const std::size_t> topk_ids, std::span<const double> s_pos,
                                std::span<const double> s_neg, double alpha, bool spatial_cue_present) {
  if (topk_ids.empty()) throw ValidationError("select_final: empty top-k");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("select_final: alpha must lie in [0, 1]");
  FinalChoice out;
  out.spatial_guidance = spatial_cue_present && !s_neg.empty();
  out.fallback = spatial_cue_present && s_neg.empty();
  out.final_scores.reserve(topk_ids.size());
  bool have = false;
  double best = 0.0;
  for (std::size_t id : topk_ids) {
    const double f = out.spatial_guidance ? s_pos[id] - alpha * s_neg[id] : s_pos[id];
    out.final_scores.push_back(f);
    if (!have || f > best || (f == best && id < out.final_id)) {
      best = f;
      out.final_id = id;
      have = true;
    }
  }
  return out;
}

struct SelectionOptions {
  std::optional<std::size_t> requested_k;
  double alpha = 0.5;
  OverlapMetric metric = OverlapMetric::UnionIoU;
};

/// Full candidate scoring and selection for one sample.
/// `e_img` is [M, d], `masks` is [M, H, W].
template <class T>
SelectionResult select_mask(const TensorF32& e_img, const Bitmap& masks, std::span<const T> e_context,
                            std::optional<std::span<const float>> e_neg, bool spatial_cue_present,
                            const ClusterMap& cm, const SelectionOptions& opts) {
  if (masks.ndim() != 3 || masks.dim(0) != e_img.dim(0)) {
    throw ValidationError("select_mask: masks must be [M, H, W] with M matching e_img");
  }
  const std::size_t n = masks.dim(0);
  SelectionResult r;
  const auto pos = initial_scores(e_img, e_context);
  r.zero_norm_masks = pos.zero_norm_rows;

  std::vector<double> neg;
  if (e_neg) {
    const auto ns = initial_scores(e_img, *e_neg);
    neg = ns.scores;
    r.zero_norm_masks += ns.zero_norm_rows;
  }

  std::vector<double> overlaps(n);
  for (std::size_t m = 0; m < n; ++m) overlaps[m] = cluster_overlap(masks.row(m), cm, opts.metric);

  r.sorted_ids = sort_masks(pos.scores);
  r.clustered_ids = order_by_overlap(overlaps, pos.scores);
  r.k_used = resolve_k(opts.requested_k, cm.k, n);
  r.topk_ids = rerank_top_candidates(r.sorted_ids, overlaps, pos.scores, r.k_used);

  const auto choice = select_final(r.topk_ids, pos.scores, neg, opts.alpha, spatial_cue_present);
  r.final_id = choice.final_id;
  r.spatial_guidance = choice.spatial_guidance;
  r.sc_fallback = choice.fallback;

  r.scores.resize(n);
  for (std::size_t m = 0; m < n; ++m) {
    auto& s = r.scores[m];
    s.mask_id = m;
    s.s_pos = pos.scores[m];
    if (e_neg) s.s_neg = neg[m];
    s.overlap = overlaps[m];
    s.final_score = r.spatial_guidance ? s.s_pos - opts.alpha * *s.s_neg : s.s_pos;
  }
  return r;
}

}  // namespace copatch
