#pragma once

// End-to-end pipeline over a fixture: fuse -> similarity map -> cluster map
// -> candidate scoring/selection -> IoU, plus report writers and sweeps.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "copatch/clustering.hpp"
#include "copatch/error.hpp"
#include "copatch/evaluation.hpp"
#include "copatch/fixture.hpp"
#include "copatch/render.hpp"
#include "copatch/scoring.hpp"
#include "copatch/spatialmap.hpp"
#include "copatch/textfusion.hpp"

namespace copatch {

struct Hyperparams {
  int layer = 0;
  double delta = 0.5;
  double alpha = 0.5;
  double gamma = kDefaultGamma;
};

/// Per-backbone settings: CLIP ViT-B/32, CLIP ViT-B/16, DFN ViT-H/14.
inline std::optional<Hyperparams> model_defaults(const std::string& model) {
  static const std::map<std::string, Hyperparams> table{
      {"clip-vit-b-32", {10, 0.5, 0.5, kDefaultGamma}},
      {"clip-vit-b-16", {8, 0.3, 0.7, kDefaultGamma}},
      {"dfn-vit-h-14", {22, 0.5, 0.5, kDefaultGamma}},
  };
  const auto it = table.find(model);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

struct RunConfig {
  std::optional<int> layer;
  std::optional<double> delta;
  std::optional<double> alpha;
  std::optional<double> gamma;
  std::optional<std::size_t> topk;  // unset: use the cluster count
  Connectivity connectivity = Connectivity::Four;
  OverlapMetric overlap = OverlapMetric::UnionIoU;
  std::size_t jobs = 1;
  bool permissive = false;
};

/// Flag > manifest default > model-tag table.
inline Hyperparams resolve_hyperparams(const RunConfig& cfg, const FixtureManifest& m) {
  const auto table = model_defaults(m.model);
  auto pick = [&](auto flag, auto manifest, auto Hyperparams::*field, const char* name) {
    if (flag) return *flag;
    if (manifest) return *manifest;
    if (table) return (*table).*field;
    throw FixtureError("", std::string("no value for ") + name + ": model '" + m.model +
                               "' has no built-in defaults and the manifest sets none");
  };
  Hyperparams h;
  h.layer = pick(cfg.layer, m.defaults.layer, &Hyperparams::layer, "layer");
  h.delta = pick(cfg.delta, m.defaults.delta, &Hyperparams::delta, "delta");
  h.alpha = pick(cfg.alpha, m.defaults.alpha, &Hyperparams::alpha, "alpha");
  h.gamma = cfg.gamma ? *cfg.gamma : m.defaults.gamma ? *m.defaults.gamma : kDefaultGamma;
  if (!(h.delta >= 0.0 && h.delta <= 1.0)) throw ValidationError("delta must lie in [0, 1]");
  if (!(h.alpha >= 0.0 && h.alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  if (!(h.gamma >= 0.0 && h.gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
  if (cfg.topk && *cfg.topk < 1) throw ValidationError("topk must be >= 1");
  if (cfg.jobs < 1) throw ValidationError("jobs must be >= 1");
  return h;
}

/// Everything computed for one sample.
struct SampleAnalysis {
  std::string sample_id;
  bool spatial_cue = false;
  HybridTextFeature text;
  SimilarityMap raw_map;
  ClusterMap clusters;
  SelectionResult selection;
  PixelCounts counts;
  double iou = 0.0;
  double topk_oracle_iou = 0.0;
  double upper_bound_iou = 0.0;
};

inline SampleAnalysis analyze_sample(const SampleRecord& s, const ProjectionParams& params,
                                     const Hyperparams& h, const RunConfig& cfg) {
  SampleAnalysis a;
  a.sample_id = s.sample_id;
  a.spatial_cue = s.has_spatial_cue();
  a.text = fuse(s.e_sen, s.e_noun, h.gamma);
  const std::span<const double> text(a.text.e_context);
  a.raw_map = raw_similarity_map(s.patch_embeddings, text, params, true);
  a.clusters = comap(a.raw_map.values, h.delta, s.gt_mask.dim(0), s.gt_mask.dim(1), cfg.connectivity);

  SelectionOptions opts;
  opts.requested_k = cfg.topk;
  opts.alpha = h.alpha;
  opts.metric = cfg.overlap;
  std::optional<std::span<const float>> neg;
  if (s.e_neg) neg = std::span<const float>(*s.e_neg);
  a.selection = select_mask(s.e_img, s.candidate_masks, text, neg, a.spatial_cue, a.clusters, opts);

  const auto gt = s.gt_mask.data();
  a.counts = pixel_counts(s.candidate_masks.row(a.selection.final_id), gt);
  a.iou = a.counts.iou();
  a.topk_oracle_iou = topk_oracle(a.selection.topk_ids, s.candidate_masks, gt);
  a.upper_bound_iou = upper_bound(s.candidate_masks, gt);
  return a;
}

struct SkippedSample {
  std::string sample_id;
  std::string error;
};

struct GroupStats {
  std::size_t samples = 0;
  double miou = 0.0;
};

struct RunReport {
  std::string model;
  Hyperparams params;
  RunConfig config;
  std::vector<SampleAnalysis> samples;  // ascending sample_id
  std::vector<SkippedSample> skipped;
  Aggregate aggregate;
  double topk_oracle_miou = 0.0;
  double upper_bound_miou = 0.0;
  double mean_clusters = 0.0;
  std::size_t empty_empty = 0;  // samples where prediction and gt are both empty
  GroupStats spatial;
  GroupStats non_spatial;
};

/// Runs `fn(i)` for i in [0, n) on `jobs` threads. Each index is handled
/// exactly once; results must be written to per-index slots.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

/// Samples of a fixture loaded for one exit layer; failures kept per id.
struct LoadedSamples {
  std::vector<std::string> ids;  // ascending
  std::vector<std::optional<SampleRecord>> records;
  std::vector<std::string> errors;
};

inline LoadedSamples load_samples(const Fixture& fx, int layer, std::size_t jobs) {
  LoadedSamples out;
  out.ids = fx.sample_ids();
  std::sort(out.ids.begin(), out.ids.end());
  out.records.resize(out.ids.size());
  out.errors.resize(out.ids.size());
  parallel_for(out.ids.size(), jobs, [&](std::size_t i) {
    try {
      out.records[i] = fx.sample(out.ids[i], layer);
    } catch (const Error& e) {
      out.errors[i] = e.what();
    }
  });
  return out;
}

inline RunReport run_loaded(const LoadedSamples& loaded, const ProjectionParams& params,
                            const std::string& model, const Hyperparams& h, const RunConfig& cfg) {
  const std::size_t n = loaded.ids.size();
  std::vector<std::optional<SampleAnalysis>> results(n);
  std::vector<std::string> errors = loaded.errors;
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    if (!loaded.records[i]) return;
    try {
      results[i] = analyze_sample(*loaded.records[i], params, h, cfg);
    } catch (const Error& e) {
      errors[i] = std::string("sample '") + loaded.ids[i] + "': " + e.what();
    }
  });

  RunReport r;
  r.model = model;
  r.params = h;
  r.config = cfg;
  for (std::size_t i = 0; i < n; ++i) {
    if (results[i]) {
      r.samples.push_back(std::move(*results[i]));
      continue;
    }
    if (!cfg.permissive) throw FixtureError(loaded.ids[i], errors[i]);
    r.skipped.push_back({loaded.ids[i], errors[i]});
  }
  if (r.samples.empty()) throw FixtureError("", "no valid samples to evaluate");

  std::vector<PixelCounts> counts;
  double topk_sum = 0.0;
  double ub_sum = 0.0;
  double cluster_sum = 0.0;
  double spatial_sum = 0.0;
  double plain_sum = 0.0;
  for (const auto& s : r.samples) {
    counts.push_back(s.counts);
    topk_sum += s.topk_oracle_iou;
    ub_sum += s.upper_bound_iou;
    cluster_sum += s.clusters.k;
    if (s.counts.uni == 0) ++r.empty_empty;
    if (s.spatial_cue) {
      ++r.spatial.samples;
      spatial_sum += s.iou;
    } else {
      ++r.non_spatial.samples;
      plain_sum += s.iou;
    }
  }
  const auto m = static_cast<double>(r.samples.size());
  r.aggregate = aggregate(counts);
  r.topk_oracle_miou = topk_sum / m;
  r.upper_bound_miou = ub_sum / m;
  r.mean_clusters = cluster_sum / m;
  if (r.spatial.samples) r.spatial.miou = spatial_sum / static_cast<double>(r.spatial.samples);
  if (r.non_spatial.samples) r.non_spatial.miou = plain_sum / static_cast<double>(r.non_spatial.samples);
  return r;
}

inline RunReport run(const Fixture& fx, const RunConfig& cfg) {
  const Hyperparams h = resolve_hyperparams(cfg, fx.manifest());
  const auto params = fx.params(h.layer);
  const auto loaded = load_samples(fx, h.layer, cfg.jobs);
  return run_loaded(loaded, params, fx.manifest().model, h, cfg);
}

// ---- report serialization -------------------------------------------------

/// Fixed six-decimal formatting; negative zero prints as zero.
inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

inline std::string json_string(const std::string& s) {
  return nlohmann::json(s).dump();
}

inline const char* overlap_metric_name(OverlapMetric m) {
  return m == OverlapMetric::UnionIoU ? "union-iou" : "per-cluster-max";
}

namespace detail {

inline std::string id_list(const std::vector<std::size_t>& ids) {
  std::string out = "[";
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? ", " : "") + std::to_string(ids[i]);
  return out + "]";
}

}  // namespace detail

/// Run report as JSON with a fixed field order. Contains nothing that
/// depends on the thread count, so identical inputs give identical bytes.
inline std::string report_json(const RunReport& r) {
  std::ostringstream o;
  const auto& c = r.config;
  o << "{\n";
  o << "  \"report_version\": 1,\n";
  o << "  \"model\": " << json_string(r.model) << ",\n";
  o << "  \"params\": {\n";
  o << "    \"layer\": " << r.params.layer << ",\n";
  o << "    \"delta\": " << fmt6(r.params.delta) << ",\n";
  o << "    \"alpha\": " << fmt6(r.params.alpha) << ",\n";
  o << "    \"gamma\": " << fmt6(r.params.gamma) << ",\n";
  o << "    \"topk\": " << (c.topk ? std::to_string(*c.topk) : std::string("\"clusters\"")) << ",\n";
  o << "    \"connectivity\": " << static_cast<int>(c.connectivity) << ",\n";
  o << "    \"overlap_metric\": \"" << overlap_metric_name(c.overlap) << "\"\n";
  o << "  },\n";
  o << "  \"summary\": {\n";
  o << "    \"samples\": " << r.samples.size() << ",\n";
  o << "    \"skipped\": " << r.skipped.size() << ",\n";
  o << "    \"miou\": " << fmt6(r.aggregate.miou) << ",\n";
  o << "    \"oiou\": " << fmt6(r.aggregate.oiou) << ",\n";
  o << "    \"topk_oracle_miou\": " << fmt6(r.topk_oracle_miou) << ",\n";
  o << "    \"upper_bound_miou\": " << fmt6(r.upper_bound_miou) << ",\n";
  o << "    \"mean_clusters\": " << fmt6(r.mean_clusters) << ",\n";
  o << "    \"total_intersection\": " << r.aggregate.total_intersection << ",\n";
  o << "    \"total_union\": " << r.aggregate.total_union << ",\n";
  o << "    \"empty_empty_samples\": " << r.empty_empty << "\n";
  o << "  },\n";
  auto group = [&](const char* name, const GroupStats& g, bool last) {
    o << "    \"" << name << "\": {\"samples\": " << g.samples << ", \"miou\": "
      << (g.samples ? fmt6(g.miou) : std::string("null")) << "}" << (last ? "\n" : ",\n");
  };
  o << "  \"groups\": {\n";
  group("spatial", r.spatial, false);
  group("non_spatial", r.non_spatial, true);
  o << "  },\n";
  o << "  \"per_sample\": [";
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto& s = r.samples[i];
    const auto& sel = s.selection;
    o << (i ? ",\n" : "\n") << "    {\n";
    o << "      \"sample_id\": " << json_string(s.sample_id) << ",\n";
    o << "      \"spatial_cue\": " << (s.spatial_cue ? "true" : "false") << ",\n";
    o << "      \"final_id\": " << sel.final_id << ",\n";
    o << "      \"iou\": " << fmt6(s.iou) << ",\n";
    o << "      \"topk_oracle_iou\": " << fmt6(s.topk_oracle_iou) << ",\n";
    o << "      \"upper_bound_iou\": " << fmt6(s.upper_bound_iou) << ",\n";
    o << "      \"intersection\": " << s.counts.intersection << ",\n";
    o << "      \"union\": " << s.counts.uni << ",\n";
    o << "      \"clusters\": " << s.clusters.k << ",\n";
    o << "      \"delta_used\": " << fmt6(s.clusters.delta_used) << ",\n";
    o << "      \"k_used\": " << sel.k_used << ",\n";
    o << "      \"sorted_ids\": " << detail::id_list(sel.sorted_ids) << ",\n";
    o << "      \"clustered_ids\": " << detail::id_list(sel.clustered_ids) << ",\n";
    o << "      \"topk_ids\": " << detail::id_list(sel.topk_ids) << ",\n";
    o << "      \"spatial_guidance\": " << (sel.spatial_guidance ? "true" : "false") << ",\n";
    o << "      \"sc_fallback\": " << (sel.sc_fallback ? "true" : "false") << ",\n";
    o << "      \"zero_norm_patches\": " << s.raw_map.zero_norm_patches << ",\n";
    o << "      \"zero_norm_masks\": " << sel.zero_norm_masks << ",\n";
    o << "      \"scores\": [";
    for (std::size_t m = 0; m < sel.scores.size(); ++m) {
      const auto& ms = sel.scores[m];
      o << (m ? ",\n" : "\n") << "        {\"id\": " << ms.mask_id << ", \"s_pos\": " << fmt6(ms.s_pos)
        << ", \"s_neg\": " << (ms.s_neg ? fmt6(*ms.s_neg) : std::string("null"))
        << ", \"overlap\": " << fmt6(ms.overlap) << ", \"final\": " << fmt6(ms.final_score) << "}";
    }
    o << "\n      ]\n    }";
  }
  o << "\n  ],\n";
  o << "  \"skipped\": [";
  for (std::size_t i = 0; i < r.skipped.size(); ++i) {
    o << (i ? ",\n" : "\n") << "    {\"sample_id\": " << json_string(r.skipped[i].sample_id)
      << ", \"error\": " << json_string(r.skipped[i].error) << "}";
  }
  o << (r.skipped.empty() ? "]\n" : "\n  ]\n");
  o << "}\n";
  return o.str();
}

inline constexpr const char* kReportCsvHeader =
    "sample_id,spatial_cue,final_id,iou,topk_oracle_iou,upper_bound_iou,intersection,union,clusters,k_used,delta_used";

inline std::string report_csv(const RunReport& r) {
  std::ostringstream o;
  o << kReportCsvHeader << "\n";
  for (const auto& s : r.samples) {
    o << s.sample_id << "," << (s.spatial_cue ? 1 : 0) << "," << s.selection.final_id << "," << fmt6(s.iou)
      << "," << fmt6(s.topk_oracle_iou) << "," << fmt6(s.upper_bound_iou) << "," << s.counts.intersection
      << "," << s.counts.uni << "," << s.clusters.k << "," << s.selection.k_used << ","
      << fmt6(s.clusters.delta_used) << "\n";
  }
  return o.str();
}

// ---- sweeps -----------------------------------------------------------------

struct SweepGrid {
  std::vector<int> layers;
  std::vector<double> deltas;
  std::vector<double> alphas;
};

struct SweepRow {
  Hyperparams params;
  double miou = 0.0;
  double oiou = 0.0;
  double topk_oracle_miou = 0.0;
  double upper_bound_miou = 0.0;
  double mean_clusters = 0.0;
  std::size_t samples = 0;
};

/// One run per grid point, layers outermost then deltas then alphas. An
/// empty axis falls back to the resolved default; a grid whose axes are all
/// empty is rejected.
inline std::vector<SweepRow> sweep(const Fixture& fx, const RunConfig& cfg, const SweepGrid& grid) {
  if (grid.layers.empty() && grid.deltas.empty() && grid.alphas.empty()) {
    throw ValidationError("sweep: empty grid");
  }
  const Hyperparams base = resolve_hyperparams(cfg, fx.manifest());
  const auto layers = grid.layers.empty() ? std::vector<int>{base.layer} : grid.layers;
  const auto deltas = grid.deltas.empty() ? std::vector<double>{base.delta} : grid.deltas;
  const auto alphas = grid.alphas.empty() ? std::vector<double>{base.alpha} : grid.alphas;

  std::vector<SweepRow> rows;
  for (int layer : layers) {
    const auto params = fx.params(layer);
    const auto loaded = load_samples(fx, layer, cfg.jobs);
    for (double delta : deltas) {
      for (double alpha : alphas) {
        RunConfig point = cfg;
        point.layer = layer;
        point.delta = delta;
        point.alpha = alpha;
        const Hyperparams h = resolve_hyperparams(point, fx.manifest());
        const auto r = run_loaded(loaded, params, fx.manifest().model, h, point);
        rows.push_back({h, r.aggregate.miou, r.aggregate.oiou, r.topk_oracle_miou, r.upper_bound_miou,
                        r.mean_clusters, r.samples.size()});
      }
    }
  }
  return rows;
}

inline constexpr const char* kSweepCsvHeader =
    "layer,delta,alpha,gamma,miou,oiou,topk_oracle_miou,upper_bound_miou,mean_clusters,samples";

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream o;
  o << kSweepCsvHeader << "\n";
  for (const auto& r : rows) {
    o << r.params.layer << "," << fmt6(r.params.delta) << "," << fmt6(r.params.alpha) << ","
      << fmt6(r.params.gamma) << "," << fmt6(r.miou) << "," << fmt6(r.oiou) << ","
      << fmt6(r.topk_oracle_miou) << "," << fmt6(r.upper_bound_miou) << "," << fmt6(r.mean_clusters) << ","
      << r.samples << "\n";
  }
  return o.str();
}

/// Parses the output of sweep_csv.
inline std::vector<SweepRow> parse_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSweepCsvHeader) {
    throw ValidationError("sweep csv: unexpected header");
  }
  std::vector<SweepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 10) throw ValidationError("sweep csv: line " + std::to_string(lineno) + " has wrong arity");
    try {
      SweepRow r;
      r.params = {std::stoi(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])};
      r.miou = std::stod(f[4]);
      r.oiou = std::stod(f[5]);
      r.topk_oracle_miou = std::stod(f[6]);
      r.upper_bound_miou = std::stod(f[7]);
      r.mean_clusters = std::stod(f[8]);
      r.samples = std::stoul(f[9]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ValidationError("sweep csv: line " + std::to_string(lineno) + " is not numeric");
    }
  }
  return rows;
}

// ---- rendering --------------------------------------------------------------

enum class RenderKind { RawMap, NormalizedMap, Clusters, FinalMask };

/// Raw maps are drawn over the fixed range [-1, 1], normalized maps over
/// [0, 1], both bilinearly upsampled to the mask resolution.
inline RgbImage render_analysis(const SampleAnalysis& a, const SampleRecord& s, RenderKind kind) {
  const std::size_t h = s.gt_mask.dim(0);
  const std::size_t w = s.gt_mask.dim(1);
  switch (kind) {
    case RenderKind::RawMap:
      return render_heatmap(interpolate_map(a.raw_map.values, h, w), -1.0, 1.0);
    case RenderKind::NormalizedMap:
      return render_heatmap(interpolate_map(normalize_map(a.raw_map.values), h, w), 0.0, 1.0);
    case RenderKind::Clusters:
      return render_labels(*a.clusters.interpolated);
    case RenderKind::FinalMask:
      return render_overlay(s.candidate_masks.row(a.selection.final_id), s.gt_mask.data(), h, w);
  }
  throw ValidationError("render: unknown kind");
}

inline RgbImage render_sample(const Fixture& fx, const std::string& sample_id, RenderKind kind,
                              const RunConfig& cfg) {
  const Hyperparams h = resolve_hyperparams(cfg, fx.manifest());
  const auto params = fx.params(h.layer);
  const auto s = fx.sample(sample_id, h.layer);
  return render_analysis(analyze_sample(s, params, h, cfg), s, kind);
}

}  // namespace copatch
