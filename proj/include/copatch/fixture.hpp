#pragma once

// Fixture directory layout: a `manifest.json` plus CPT1 tensor files
// referenced from it by relative path. See docs/fixture-format.md.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "copatch/error.hpp"
#include "copatch/spatialmap.hpp"
#include "copatch/tensor.hpp"
#include "copatch/tensorio.hpp"

namespace copatch {

inline constexpr const char* kFixtureFormat = "copatch-fixture";
inline constexpr int kFixtureVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

/// Hyperparameters a manifest may pin for its samples.
struct HyperDefaults {
  std::optional<int> layer;
  std::optional<double> delta;
  std::optional<double> alpha;
  std::optional<double> gamma;
};

struct SampleEntry {
  std::string id;
  std::string expression;
  std::string n_o;
  std::string n_c;
  std::optional<std::string> spatial_cue;
  std::string e_sen;
  std::string e_noun;
  std::optional<std::string> e_neg;
  std::map<int, std::string> patches;  // exit layer -> file
  std::string masks;
  std::string e_img;
  std::string gt;
  std::optional<std::string> cls_layers;
};

struct FixtureManifest {
  int version = 0;
  std::string model;
  std::size_t d = 0;
  std::size_t d_star = 0;
  std::size_t p = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  HyperDefaults defaults;
  std::string ln_gamma;
  std::string ln_beta;
  double ln_eps = 1e-5;
  std::string proj;
  std::vector<SampleEntry> samples;
};

/// One referring-expression instance with its tensors loaded for a single
/// exit layer.
struct SampleRecord {
  std::string sample_id;
  std::string expression;
  std::string n_o;
  std::string n_c;
  std::vector<float> e_sen;
  std::vector<float> e_noun;
  std::optional<std::vector<float>> e_neg;
  std::optional<std::string> spatial_cue;
  int layer = 0;
  TensorF32 patch_embeddings;  // [p, p, d_star]
  Bitmap candidate_masks;      // [M, H, W]
  TensorF32 e_img;             // [M, d]
  Bitmap gt_mask;              // [H, W]
  std::optional<TensorF32> cls_layers;  // [L, d]

  std::size_t mask_count() const { return candidate_masks.dim(0); }
  bool has_spatial_cue() const { return spatial_cue.has_value() && !spatial_cue->empty(); }
};

namespace detail {

template <class T>
T required(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FixtureError("", where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FixtureError("", where + ": field '" + key + "' has wrong type");
  }
}

template <class T>
std::optional<T> optional_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

inline bool is_binary(const Bitmap& b) {
  return std::all_of(b.values().begin(), b.values().end(), [](auto v) { return v <= 1; });
}

}  // namespace detail

inline FixtureManifest parse_manifest(const nlohmann::json& j) {
  FixtureManifest m;
  const auto format = detail::required<std::string>(j, "format", "manifest");
  if (format != kFixtureFormat) throw FixtureError("", "manifest: unknown format '" + format + "'");
  m.version = detail::required<int>(j, "version", "manifest");
  if (m.version != kFixtureVersion) {
    throw FixtureError("", "manifest: version " + std::to_string(m.version) + " unsupported (engine reads " +
                               std::to_string(kFixtureVersion) + ")");
  }
  m.model = detail::required<std::string>(j, "model", "manifest");
  const auto dims = detail::required<nlohmann::json>(j, "dims", "manifest");
  m.d = detail::required<std::size_t>(dims, "d", "dims");
  m.d_star = detail::required<std::size_t>(dims, "d_star", "dims");
  m.p = detail::required<std::size_t>(dims, "p", "dims");
  m.height = detail::required<std::size_t>(dims, "height", "dims");
  m.width = detail::required<std::size_t>(dims, "width", "dims");
  if (m.d == 0 || m.d_star == 0 || m.p == 0 || m.height == 0 || m.width == 0) {
    throw FixtureError("", "manifest: dims must be positive");
  }
  if (j.contains("defaults")) {
    const auto& dj = j.at("defaults");
    m.defaults.layer = detail::optional_field<int>(dj, "layer");
    m.defaults.delta = detail::optional_field<double>(dj, "delta");
    m.defaults.alpha = detail::optional_field<double>(dj, "alpha");
    m.defaults.gamma = detail::optional_field<double>(dj, "gamma");
  }
  const auto params = detail::required<nlohmann::json>(j, "params", "manifest");
  m.ln_gamma = detail::required<std::string>(params, "ln_gamma", "params");
  m.ln_beta = detail::required<std::string>(params, "ln_beta", "params");
  m.ln_eps = detail::required<double>(params, "ln_eps", "params");
  m.proj = detail::required<std::string>(params, "proj", "params");

  const auto samples = detail::required<nlohmann::json>(j, "samples", "manifest");
  if (!samples.is_array()) throw FixtureError("", "manifest: 'samples' must be an array");
  for (const auto& sj : samples) {
    SampleEntry s;
    s.id = detail::required<std::string>(sj, "id", "sample");
    const std::string where = "sample '" + s.id + "'";
    s.expression = detail::optional_field<std::string>(sj, "expression").value_or("");
    s.n_o = detail::optional_field<std::string>(sj, "n_o").value_or("");
    s.n_c = detail::optional_field<std::string>(sj, "n_c").value_or("");
    s.spatial_cue = detail::optional_field<std::string>(sj, "spatial_cue");
    s.e_sen = detail::required<std::string>(sj, "e_sen", where);
    s.e_noun = detail::required<std::string>(sj, "e_noun", where);
    s.e_neg = detail::optional_field<std::string>(sj, "e_neg");
    const auto patches = detail::required<nlohmann::json>(sj, "patches", where);
    if (!patches.is_object()) throw FixtureError(s.id, "'patches' must map layer -> file");
    for (const auto& [layer, path] : patches.items()) {
      try {
        s.patches[std::stoi(layer)] = path.get<std::string>();
      } catch (const std::exception&) {
        throw FixtureError(s.id, "bad patches entry for layer '" + layer + "'");
      }
    }
    s.masks = detail::required<std::string>(sj, "masks", where);
    s.e_img = detail::required<std::string>(sj, "e_img", where);
    s.gt = detail::required<std::string>(sj, "gt", where);
    s.cls_layers = detail::optional_field<std::string>(sj, "cls_layers");
    m.samples.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    for (std::size_t k = i + 1; k < m.samples.size(); ++k) {
      if (m.samples[i].id == m.samples[k].id) throw FixtureError(m.samples[i].id, "duplicate sample id");
    }
  }
  return m;
}

/// A loaded manifest with lazy, read-only access to its samples. Safe to
/// share between threads once constructed.
class Fixture {
 public:
  Fixture(std::filesystem::path dir, FixtureManifest manifest)
      : dir_(std::move(dir)), manifest_(std::move(manifest)) {}

  const FixtureManifest& manifest() const noexcept { return manifest_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::vector<std::string> sample_ids() const {
    std::vector<std::string> ids;
    for (const auto& s : manifest_.samples) ids.push_back(s.id);
    return ids;
  }

  const SampleEntry& entry(const std::string& id) const {
    for (const auto& s : manifest_.samples) {
      if (s.id == id) return s;
    }
    throw FixtureError(id, "no such sample");
  }

  ProjectionParams params(int exit_layer) const {
    ProjectionParams p;
    p.d_star = manifest_.d_star;
    p.d = manifest_.d;
    p.ln_eps = manifest_.ln_eps;
    p.exit_layer = exit_layer;
    p.patch_grid = manifest_.p;
    p.ln_gamma = vector_file("", manifest_.ln_gamma, manifest_.d_star, "ln_gamma");
    p.ln_beta = vector_file("", manifest_.ln_beta, manifest_.d_star, "ln_beta");
    p.proj = tensor_file<float>("", manifest_.proj);
    if (p.proj.shape() != std::vector<std::size_t>{manifest_.d_star, manifest_.d}) {
      throw FixtureError("", "projection matrix must be [d_star, d]");
    }
    try {
      p.validate();
    } catch (const ValidationError& e) {
      throw FixtureError("", e.what());
    }
    return p;
  }

  /// Loads and validates one sample at the given exit layer.
  SampleRecord sample(const std::string& id, int layer) const {
    const SampleEntry& e = entry(id);
    const auto& m = manifest_;
    SampleRecord r;
    r.sample_id = e.id;
    r.expression = e.expression;
    r.n_o = e.n_o;
    r.n_c = e.n_c;
    r.spatial_cue = e.spatial_cue;
    r.layer = layer;
    r.e_sen = vector_file(id, e.e_sen, m.d, "e_sen");
    r.e_noun = vector_file(id, e.e_noun, m.d, "e_noun");
    if (e.e_neg) r.e_neg = vector_file(id, *e.e_neg, m.d, "e_neg");

    const auto it = e.patches.find(layer);
    if (it == e.patches.end()) {
      throw FixtureError(id, "no patch embeddings for exit layer " + std::to_string(layer));
    }
    r.patch_embeddings = tensor_file<float>(id, it->second);
    expect_shape(id, "patches", r.patch_embeddings, {m.p, m.p, m.d_star});

    r.candidate_masks = tensor_file<std::uint8_t>(id, e.masks);
    if (r.candidate_masks.ndim() != 3) throw FixtureError(id, "masks must be [M, H, W]");
    expect_shape(id, "masks", r.candidate_masks, {r.candidate_masks.dim(0), m.height, m.width});
    if (!detail::is_binary(r.candidate_masks)) throw FixtureError(id, "masks must hold only 0/1");

    r.e_img = tensor_file<float>(id, e.e_img);
    expect_shape(id, "e_img", r.e_img, {r.candidate_masks.dim(0), m.d});

    r.gt_mask = tensor_file<std::uint8_t>(id, e.gt);
    expect_shape(id, "gt", r.gt_mask, {m.height, m.width});
    if (!detail::is_binary(r.gt_mask)) throw FixtureError(id, "gt must hold only 0/1");

    if (e.cls_layers) {
      r.cls_layers = tensor_file<float>(id, *e.cls_layers);
      if (r.cls_layers->ndim() != 2 || r.cls_layers->dim(1) != m.d) {
        throw FixtureError(id, "cls_layers must be [L, d]");
      }
    }
    return r;
  }

  /// Every path a sample references that does not exist on disk.
  std::vector<std::string> missing_files(const SampleEntry& e) const {
    std::vector<std::string> paths{e.e_sen, e.e_noun, e.masks, e.e_img, e.gt};
    if (e.e_neg) paths.push_back(*e.e_neg);
    if (e.cls_layers) paths.push_back(*e.cls_layers);
    for (const auto& [layer, p] : e.patches) paths.push_back(p);
    std::vector<std::string> missing;
    for (const auto& p : paths) {
      if (!std::filesystem::exists(dir_ / p)) missing.push_back(p);
    }
    return missing;
  }

 private:
  template <class T>
  Tensor<T> tensor_file(const std::string& id, const std::string& rel) const {
    const auto path = dir_ / rel;
    if (!std::filesystem::exists(path)) throw FixtureError(id, "missing file " + path.string());
    try {
      return read_tensor_as<T>(path);
    } catch (const FixtureError&) {
      throw;
    } catch (const Error& e) {
      throw FixtureError(id, e.what());
    }
  }

  std::vector<float> vector_file(const std::string& id, const std::string& rel, std::size_t len,
                                 const char* what) const {
    auto t = tensor_file<float>(id, rel);
    if (t.ndim() != 1 || t.dim(0) != len) {
      throw FixtureError(id, std::string(what) + " must be a vector of length " + std::to_string(len));
    }
    return std::move(t.values());
  }

  template <class T>
  static void expect_shape(const std::string& id, const char* what, const Tensor<T>& t,
                           const std::vector<std::size_t>& want) {
    if (t.shape() == want) return;
    auto fmt = [](const std::vector<std::size_t>& s) {
      std::string out = "[";
      for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
      return out + "]";
    };
    throw FixtureError(id, std::string(what) + " has shape " + fmt(t.shape()) + ", expected " + fmt(want));
  }

  std::filesystem::path dir_;
  FixtureManifest manifest_;
};

inline Fixture load_fixture(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw FixtureError("", "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FixtureError("", "manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return Fixture(dir, parse_manifest(j));
}

}  // namespace copatch
