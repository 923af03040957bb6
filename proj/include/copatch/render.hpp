#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "copatch/error.hpp"
#include "copatch/spatialmap.hpp"
#include "copatch/tensor.hpp"

namespace copatch {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Rgb> pixels;  // row-major

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h) {}
  Rgb& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  const Rgb& at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

/// Channel value in [0, 1] to a byte, rounding half up.
inline std::uint8_t to_byte(double c) {
  c = std::clamp(c, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

/// Jet colormap: each channel is clamp(1.5 - |4t - k|) with k = 3, 2, 1 for
/// red, green, blue. t is clamped to [0, 1]; NaN maps to 0.
inline Rgb jet(double t) {
  if (!(t >= 0.0)) t = 0.0;
  if (t > 1.0) t = 1.0;
  auto ch = [t](double k) { return to_byte(std::clamp(1.5 - std::fabs(4.0 * t - k), 0.0, 1.0)); };
  return {ch(3.0), ch(2.0), ch(1.0)};
}

/// Label 0 is black; labels 1.. cycle through this palette.
inline constexpr std::array<Rgb, 12> kClusterPalette{{
    {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200},
    {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
    {210, 245, 60}, {250, 190, 212}, {0, 128, 128}, {170, 110, 40}}};

inline Rgb cluster_color(std::uint32_t label) {
  if (label == 0) return {0, 0, 0};
  return kClusterPalette[(label - 1) % kClusterPalette.size()];
}

// Prediction-vs-ground-truth overlay colors.
inline constexpr Rgb kOverlayBoth{255, 255, 255};
inline constexpr Rgb kOverlayPredOnly{230, 57, 70};
inline constexpr Rgb kOverlayGtOnly{69, 123, 157};
inline constexpr Rgb kOverlayNone{0, 0, 0};

/// Heatmap of a float grid: t = (v - lo) / (hi - lo), then jet.
inline RgbImage render_heatmap(const MapGrid& grid, double lo, double hi) {
  if (grid.ndim() != 2) throw ValidationError("render_heatmap: grid must be 2-D");
  if (!(hi > lo)) throw ValidationError("render_heatmap: empty value range");
  RgbImage img(grid.dim(1), grid.dim(0));
  for (std::size_t i = 0; i < grid.size(); ++i) img.pixels[i] = jet((grid[i] - lo) / (hi - lo));
  return img;
}

inline RgbImage render_labels(const LabelGrid& labels) {
  if (labels.ndim() != 2) throw ValidationError("render_labels: grid must be 2-D");
  RgbImage img(labels.dim(1), labels.dim(0));
  for (std::size_t i = 0; i < labels.size(); ++i) img.pixels[i] = cluster_color(labels[i]);
  return img;
}

inline RgbImage render_overlay(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                               std::size_t height, std::size_t width) {
  if (pred.size() != height * width || gt.size() != height * width) {
    throw ValidationError("render_overlay: mask size mismatch");
  }
  RgbImage img(width, height);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0;
    const bool b = gt[i] != 0;
    img.pixels[i] = a && b ? kOverlayBoth : a ? kOverlayPredOnly : b ? kOverlayGtOnly : kOverlayNone;
  }
  return img;
}

/// Binary P6 encoding: "P6\n<w> <h>\n255\n" followed by RGB triples.
inline std::vector<unsigned char> encode_ppm(const RgbImage& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * img.pixels.size());
  for (const auto& p : img.pixels) {
    out.push_back(p.r);
    out.push_back(p.g);
    out.push_back(p.b);
  }
  return out;
}

inline void write_ppm(const RgbImage& img, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace copatch
