// Builds a synthetic similarity map with two blobs, clusters it and writes
// the heatmap and label images next to the binary.

#include <cmath>
#include <cstdio>

#include "copatch/copatch.hpp"

int main() {
  using namespace copatch;
  constexpr std::size_t p = 14, side = 112;

  MapGrid raw({p, p});
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < p; ++c) {
      const double a = std::exp(-(std::pow(r - 3.0, 2) + std::pow(c - 4.0, 2)) / 6.0);
      const double b = 0.8 * std::exp(-(std::pow(r - 10.0, 2) + std::pow(c - 9.0, 2)) / 4.0);
      raw.at(r, c) = a + b - 0.4;
    }
  }

  const auto cm = comap(raw, 0.5, side, side);
  std::printf("clusters: %u (delta used %.2f)\n", cm.k, cm.delta_used);

  write_ppm(render_heatmap(interpolate_map(normalize_map(raw), side, side), 0.0, 1.0), "cluster_map_heat.ppm");
  write_ppm(render_labels(*cm.interpolated), "cluster_map_labels.ppm");
  return 0;
}
