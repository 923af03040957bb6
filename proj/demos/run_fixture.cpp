// Runs the pipeline over a fixture directory and prints per-sample choices.
//   run_fixture <fixture-dir> [delta]

#include <cstdio>
#include <cstdlib>
#include <exception>

#include "copatch/copatch.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <fixture-dir> [delta]\n", argv[0]);
    return 2;
  }
  try {
    const auto fx = copatch::load_fixture(argv[1]);
    copatch::RunConfig cfg;
    if (argc > 2) cfg.delta = std::strtod(argv[2], nullptr);
    cfg.jobs = 4;
    const auto report = copatch::run(fx, cfg);

    for (const auto& s : report.samples) {
      std::printf("%-8s mask %zu  clusters %u  k %zu  iou %.4f\n", s.sample_id.c_str(), s.selection.final_id,
                  s.clusters.k, s.selection.k_used, s.iou);
    }
    std::printf("mIoU %.4f  oIoU %.4f\n", report.aggregate.miou, report.aggregate.oiou);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
