// copatch: run, sweep, render and inspect the mask-selection pipeline over a
// fixture directory.
//
// Exit codes: 0 success, 1 fixture error, 2 usage error.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "copatch/copatch.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFixture = 1;
constexpr int kExitUsage = 2;

struct CommonFlags {
  std::string fixture;
  std::optional<int> layer;
  std::optional<double> delta;
  std::optional<double> alpha;
  std::optional<double> gamma;
  std::optional<std::size_t> topk;
  int connectivity = 4;
  std::string overlap = "union-iou";
  std::size_t jobs = 1;
  bool permissive = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--fixture", f.fixture, "Fixture directory containing manifest.json")->required();
  app->add_option("--layer", f.layer, "Visual encoder exit layer");
  app->add_option("--delta", f.delta, "Initial cluster threshold on the normalized map")->check(CLI::Range(0.0, 1.0));
  app->add_option("--alpha", f.alpha, "Spatial-coherence weight")->check(CLI::Range(0.0, 1.0));
  app->add_option("--gamma", f.gamma, "Sentence weight in the hybrid text feature")->check(CLI::Range(0.0, 1.0));
  app->add_option("--topk", f.topk, "Fixed number of retained candidates (default: cluster count)")
      ->check(CLI::PositiveNumber);
  app->add_option("--connectivity", f.connectivity, "Cluster neighborhood")->check(CLI::IsMember({4, 8}));
  app->add_option("--overlap-metric", f.overlap, "Candidate/cluster overlap")
      ->check(CLI::IsMember({"union-iou", "per-cluster-max"}));
  app->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app->add_flag("--permissive", f.permissive, "Skip corrupt samples instead of failing");
}

copatch::RunConfig to_config(const CommonFlags& f) {
  copatch::RunConfig c;
  c.layer = f.layer;
  c.delta = f.delta;
  c.alpha = f.alpha;
  c.gamma = f.gamma;
  c.topk = f.topk;
  c.connectivity = f.connectivity == 8 ? copatch::Connectivity::Eight : copatch::Connectivity::Four;
  c.overlap = f.overlap == "per-cluster-max" ? copatch::OverlapMetric::PerClusterMax
                                             : copatch::OverlapMetric::UnionIoU;
  c.jobs = f.jobs;
  c.permissive = f.permissive;
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw copatch::IoError(path, "cannot open for writing");
  out << text;
  if (!out) throw copatch::IoError(path, "write failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware patch-map mask selection over pre-extracted embeddings"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  std::string run_out = "-";
  std::string run_csv;
  auto* run_cmd = app.add_subcommand("run", "Run the pipeline and write a report");
  add_common(run_cmd, run_flags);
  run_cmd->add_option("--out", run_out, "Report JSON path ('-' for stdout)");
  run_cmd->add_option("--csv", run_csv, "Optional per-sample CSV path");

  CommonFlags sweep_flags;
  std::vector<int> sweep_layers;
  std::vector<double> sweep_deltas;
  std::vector<double> sweep_alphas;
  std::string sweep_out = "-";
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid search over layer, delta and alpha");
  add_common(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--layers", sweep_layers, "Exit layers")->delimiter(',');
  sweep_cmd->add_option("--deltas", sweep_deltas, "Thresholds")->delimiter(',')->check(CLI::Range(0.0, 1.0));
  sweep_cmd->add_option("--alphas", sweep_alphas, "Spatial-coherence weights")->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));
  sweep_cmd->add_option("--out", sweep_out, "CSV path ('-' for stdout)");

  CommonFlags render_flags;
  std::string render_sample;
  std::string render_what;
  std::string render_out;
  auto* render_cmd = app.add_subcommand("render", "Write a PPM visualization of one sample");
  add_common(render_cmd, render_flags);
  render_cmd->add_option("--sample", render_sample, "Sample id")->required();
  render_cmd->add_option("--what", render_what, "What to draw")
      ->required()
      ->check(CLI::IsMember({"raw-map", "normalized-map", "clusters", "final-mask"}));
  render_cmd->add_option("--out", render_out, "Output .ppm path")->required();

  std::string profile_fixture;
  std::string profile_a;
  std::string profile_b;
  std::string profile_out = "-";
  auto* profile_cmd = app.add_subcommand("profile", "Per-layer cosine between two samples' CLS embeddings");
  profile_cmd->add_option("--fixture", profile_fixture, "Fixture directory")->required();
  profile_cmd->add_option("--a", profile_a, "First sample id")->required();
  profile_cmd->add_option("--b", profile_b, "Second sample id")->required();
  profile_cmd->add_option("--out", profile_out, "CSV path ('-' for stdout)");

  std::string summarize_in;
  std::string summarize_by = "miou";
  auto* summarize_cmd = app.add_subcommand("summarize", "Best grid points of a sweep CSV");
  summarize_cmd->add_option("input", summarize_in, "Sweep CSV")->required();
  summarize_cmd->add_option("--by", summarize_by, "Ranking column")
      ->check(CLI::IsMember({"miou", "oiou", "topk_oracle_miou"}));

  std::string check_fixture;
  auto* check_cmd = app.add_subcommand("check", "Validate every sample of a fixture");
  check_cmd->add_option("--fixture", check_fixture, "Fixture directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run_cmd) {
      const auto fx = copatch::load_fixture(run_flags.fixture);
      const auto report = copatch::run(fx, to_config(run_flags));
      write_text(run_out, copatch::report_json(report));
      if (!run_csv.empty()) write_text(run_csv, copatch::report_csv(report));
      for (const auto& s : report.skipped) std::cerr << "skipped " << s.sample_id << ": " << s.error << "\n";
      for (const auto& s : report.samples) {
        if (s.selection.sc_fallback) {
          std::cerr << "warning: " << s.sample_id << ": spatial cue without negative embedding\n";
        }
      }
      std::cerr << "mIoU " << copatch::fmt6(report.aggregate.miou) << "  oIoU "
                << copatch::fmt6(report.aggregate.oiou) << "  samples " << report.samples.size() << "\n";
    } else if (*sweep_cmd) {
      if (sweep_layers.empty() && sweep_deltas.empty() && sweep_alphas.empty()) {
        std::cerr << "sweep: empty grid; pass --layers, --deltas and/or --alphas\n";
        return kExitUsage;
      }
      const auto fx = copatch::load_fixture(sweep_flags.fixture);
      const auto rows = copatch::sweep(fx, to_config(sweep_flags), {sweep_layers, sweep_deltas, sweep_alphas});
      write_text(sweep_out, copatch::sweep_csv(rows));
    } else if (*render_cmd) {
      static const std::map<std::string, copatch::RenderKind> kinds{
          {"raw-map", copatch::RenderKind::RawMap},
          {"normalized-map", copatch::RenderKind::NormalizedMap},
          {"clusters", copatch::RenderKind::Clusters},
          {"final-mask", copatch::RenderKind::FinalMask}};
      const auto fx = copatch::load_fixture(render_flags.fixture);
      const auto img = copatch::render_sample(fx, render_sample, kinds.at(render_what), to_config(render_flags));
      copatch::write_ppm(img, render_out);
    } else if (*profile_cmd) {
      const auto fx = copatch::load_fixture(profile_fixture);
      auto cls = [&](const std::string& id) {
        const auto& e = fx.entry(id);
        if (!e.cls_layers) throw copatch::FixtureError(id, "no per-layer CLS embeddings");
        return copatch::read_tensor_as<float>(fx.dir() / *e.cls_layers);
      };
      const auto prof = copatch::layer_profile(cls(profile_a), cls(profile_b));
      std::string text = "layer,cosine\n";
      for (std::size_t l = 0; l < prof.cosines.size(); ++l) {
        text += std::to_string(l) + "," + copatch::fmt6(prof.cosines[l]) + "\n";
      }
      write_text(profile_out, text);
      if (prof.zero_norm_layers) std::cerr << "warning: " << prof.zero_norm_layers << " zero-norm layers\n";
    } else if (*summarize_cmd) {
      std::ifstream in(summarize_in);
      if (!in) throw copatch::IoError(summarize_in, "cannot open");
      auto rows = copatch::parse_sweep_csv(in);
      if (rows.empty()) {
        std::cerr << "summarize: no rows\n";
        return kExitUsage;
      }
      auto key = [&](const copatch::SweepRow& r) {
        return summarize_by == "oiou" ? r.oiou : summarize_by == "topk_oracle_miou" ? r.topk_oracle_miou : r.miou;
      };
      std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) { return key(a) > key(b); });
      const auto& best = rows.front();
      std::cout << "best by " << summarize_by << ": layer " << best.params.layer << " delta "
                << copatch::fmt6(best.params.delta) << " alpha " << copatch::fmt6(best.params.alpha)
                << " miou " << copatch::fmt6(best.miou) << " oiou " << copatch::fmt6(best.oiou)
                << " topk_oracle_miou " << copatch::fmt6(best.topk_oracle_miou) << " mean_clusters "
                << copatch::fmt6(best.mean_clusters) << "\n";
    } else if (*check_cmd) {
      const auto fx = copatch::load_fixture(check_fixture);
      int bad = 0;
      for (const auto& e : fx.manifest().samples) {
        for (const auto& [layer, path] : e.patches) {
          try {
            (void)fx.sample(e.id, layer);
          } catch (const copatch::Error& err) {
            std::cerr << err.what() << "\n";
            ++bad;
          }
        }
      }
      std::cout << fx.manifest().samples.size() << " samples, " << bad << " problems\n";
      return bad ? kExitFixture : kExitOk;
    }
  } catch (const copatch::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const copatch::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFixture;
  }
  return kExitOk;
}
