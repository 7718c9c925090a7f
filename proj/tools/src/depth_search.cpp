// Enumerates per-stage block counts and neck AIR depth, profiles the four
// variants at 640 px with one class and ranks the settings by how well they
// meet the efficiency targets.
#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "firead/profiler.hpp"

namespace {

using firead::ModelConfig;
using firead::Variant;

struct Target {
  Variant variant;
  double params;  // millions
  double gflops;
  double params_tol;
  double gflops_tol;
};

constexpr Target kTargets[] = {
    {Variant::baseline, 3.01, 8.1, 0.05, 0.10},
    {Variant::air, 1.84, 5.4, 0.10, 0.10},
    {Variant::dpdf, 2.52, 6.9, 0.10, 0.10},
    {Variant::full, 1.45, 4.6, 0.10, 0.10},
};

struct Candidate {
  std::array<std::int64_t, 4> bps{};
  std::int64_t neck_air = 0;
  double params[4]{};
  double gflops[4]{};
  double worst = 0;  // largest |deviation| / tolerance
  bool ratios_ok = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stage-depth search against the efficiency targets"};
  int max_depth = 3;
  int max_neck = 1;
  int top = 15;
  int input = 640;
  app.add_option("--max-depth", max_depth, "Largest blocks-per-stage value")->capture_default_str();
  app.add_option("--max-neck", max_neck, "Largest neck AIR depth")->capture_default_str();
  app.add_option("--top", top, "Rows to print")->capture_default_str();
  app.add_option("--input", input, "Input size")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::vector<Candidate> all;
  const ModelConfig defaults = ModelConfig::preset(Variant::full);
  for (int a = 1; a <= max_depth; ++a)
    for (int b = 1; b <= max_depth; ++b)
      for (int c = 1; c <= max_depth; ++c)
        for (int d = 1; d <= max_depth; ++d)
          for (int n = 0; n <= max_neck; ++n) {
            Candidate cand;
            cand.bps = {a, b, c, d};
            cand.neck_air = n;
            ModelConfig base = defaults;
            base.blocks_per_stage = cand.bps;
            base.neck_air_blocks = n;
            const auto rows = firead::ablation_report(base, input);
            for (std::size_t i = 0; i < rows.size(); ++i) {
              cand.params[i] = static_cast<double>(rows[i].report.params) / 1e6;
              cand.gflops[i] = rows[i].report.gflops;
              const Target& t = kTargets[i];
              cand.worst = std::max({cand.worst, std::abs(cand.params[i] / t.params - 1) / t.params_tol,
                                     std::abs(cand.gflops[i] / t.gflops - 1) / t.gflops_tol});
            }
            const double full_ratio = cand.params[3] / cand.params[0];
            const double air_cut = 1 - cand.params[1] / cand.params[0];
            cand.ratios_ok = full_ratio >= 0.44 && full_ratio <= 0.53 && air_cut >= 0.34 && air_cut <= 0.44;
            all.push_back(cand);
          }

  std::stable_sort(all.begin(), all.end(), [](const Candidate& x, const Candidate& y) {
    if (x.ratios_ok != y.ratios_ok) return x.ratios_ok;
    return x.worst < y.worst;
  });

  std::printf("%zu settings searched at %d px; score = worst |deviation| / tolerance (<= 1 meets every target)\n\n",
              all.size(), input);
  std::printf("%-10s %-5s %-17s %-17s %-17s %-17s %-7s %-6s\n", "stages", "neck", "baseline M/GF", "air M/GF",
              "dpdf M/GF", "full M/GF", "score", "ratios");
  auto row = [](const Candidate& c, const char* mark) {
    char stages[32];
    std::snprintf(stages, sizeof stages, "%lld,%lld,%lld,%lld", static_cast<long long>(c.bps[0]),
                  static_cast<long long>(c.bps[1]), static_cast<long long>(c.bps[2]),
                  static_cast<long long>(c.bps[3]));
    std::printf("%-10s %-5lld", stages, static_cast<long long>(c.neck_air));
    for (int i = 0; i < 4; ++i) std::printf(" %7.3f / %6.3f ", c.params[i], c.gflops[i]);
    std::printf(" %-7.3f %-6s%s\n", c.worst, c.ratios_ok ? "ok" : "no", mark);
  };
  for (int i = 0; i < std::min<int>(top, static_cast<int>(all.size())); ++i) {
    const bool chosen = all[i].bps == defaults.blocks_per_stage && all[i].neck_air == defaults.neck_air_blocks;
    row(all[i], chosen ? "  <- default" : "");
  }
  const auto it = std::find_if(all.begin(), all.end(), [&](const Candidate& c) {
    return c.bps == defaults.blocks_per_stage && c.neck_air == defaults.neck_air_blocks;
  });
  if (it != all.end() && it - all.begin() >= top) {
    std::printf("...\n");
    row(*it, "  <- default");
  }
  return 0;
}
