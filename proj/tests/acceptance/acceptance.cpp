// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "cli.hpp"
#include "firead/blocks.hpp"
#include "firead/loss.hpp"
#include "firead/profiler.hpp"
#include "firead/weights.hpp"
#include "fuzz.hpp"
#include "gradcheck_suite.hpp"
#include "image.hpp"
#include "synth.hpp"
#include "train.hpp"

namespace fs = std::filesystem;
using namespace firead;
using namespace firead::tools;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const char* id, bool pass, const std::string& detail) {
  std::printf("%s %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Cli {
  int code;
  std::string out;
};

Cli run(std::vector<std::string> args) {
  args.insert(args.begin(), "firead");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str()};
}

void ac1() {
  const auto t0 = Clock::now();
  double unit_max = 0, model_max = 0;
  int units = 0;
  bool all = true;
  std::string worst;
  for (const auto& scope : gradcheck_scopes())
    for (const auto& r : run_gradcheck(scope, kDefaultSeed)) {
      ++units;
      all = all && r.passed;
      if (!r.passed && worst.empty()) worst = " first failure: " + r.name;
      (scope == "model" ? model_max : unit_max) = std::max(scope == "model" ? model_max : unit_max,
                                                           r.max_relative_error);
    }
  const double secs = seconds_since(t0);
  report("AC1", all && unit_max < 1e-5 && model_max < 1e-4 && secs < 120,
         std::to_string(units) + " units; " +
             fmt("max rel err %.2e (< 1e-5) units, %.2e (< 1e-4) toy model; %.0f s (< 120 s)", unit_max, model_max,
                 secs) +
             worst);
}

void ac2() {
  const auto conv = oracle::fuzz_conv2d(101, 200, 1e-6);
  const auto pool = oracle::fuzz_pool2d(102, 150, 1e-6);
  const auto pconv = oracle::fuzz_partial_conv(103, 150, 1e-6);
  const auto lin = oracle::fuzz_linear(104, 150, 1e-6);
  const double worst = std::max({conv.max_error, pool.max_error, pconv.max_error, lin.max_error});
  report("AC2", conv.ok() && pool.ok() && pconv.ok() && lin.ok(),
         "conv2d " + std::to_string(conv.cases) + ", pool2d " + std::to_string(pool.cases) + ", partial_conv " +
             std::to_string(pconv.cases) + ", linear " + std::to_string(lin.cases) +
             fmt(" fuzzed shapes; max |diff| %.1e (<= 1e-6)", worst));
}

void ac3() {
  const auto rows = ablation_report(ModelConfig{}, 640);
  const double target_p[] = {3.01, 1.84, 2.52, 1.45}, target_g[] = {8.1, 5.4, 6.9, 4.6};
  const double tol_p[] = {0.05, 0.10, 0.10, 0.10};
  bool ok = rows.size() == 4;
  std::string detail;
  for (std::size_t i = 0; ok && i < 4; ++i) {
    const double p = static_cast<double>(rows[i].report.params) / 1e6, g = rows[i].report.gflops;
    const double dp = p / target_p[i] - 1, dg = g / target_g[i] - 1;
    ok = ok && std::abs(dp) <= tol_p[i] && std::abs(dg) <= 0.10;
    detail += std::string(variant_name(rows[i].variant)) + fmt(" %.3fM (%+.1f%%) %.2fG (%+.1f%%); ", p, 100 * dp, g,
                                                                 100 * dg);
  }
  const double ratio = static_cast<double>(rows[3].report.params) / static_cast<double>(rows[0].report.params);
  const double air_cut = 1 - static_cast<double>(rows[1].report.params) / static_cast<double>(rows[0].report.params);
  ok = ok && ratio >= 0.44 && ratio <= 0.53 && air_cut >= 0.34 && air_cut <= 0.44;
  report("AC3", ok, detail + fmt("full/base %.3f in [0.44, 0.53]; AIR cut %.1f%% in [34, 44]", ratio, 100 * air_cut));
}

void ac4() {
  Rng rng(kDefaultSeed);
  bool air_ok = true, dpdf_shape = true, convex = true;
  for (std::int64_t c : {4, 8, 16, 24}) {
    const auto p = AirBlockParams<double>::make(c, rng);
    for (Shape s : {Shape{1, c, 3, 3}, Shape{2, c, 8, 6}, Shape{1, c, 13, 9}}) {
      auto x = Tensor<double>::uniform(s, -1, 1, rng);
      air_ok = air_ok && air(x, p, Mode::train).shape() == s && air(x, p, Mode::infer).shape() == s;
    }
  }
  for (std::int64_t c : {4, 8, 16}) {
    for (double alpha_raw : {-5.0, -0.5, 0.0, 1.5, 6.0}) {
      auto p = DpdfBlockParams<double>::make(c, 2 * c, rng);
      p.alpha_raw.mutable_data()[0] = alpha_raw;
      for (Shape s : {Shape{1, c, 8, 8}, Shape{2, c, 6, 10}, Shape{1, c, 4, 16}}) {
        auto x = Tensor<double>::uniform(s, -3, 3, rng);
        const auto out = dpdf_detailed(x, p, Mode::train);
        dpdf_shape = dpdf_shape && out.output.shape() == Shape{s.n, 2 * c, s.h / 2, s.w / 2};
        for (std::size_t i = 0; i < out.fused.data().size(); ++i) {
          const double a = out.path_max.data()[i], b = out.path_avg.data()[i], f = out.fused.data()[i];
          convex = convex && f >= std::min(a, b) - 1e-12 && f <= std::max(a, b) + 1e-12;
        }
      }
    }
  }
  std::int64_t p[4];
  Rng r2(kDefaultSeed);
  int i = 0;
  for (Variant v : {Variant::baseline, Variant::air, Variant::dpdf, Variant::full})
    p[i++] = count_params(Model<float>::build(ModelConfig::preset(v), r2));
  const bool mono = p[3] < p[1] && p[3] < p[2] && p[1] < p[0] && p[2] < p[0];
  report("AC4", air_ok && dpdf_shape && convex && mono,
         std::string("AIR shape ") + (air_ok ? "kept" : "CHANGED") + "; DPDF H/2 x W/2 " +
             (dpdf_shape ? "exact" : "WRONG") + ", convex bounds " + (convex ? "hold" : "VIOLATED") +
             "; params full " + std::to_string(p[3]) + " < air " + std::to_string(p[1]) + ", dpdf " +
             std::to_string(p[2]) + " < baseline " + std::to_string(p[0]));
}

void ac5() {
  const auto m = oracle::fuzz_metrics(kDefaultSeed, 2000);
  const auto n = oracle::fuzz_nms(kDefaultSeed, 100, 200);
  report("AC5", m.ok() && n.ok(),
         std::to_string(m.cases) + " metric cases (<= 5 dets, <= 3 GTs), " + std::to_string(m.mismatches) +
             " mismatches; " + std::to_string(n.cases) + " NMS cases of 200 boxes, " + std::to_string(n.mismatches) +
             " keep-set differences");
}

void ac6() {
  const double same = ciou_loss({1, 1, 2, 2}, {1, 1, 2, 2});
  const double hand = ciou_loss({1, 1, 2, 2}, {2, 2, 2, 2});
  report("AC6", same == 0.0 && std::abs(hand - 0.968254) <= 1e-6,
         fmt("identical boxes loss %.1f (exact 0); A/B loss %.9f (0.968254 +- 1e-6)", same, hand));
}

void ac7(const fs::path& dir) {
  const auto t0 = Clock::now();
  SynthOptions so;  // 8 images, 128 px, seed 7
  write_synth(generate_synth(so), dir.string());
  const auto samples = read_synth(dir.string());
  const ModelConfig cfg = toy_train_config();
  TrainOptions opt;
  opt.seed = kDefaultSeed;
  const auto result = train_toy(cfg, samples, opt);
  std::vector<Detection> dets;
  std::vector<GroundTruthBox> gts;
  for (const auto& s : samples) {
    for (auto& d : detect(result.model, s.image, s.name, 0.001, cfg.nms_iou_threshold)) dets.push_back(d);
    gts.insert(gts.end(), s.boxes.begin(), s.boxes.end());
  }
  const double map50 = average_precision(dets, gts, 0.5).ap;
  const double secs = seconds_since(t0);
  // Same seed again for a prefix of the run: identical losses and weights.
  TrainOptions short_opt = opt;
  short_opt.steps = 10;
  const auto a = train_toy(cfg, samples, short_opt), b = train_toy(cfg, samples, short_opt);
  const bool deterministic = a.losses == b.losses && save_weights(a.model) == save_weights(b.model) &&
                             std::equal(a.losses.begin(), a.losses.end(), result.losses.begin());
  const double ratio = result.losses.back() / result.losses.front();
  report("AC7", ratio <= 0.5 && map50 >= 0.8 && secs < 600 && deterministic,
         fmt("loss %.3f -> %.3f (%.1f%% of step 1, <= 50%%) in 300 steps; ", result.losses.front(),
             result.losses.back(), 100 * ratio) +
             fmt("train-set mAP50 %.3f (>= 0.8); %.0f s (< 600 s); ", map50, secs) +
             (deterministic ? "deterministic per seed" : "NOT deterministic"));
}

void ac8(const fs::path& dir) {
  Rng rng(kDefaultSeed), other(kDefaultSeed + 1);
  bool archive = true;
  for (Variant v : {Variant::baseline, Variant::full}) {
    const auto src = Model<float>::build(ModelConfig::preset(v), rng);
    auto dst = Model<float>::build(ModelConfig::preset(v), other);
    for (Dtype d : {Dtype::f32, Dtype::f16}) {
      const auto bytes = save_weights(src, d);
      load_weights(std::span<const std::uint8_t>(bytes), dst);
      archive = archive && save_weights(dst, d) == bytes;
    }
  }

  const std::string d = dir.string();
  auto same = [](const Cli& x, const Cli& y) { return x.code == 0 && x.code == y.code && x.out == y.out; };
  auto same_files = [&](const std::string& a, const std::string& b) { return read_file(a) == read_file(b); };
  std::vector<std::string> failed;
  auto check = [&](const std::string& verb, bool ok) {
    if (!ok) failed.push_back(verb);
  };

  run({"synth", "--out", d + "/s1"});
  run({"synth", "--out", d + "/s2"});
  bool synth_ok = same_files(d + "/s1/gt.jsonl", d + "/s2/gt.jsonl");
  for (int i = 0; i < 8; ++i) {
    const std::string name = "/synth_00" + std::to_string(i) + ".ppm";
    synth_ok = synth_ok && same_files(d + "/s1" + name, d + "/s2" + name);
  }
  check("synth", synth_ok);

  write_text(d + "/toy.json", model_config_to_text(toy_train_config()));
  const std::vector<std::string> train{"train-toy", "--data", d + "/s1", "--config", d + "/toy.json", "--steps", "5"};
  auto t1 = train, t2 = train;
  t1.insert(t1.end(), {"--out", d + "/w1.bin"});
  t2.insert(t2.end(), {"--out", d + "/w2.bin"});
  const auto r1 = run(t1), r2 = run(t2);
  check("train-toy", r1.code == 0 && r1.code == r2.code && same_files(d + "/w1.bin", d + "/w2.bin") &&
                         r1.out.substr(0, r1.out.find("weights written")) ==
                             r2.out.substr(0, r2.out.find("weights written")));

  std::vector<std::string> infer{"infer", "--config", d + "/toy.json", "--weights", d + "/w1.bin", "--score",
                                 "0.001"};
  for (int i = 0; i < 8; ++i) infer.push_back(d + "/s1/synth_00" + std::to_string(i) + ".ppm");
  const auto i1 = run(infer);
  auto threaded = infer;
  threaded.insert(threaded.end(), {"--threads", "4"});
  check("infer", same(i1, run(infer)) && same(i1, run(threaded)) && !i1.out.empty());

  write_text(d + "/det.jsonl", i1.out);
  const std::vector<std::string> eval{"eval", "--detections", d + "/det.jsonl", "--gt", d + "/s1/gt.jsonl"};
  check("eval", same(run(eval), run(eval)));
  const std::vector<std::string> prof{"profile", "--variant", "full", "--ablation"};
  check("profile", same(run(prof), run(prof)));
  const std::vector<std::string> grad{"gradcheck", "--scope", "primitives"};
  check("gradcheck", same(run(grad), run(grad)));

  std::string detail = std::string("archive save-load-save ") + (archive ? "identical" : "DIFFERS") +
                       " (f32, f16; baseline, full); CLI synth/train-toy/infer/eval/profile/gradcheck ";
  if (failed.empty()) {
    detail += "byte-identical under seed " + std::to_string(kDefaultSeed);
  } else {
    detail += "differ:";
    for (const auto& f : failed) detail += " " + f;
  }
  report("AC8", archive && failed.empty(), detail);
}

void ac9() {
  std::ifstream in(FIREAD_README_PATH);
  std::stringstream text;
  text << in.rdbuf();
  std::string flat;
  for (char ch : text.str()) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space || (!flat.empty() && flat.back() != ' ')) flat += space ? ' ' : ch;
  }
  const bool stated = flat.find("are not reproducible at desk scale") != std::string::npos &&
                      flat.find("never asserted by the test suite") != std::string::npos;
  report("AC9", stated,
         std::string("dataset precision/recall/mAP figures are not asserted by any test; README statement ") +
             (stated ? "present" : "MISSING"));
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / ("firead_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  try {
    ac1();
    ac2();
    ac3();
    ac4();
    ac5();
    ac6();
    ac7(dir / "train");
    ac8(dir / "cli");
    ac9();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    ++failures;
  }
  fs::remove_all(dir);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
