#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "firead/errors.hpp"
#include "firead/metrics.hpp"
#include "firead/model.hpp"
#include "firead/profiler.hpp"
#include "firead/weights.hpp"
#include "gradcheck_suite.hpp"
#include "image.hpp"
#include "records.hpp"
#include "synth.hpp"
#include "train.hpp"

namespace firead::tools {

namespace {

struct Common {
  std::string config;
  std::string weights;
  std::uint64_t seed = kDefaultSeed;
  std::string out;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Model config file (JSON object of ModelConfig fields)");
  cmd->add_option("--weights", c.weights, "Weight archive");
  cmd->add_option("--seed", c.seed, "Seed for initialization and sampling")->capture_default_str();
  cmd->add_option("--out", c.out, "Output path (stdout when omitted)");
  cmd->add_option("--threads", c.threads, "Worker threads")->capture_default_str()->check(CLI::Range(1, 256));
}

/// --config applied on top of the variant preset.
ModelConfig resolve_config(const Common& c, const std::string& variant, const ModelConfig& fallback) {
  ModelConfig base = variant.empty() ? fallback : ModelConfig::preset(parse_variant(variant));
  if (c.config.empty()) {
    base.validate();
    return base;
  }
  return parse_model_config(read_text(c.config), base);
}

void emit(const Common& c, std::ostream& out, const std::string& text) {
  if (c.out.empty()) {
    out << text;
    out.flush();
  } else {
    write_text(c.out, text);
  }
}

Model<float> make_model(const ModelConfig& cfg, const Common& c) {
  Rng rng(c.seed);
  Model<float> model = Model<float>::build(cfg, rng);
  if (!c.weights.empty()) load_weights(std::span<const std::uint8_t>(read_file(c.weights)), model);
  return model;
}

std::string fixed(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// infer ---------------------------------------------------------------------

struct InferArgs {
  std::vector<std::string> images;
  std::string variant;
  std::optional<double> score;
  std::optional<double> nms_iou;
};

int cmd_infer(const Common& c, const InferArgs& a, std::ostream& out, std::ostream& err) {
  const ModelConfig cfg = resolve_config(c, a.variant, ModelConfig::preset(Variant::full));
  const double score = a.score.value_or(cfg.score_threshold);
  const double nms_iou = a.nms_iou.value_or(cfg.nms_iou_threshold);
  const Model<float> model = make_model(cfg, c);

  struct Slot {
    std::string text;
    std::string error;
  };
  std::vector<Slot> slots(a.images.size());
  auto work = [&](std::size_t i) {
    const std::string& path = a.images[i];
    try {
      const Image img = read_ppm(path);
      const std::string name = std::filesystem::path(path).filename().string();
      for (const auto& d : detect(model, img, name, score, nms_iou)) slots[i].text += detection_line(d) + "\n";
    } catch (const std::exception& e) {
      slots[i].error = e.what();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(c.threads), a.images.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < a.images.size(); ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < a.images.size(); i += workers) work(i);
      });
  }

  std::string text;
  bool failed = false;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    text += slots[i].text;
    if (!slots[i].error.empty()) {
      err << a.images[i] << ": " << slots[i].error << "\n";
      failed = true;
    }
  }
  emit(c, out, text);
  return failed ? kExitIo : kExitOk;
}

// profile -------------------------------------------------------------------

struct ProfileArgs {
  std::string variant;
  std::optional<int> input;
  bool ablation = false;
  bool records = false;
};

int cmd_profile(const Common& c, const ProfileArgs& a, std::ostream& out) {
  ModelConfig cfg = resolve_config(c, a.variant, ModelConfig::preset(Variant::full));
  if (a.input) {
    cfg.input_size = *a.input;
    cfg.validate();
  }
  Rng rng(c.seed);
  const Model<float> model = Model<float>::build(cfg, rng);
  const ProfileReport report = profile(model, cfg.input_size);
  std::string text = a.records ? format_report_records(report) : format_report(report);
  if (a.ablation) {
    const auto rows = ablation_report(cfg, cfg.input_size);
    if (a.records) {
      for (const auto& r : rows) {
        nlohmann::json j = {{"variant", std::string(variant_name(r.variant))},
                            {"params", r.report.params},
                            {"macs", r.report.macs},
                            {"gflops", r.report.gflops},
                            {"input", r.report.input_size}};
        text += j.dump() + "\n";
      }
    } else {
      text += "\n" + format_ablation(rows);
    }
  }
  emit(c, out, text);
  return kExitOk;
}

// gradcheck -----------------------------------------------------------------

struct GradcheckArgs {
  std::string scope = "all";
  bool inject_fault = false;
};

int cmd_gradcheck(const Common& c, const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<std::string> scopes;
  if (a.scope == "all")
    scopes = gradcheck_scopes();
  else
    scopes = {a.scope};
  detail::set_backward_fault(a.inject_fault);
  std::string text;
  int total = 0, failed = 0;
  const auto start = std::chrono::steady_clock::now();
  auto on_result = [&](const GradUnitResult& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-10s %-40s %.3e  (< %.0e)  %s\n", r.scope.c_str(), r.name.c_str(),
                  r.max_relative_error, r.threshold, r.passed ? "ok" : "FAIL");
    text += buf;
    if (!r.error.empty()) text += "           error: " + r.error + "\n";
    if (c.out.empty()) out << buf << std::flush;
    ++total;
    if (!r.passed) ++failed;
  };
  try {
    for (const auto& s : scopes) run_gradcheck(s, c.seed, on_result);
  } catch (...) {
    detail::set_backward_fault(false);
    throw;
  }
  detail::set_backward_fault(false);
  const std::string summary = std::to_string(total) + " units, " + std::to_string(failed) + " failed\n";
  if (c.out.empty())
    out << summary;
  else
    write_text(c.out, text + summary);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  err << "gradcheck finished in " << fixed("%.1f", secs) << " s\n";
  return failed ? kExitCheck : kExitOk;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string detections;
  std::string gt;
  double iou = 0.5;
  double conf = 0.25;
};

int cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out) {
  const auto dets = parse_detections(read_text(a.detections), a.detections);
  const auto gts = parse_ground_truth(read_text(a.gt), a.gt);
  emit(c, out, format_eval(map_range(dets, gts, a.iou, a.conf), a.iou, a.conf));
  return kExitOk;
}

// synth ---------------------------------------------------------------------

struct SynthArgs {
  int count = 8;
  int size = 128;
};

int cmd_synth(const Common& c, const SynthArgs& a, std::ostream& out) {
  if (c.out.empty()) throw CLI::ValidationError("--out", "synth needs an output directory");
  SynthOptions opt;
  opt.count = a.count;
  opt.size = a.size;
  opt.seed = c.seed;
  const auto samples = generate_synth(opt);
  write_synth(samples, c.out);
  std::size_t boxes = 0;
  for (const auto& s : samples) boxes += s.boxes.size();
  out << "wrote " << samples.size() << " images, " << boxes << " boxes to " << c.out << "\n";
  return kExitOk;
}

// train-toy -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  int steps = 300;
  double lr = 0.002;
  std::string loss_log;
  bool eval = false;
};

int cmd_train(const Common& c, const TrainArgs& a, std::ostream& out) {
  if (c.out.empty()) throw CLI::ValidationError("--out", "train-toy needs a path for the trained weights");
  const ModelConfig cfg = resolve_config(c, "", toy_train_config());
  const auto samples = read_synth(a.data);
  TrainOptions opt;
  opt.steps = a.steps;
  opt.seed = c.seed;
  opt.optimizer.lr = a.lr;
  std::string log;
  opt.on_step = [&](int step, double loss) {
    const std::string line = "step " + std::to_string(step) + " loss " + fixed("%.6f", loss) + "\n";
    log += line;
    out << line << std::flush;
  };
  const TrainResult result = train_toy(cfg, samples, opt);
  write_file(c.out, save_weights(result.model));
  if (!a.loss_log.empty()) write_text(a.loss_log, log);
  const double first = result.losses.front(), last = result.losses.back();
  out << "final loss " << fixed("%.6f", last) << " (" << fixed("%.1f", 100.0 * last / first)
      << "% of step 1); weights written to " << c.out << "\n";
  if (a.eval) {
    std::vector<Detection> dets;
    std::vector<GroundTruthBox> gts;
    for (const auto& s : samples) {
      for (auto& d : detect(result.model, s.image, s.name, 0.001, cfg.nms_iou_threshold)) dets.push_back(d);
      gts.insert(gts.end(), s.boxes.begin(), s.boxes.end());
    }
    out << format_eval(map_range(dets, gts, 0.5, cfg.score_threshold), 0.5, cfg.score_threshold);
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FireAD flame detector"};
  app.name("firead");
  app.require_subcommand(1);
  Common common;

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "Detect objects in PPM images, one JSON record per detection");
  add_common(infer, common);
  infer->add_option("images", infer_args.images, "Binary PPM (P6) images")->required();
  infer->add_option("--variant", infer_args.variant, "Preset: baseline, air, dpdf, full (default full)");
  infer->add_option("--score", infer_args.score, "Score threshold (default from config)");
  infer->add_option("--nms-iou", infer_args.nms_iou, "NMS IoU threshold (default from config)");

  ProfileArgs profile_args;
  auto* prof = app.add_subcommand("profile", "Parameter and MAC counts per layer");
  add_common(prof, common);
  prof->add_option("--variant", profile_args.variant, "Preset: baseline, air, dpdf, full (default full)");
  prof->add_option("--input", profile_args.input, "Square input size (multiple of 32)");
  prof->add_flag("--ablation", profile_args.ablation, "Append the four-variant ablation grid");
  prof->add_flag("--records", profile_args.records, "One JSON object per layer instead of a table");

  GradcheckArgs grad_args;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  add_common(grad, common);
  grad->add_option("--scope", grad_args.scope, "primitives, blocks, model or all")
      ->capture_default_str()
      ->check(CLI::IsMember({"primitives", "blocks", "model", "all"}));
  grad->add_flag("--inject-backward-fault", grad_args.inject_fault)->group("");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Precision, recall, F1 and mAP of detection records");
  add_common(ev, common);
  ev->add_option("--detections", eval_args.detections, "Detection records")->required();
  ev->add_option("--gt", eval_args.gt, "Ground-truth records")->required();
  ev->add_option("--iou", eval_args.iou, "IoU threshold for P/R/F1")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  ev->add_option("--conf", eval_args.conf, "Score threshold for P/R/F1")->capture_default_str()->check(CLI::Range(0.0, 1.0));

  SynthArgs synth_args;
  auto* syn = app.add_subcommand("synth", "Generate a seeded synthetic flame dataset into --out");
  add_common(syn, common);
  syn->add_option("--count", synth_args.count, "Number of images")->capture_default_str()->check(CLI::Range(1, 10000));
  syn->add_option("--size", synth_args.size, "Image side in pixels")->capture_default_str()->check(CLI::Range(32, 4096));

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train-toy", "Full-batch training on a synthetic dataset; weights to --out");
  add_common(tr, common);
  tr->add_option("--data", train_args.data, "Directory written by synth")->required();
  tr->add_option("--steps", train_args.steps, "Optimizer steps")->capture_default_str()->check(CLI::Range(1, 1000000));
  tr->add_option("--lr", train_args.lr, "Learning rate")->capture_default_str()->check(CLI::Range(0.0, 10.0));
  tr->add_option("--loss-log", train_args.loss_log, "Write the per-step loss curve here");
  tr->add_flag("--eval", train_args.eval, "Evaluate on the training images afterwards");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*infer) return cmd_infer(common, infer_args, out, err);
    if (*prof) return cmd_profile(common, profile_args, out);
    if (*grad) return cmd_gradcheck(common, grad_args, out, err);
    if (*ev) return cmd_eval(common, eval_args, out);
    if (*syn) return cmd_synth(common, synth_args, out);
    if (*tr) return cmd_train(common, train_args, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace firead::tools
