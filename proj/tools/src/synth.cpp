#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "firead/errors.hpp"
#include "firead/rng.hpp"
#include "records.hpp"

namespace firead::tools {

namespace {

struct Blob {
  double cx, cy, rx, ry;
};

std::string sample_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%03d.ppm", i);
  return buf;
}

std::uint8_t byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

std::vector<SynthSample> generate_synth(const SynthOptions& opt) {
  if (opt.count < 1) throw ContractError("synth needs at least one image");
  if (opt.size < 32) throw ContractError("synth image size must be >= 32");
  Rng rng(opt.seed);
  const double s = opt.size;
  std::vector<SynthSample> out;
  for (int i = 0; i < opt.count; ++i) {
    SynthSample sample;
    sample.name = sample_name(i);
    Image& img = sample.image;
    img.width = opt.size;
    img.height = opt.size;
    img.rgb.resize(static_cast<std::size_t>(opt.size) * opt.size * 3);
    for (int y = 0; y < opt.size; ++y)
      for (int x = 0; x < opt.size; ++x) {
        img.at(x, y, 0) = byte(rng.uniform(10, 90));
        img.at(x, y, 1) = byte(rng.uniform(10, 90));
        img.at(x, y, 2) = byte(rng.uniform(10, 90));
      }

    const int wanted = 1 + static_cast<int>(rng.below(4));
    std::vector<Blob> blobs;
    for (int attempt = 0; attempt < 200 && static_cast<int>(blobs.size()) < wanted; ++attempt) {
      Blob b{0, 0, rng.uniform(0.06, 0.2) * s, rng.uniform(0.06, 0.2) * s};
      b.cx = rng.uniform(b.rx + 1, s - b.rx - 1);
      b.cy = rng.uniform(b.ry + 1, s - b.ry - 1);
      const bool clear = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
        return std::abs(b.cx - o.cx) > b.rx + o.rx + 2 || std::abs(b.cy - o.cy) > b.ry + o.ry + 2;
      });
      if (clear) blobs.push_back(b);
    }

    for (const Blob& b : blobs) {
      const double hue = rng.uniform(0, 1);
      int x1 = opt.size, y1 = opt.size, x2 = -1, y2 = -1;
      for (int y = 0; y < opt.size; ++y)
        for (int x = 0; x < opt.size; ++x) {
          const double dx = (x + 0.5 - b.cx) / b.rx, dy = (y + 0.5 - b.cy) / b.ry;
          const double d2 = dx * dx + dy * dy;
          if (d2 > 1) continue;
          const double core = 1 - d2;
          const double r = 225 + 30 * core;
          const double g = 90 + 60 * hue + 60 * core;
          const double bl = 20 + 40 * core * hue;
          img.at(x, y, 0) = byte(r);
          img.at(x, y, 1) = byte(std::min(g, r - 10));
          img.at(x, y, 2) = byte(std::min(bl, g - 10));
          x1 = std::min(x1, x);
          y1 = std::min(y1, y);
          x2 = std::max(x2, x);
          y2 = std::max(y2, y);
        }
      if (x2 < 0) continue;
      GroundTruthBox gt;
      gt.image = sample.name;
      gt.class_id = 0;
      gt.box = Box::from_corners(x1 / s, y1 / s, (x2 + 1) / s, (y2 + 1) / s);
      sample.boxes.push_back(gt);
    }
    if (sample.boxes.empty()) throw NumericError("synth image " + sample.name + " has no blob");
    const auto [inside, outside] = red_contrast(sample);
    if (!(inside > outside))
      throw NumericError("synth image " + sample.name + " violates red contrast (" + std::to_string(inside) +
                         " <= " + std::to_string(outside) + ")");
    out.push_back(std::move(sample));
  }
  return out;
}

std::pair<double, double> red_contrast(const SynthSample& sample) {
  const Image& img = sample.image;
  double in_sum = 0, out_sum = 0;
  std::int64_t in_n = 0, out_n = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double px = (x + 0.5) / img.width, py = (y + 0.5) / img.height;
      const bool inside = std::any_of(sample.boxes.begin(), sample.boxes.end(), [&](const GroundTruthBox& g) {
        return px >= g.box.x1() && px <= g.box.x2() && py >= g.box.y1() && py <= g.box.y2();
      });
      (inside ? in_sum : out_sum) += img.at(x, y, 0);
      ++(inside ? in_n : out_n);
    }
  return {in_n ? in_sum / static_cast<double>(in_n) : 0.0, out_n ? out_sum / static_cast<double>(out_n) : 0.0};
}

void write_synth(const std::vector<SynthSample>& samples, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  std::string gt;
  for (const auto& s : samples) {
    write_ppm((std::filesystem::path(dir) / s.name).string(), s.image);
    for (const auto& b : s.boxes) gt += ground_truth_line(b) + "\n";
  }
  write_text((std::filesystem::path(dir) / "gt.jsonl").string(), gt);
}

std::vector<SynthSample> read_synth(const std::string& dir) {
  const std::string gt_path = (std::filesystem::path(dir) / "gt.jsonl").string();
  const auto gts = parse_ground_truth(read_text(gt_path), gt_path);
  std::map<std::string, std::vector<GroundTruthBox>> by_image;
  for (const auto& g : gts) by_image[g.image].push_back(g);
  std::vector<SynthSample> out;
  for (auto& [name, boxes] : by_image) {
    SynthSample s;
    s.name = name;
    s.image = read_ppm((std::filesystem::path(dir) / name).string());
    s.boxes = std::move(boxes);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace firead::tools
