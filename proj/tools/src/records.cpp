#include "records.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "firead/errors.hpp"

namespace firead::tools {

namespace {

using Json = nlohmann::ordered_json;

Json box_json(const Box& b) { return Json::array({b.cx, b.cy, b.w, b.h}); }

template <typename Fn>
void for_each_line(const std::string& text, const std::string& source, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(number) + ": ";
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + "not valid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw FormatError(where + "expected an object");
    try {
      fn(j, where);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + e.what());
    }
  }
}

Box parse_box(const Json& j, const std::string& where) {
  const auto& b = j.at("box");
  if (!b.is_array() || b.size() != 4) throw FormatError(where + "box must be [cx, cy, w, h]");
  Box box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (!std::isfinite(box.cx) || !std::isfinite(box.cy) || !(box.w > 0) || !(box.h > 0) || !std::isfinite(box.w) ||
      !std::isfinite(box.h))
    throw FormatError(where + "box needs finite center and positive extents");
  return box;
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw FormatError(where + "unknown key '" + key + "'");
  }
}

}  // namespace

std::string detection_line(const Detection& d) {
  Json j;
  j["image"] = d.image;
  j["class_id"] = d.class_id;
  j["score"] = d.score;
  j["box"] = box_json(d.box);
  return j.dump();
}

std::string ground_truth_line(const GroundTruthBox& g) {
  Json j;
  j["image"] = g.image;
  j["class_id"] = g.class_id;
  j["box"] = box_json(g.box);
  return j.dump();
}

std::vector<Detection> parse_detections(const std::string& text, const std::string& source) {
  std::vector<Detection> out;
  for_each_line(text, source, [&](const Json& j, const std::string& where) {
    check_keys(j, {"image", "class_id", "score", "box"}, where);
    Detection d;
    d.image = j.at("image").get<std::string>();
    d.class_id = j.at("class_id").get<int>();
    d.score = j.at("score").get<double>();
    if (!(d.score >= 0 && d.score <= 1)) throw FormatError(where + "score must lie in [0, 1]");
    if (d.class_id < 0) throw FormatError(where + "class_id must be >= 0");
    d.box = parse_box(j, where);
    out.push_back(std::move(d));
  });
  return out;
}

std::vector<GroundTruthBox> parse_ground_truth(const std::string& text, const std::string& source) {
  std::vector<GroundTruthBox> out;
  for_each_line(text, source, [&](const Json& j, const std::string& where) {
    check_keys(j, {"image", "class_id", "box"}, where);
    GroundTruthBox g;
    g.image = j.at("image").get<std::string>();
    g.class_id = j.at("class_id").get<int>();
    if (g.class_id < 0) throw FormatError(where + "class_id must be >= 0");
    g.box = parse_box(j, where);
    out.push_back(std::move(g));
  });
  return out;
}

std::string format_eval(const EvalResult& r, double iou_t, double conf_t) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "precision  %.6f  (IoU >= %.2f, score >= %.2f)\n", r.precision, iou_t, conf_t);
  os << buf;
  std::snprintf(buf, sizeof buf, "recall     %.6f\nf1         %.6f\n", r.recall, r.f1);
  os << buf;
  std::snprintf(buf, sizeof buf, "mAP50      %.6f\nmAP75      %.6f\nmAP50-95   %.6f\n", r.map50, r.map75, r.map50_95);
  os << buf;
  if (r.no_ground_truth) os << "warning: no ground-truth boxes, AP reported as 0\n";
  Json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["map50"] = r.map50;
  j["map75"] = r.map75;
  j["map50_95"] = r.map50_95;
  Json per = Json::object();
  for (const auto& [t, ap] : r.ap_per_threshold) {
    std::snprintf(buf, sizeof buf, "%.2f", t);
    per[buf] = ap;
  }
  j["ap"] = per;
  j["no_ground_truth"] = r.no_ground_truth;
  os << j.dump() << "\n";
  return os.str();
}

}  // namespace firead::tools
