#pragma once

#include <algorithm>
#include <string>

namespace firead {

/// Center-format box (cx, cy, w, h). Units are whatever the caller uses
/// (normalized [0,1] for detections, pixels inside the loss).
struct Box {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  double x1() const { return cx - w / 2; }
  double y1() const { return cy - h / 2; }
  double x2() const { return cx + w / 2; }
  double y2() const { return cy + h / 2; }
  double area() const { return w * h; }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
  }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  std::string image;
  int class_id = 0;
  double score = 0;
  Box box;
};

struct GroundTruthBox {
  std::string image;
  int class_id = 0;
  Box box;
};

/// Intersection over union in corner coordinates; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  const double uni = (a.x2() - a.x1()) * (a.y2() - a.y1()) + (b.x2() - b.x1()) * (b.y2() - b.y1()) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace firead
