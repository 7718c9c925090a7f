#pragma once

#include <string>
#include <vector>

#include "firead/box.hpp"
#include "firead/metrics.hpp"

namespace firead::tools {

// One JSON object per line:
//   detections:   {"image": str, "class_id": int, "score": num, "box": [cx, cy, w, h]}
//   ground truth: {"image": str, "class_id": int, "box": [cx, cy, w, h]}
// Boxes are normalized to the source image. Blank lines are ignored.

std::string detection_line(const Detection& d);
std::string ground_truth_line(const GroundTruthBox& g);

/// Throws FormatError("<source>:<line>: ...") on the first malformed line.
std::vector<Detection> parse_detections(const std::string& text, const std::string& source = "detections");
std::vector<GroundTruthBox> parse_ground_truth(const std::string& text, const std::string& source = "ground truth");

/// Human-readable metric block followed by a JSON summary line.
std::string format_eval(const EvalResult& r, double iou_t, double conf_t);

}  // namespace firead::tools
