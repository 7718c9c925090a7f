#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "firead/box.hpp"

namespace firead {

struct PrF1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::int64_t true_positives = 0;
  std::int64_t false_positives = 0;
  std::int64_t false_negatives = 0;
};

/// Greedy matching per (image, class): detections in descending score order
/// (ties keep input order) each take the unmatched ground truth with the
/// highest IoU >= iou_t (ties: earlier ground truth). Returns one flag per
/// detection, true for a match.
std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                   double iou_t);

/// Detections with score >= conf_t are matched; 0/0 ratios are 0.
PrF1 pr_f1(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t, double conf_t);

struct ApResult {
  double ap = 0;
  bool no_ground_truth = false;  // AP reported as 0
};

/// 101-point interpolated AP, averaged over classes that have ground truth.
/// The precision-recall curve has one point per distinct score.
ApResult average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t);

struct EvalResult {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::map<double, double> ap_per_threshold;  // IoU 0.50, 0.55, ..., 0.95
  double map50 = 0;
  double map75 = 0;
  double map50_95 = 0;
  bool no_ground_truth = false;
};

/// IoU thresholds 0.50:0.05:0.95 in ascending order.
std::vector<double> coco_iou_thresholds();

EvalResult map_range(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t = 0.5,
                     double conf_t = 0.25);

}  // namespace firead
