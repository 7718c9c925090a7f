#include "firead/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <tuple>

namespace firead {

namespace {

using Key = std::tuple<std::string, int>;

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                   double iou_t) {
  std::map<Key, std::vector<std::size_t>> by_key;
  for (std::size_t g = 0; g < gts.size(); ++g) by_key[{gts[g].image, gts[g].class_id}].push_back(g);
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (std::size_t d : score_order(dets)) {
    auto it = by_key.find({dets[d].image, dets[d].class_id});
    if (it == by_key.end()) continue;
    double best = -1;
    std::size_t best_g = 0;
    for (std::size_t g : it->second) {
      if (used[g]) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= iou_t && v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best >= 0) {
      used[best_g] = true;
      tp[d] = true;
    }
  }
  return tp;
}

PrF1 pr_f1(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t, double conf_t) {
  std::vector<Detection> kept;
  for (const auto& d : dets)
    if (d.score >= conf_t) kept.push_back(d);
  const auto tp = match_detections(kept, gts, iou_t);
  PrF1 r;
  r.true_positives = std::count(tp.begin(), tp.end(), true);
  r.false_positives = static_cast<std::int64_t>(kept.size()) - r.true_positives;
  r.false_negatives = static_cast<std::int64_t>(gts.size()) - r.true_positives;
  r.precision = ratio(static_cast<double>(r.true_positives), static_cast<double>(kept.size()));
  r.recall = ratio(static_cast<double>(r.true_positives), static_cast<double>(gts.size()));
  r.f1 = ratio(2 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

ApResult average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  if (classes.empty()) return {0.0, true};

  double total = 0;
  for (int cls : classes) {
    std::vector<Detection> cd;
    std::vector<GroundTruthBox> cg;
    for (const auto& d : dets)
      if (d.class_id == cls) cd.push_back(d);
    for (const auto& g : gts)
      if (g.class_id == cls) cg.push_back(g);
    const auto tp = match_detections(cd, cg, iou_t);
    const auto order = score_order(cd);

    std::vector<double> prec, rec;
    std::int64_t ntp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      ntp += tp[order[k]] ? 1 : 0;
      const bool group_end = k + 1 == order.size() || cd[order[k + 1]].score != cd[order[k]].score;
      if (!group_end) continue;
      prec.push_back(static_cast<double>(ntp) / static_cast<double>(k + 1));
      rec.push_back(static_cast<double>(ntp) / static_cast<double>(cg.size()));
    }
    // Precision envelope: max precision at recall >= r.
    for (std::size_t k = prec.size(); k-- > 1;) prec[k - 1] = std::max(prec[k - 1], prec[k]);
    double sum = 0;
    std::size_t k = 0;
    for (int i = 0; i <= 100; ++i) {
      const double r = i / 100.0;
      while (k < rec.size() && rec[k] < r) ++k;
      if (k < rec.size()) sum += prec[k];
    }
    total += sum / 101.0;
  }
  return {total / static_cast<double>(classes.size()), false};
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> out;
  for (int k = 10; k <= 19; ++k) out.push_back(k / 20.0);
  return out;
}

EvalResult map_range(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t,
                     double conf_t) {
  EvalResult r;
  const PrF1 p = pr_f1(dets, gts, iou_t, conf_t);
  r.precision = p.precision;
  r.recall = p.recall;
  r.f1 = p.f1;
  double sum = 0;
  for (double t : coco_iou_thresholds()) {
    const ApResult ap = average_precision(dets, gts, t);
    r.no_ground_truth = ap.no_ground_truth;
    r.ap_per_threshold[t] = ap.ap;
    sum += ap.ap;
  }
  r.map50 = r.ap_per_threshold.at(0.5);
  r.map75 = r.ap_per_threshold.at(0.75);
  r.map50_95 = sum / 10.0;
  return r;
}

}  // namespace firead
