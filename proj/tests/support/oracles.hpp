#pragma once

// Naive reference implementations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <span>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "firead/box.hpp"
#include "firead/metrics.hpp"
#include "firead/nn.hpp"
#include "firead/rng.hpp"
#include "firead/tensor.hpp"

namespace firead::oracle {

inline double at(const std::vector<double>& v, const Shape& s, std::int64_t n, std::int64_t c, std::int64_t h,
                 std::int64_t w) {
  return v[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

inline std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline std::vector<double> naive_conv2d(const std::vector<double>& x, const Shape& xs, const Conv2dSpec& spec,
                                  const std::vector<double>& w, const std::vector<double>* bias, Shape& out) {
  const std::int64_t k = spec.kernel;
  const std::int64_t span = spec.dilation * (k - 1) + 1;
  out = {xs.n, spec.out_channels, (xs.h + 2 * spec.padding - span) / spec.stride + 1,
         (xs.w + 2 * spec.padding - span) / spec.stride + 1};
  const std::int64_t cin_g = spec.in_channels / spec.groups;
  const std::int64_t cout_g = spec.out_channels / spec.groups;
  const Shape ws = spec.weight_shape();
  std::vector<double> y;
  for (std::int64_t n = 0; n < out.n; ++n)
    for (std::int64_t oc = 0; oc < out.c; ++oc)
      for (std::int64_t oh = 0; oh < out.h; ++oh)
        for (std::int64_t ow = 0; ow < out.w; ++ow) {
          double acc = bias ? (*bias)[static_cast<std::size_t>(oc)] : 0.0;
          const std::int64_t g = oc / cout_g;
          for (std::int64_t ic = 0; ic < cin_g; ++ic)
            for (std::int64_t kh = 0; kh < k; ++kh)
              for (std::int64_t kw = 0; kw < k; ++kw) {
                const std::int64_t ih = oh * spec.stride - spec.padding + kh * spec.dilation;
                const std::int64_t iw = ow * spec.stride - spec.padding + kw * spec.dilation;
                if (ih < 0 || iw < 0 || ih >= xs.h || iw >= xs.w) continue;
                acc += at(x, xs, n, g * cin_g + ic, ih, iw) * at(w, ws, oc, ic, kh, kw);
              }
          y.push_back(acc);
        }
  return y;
}

/// Max ignores padded cells; average divides by k*k.
inline std::vector<double> naive_pool2d(const std::vector<double>& x, const Shape& xs, PoolKind kind, std::int64_t k,
                                  std::int64_t stride, std::int64_t pad, Shape& out) {
  out = {xs.n, xs.c, (xs.h + 2 * pad - k) / stride + 1, (xs.w + 2 * pad - k) / stride + 1};
  std::vector<double> y;
  for (std::int64_t n = 0; n < out.n; ++n)
    for (std::int64_t c = 0; c < out.c; ++c)
      for (std::int64_t oh = 0; oh < out.h; ++oh)
        for (std::int64_t ow = 0; ow < out.w; ++ow) {
          double best = -std::numeric_limits<double>::infinity(), acc = 0;
          for (std::int64_t kh = 0; kh < k; ++kh)
            for (std::int64_t kw = 0; kw < k; ++kw) {
              const std::int64_t ih = oh * stride - pad + kh, iw = ow * stride - pad + kw;
              if (ih < 0 || iw < 0 || ih >= xs.h || iw >= xs.w) continue;
              best = std::max(best, at(x, xs, n, c, ih, iw));
              acc += at(x, xs, n, c, ih, iw);
            }
          y.push_back(kind == PoolKind::max ? best : acc / static_cast<double>(k * k));
        }
  return y;
}

inline std::vector<double> naive_linear(const std::vector<double>& x, std::int64_t batch, std::int64_t in,
                                  const std::vector<double>& w, std::int64_t out, const std::vector<double>* bias) {
  std::vector<double> y;
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t o = 0; o < out; ++o) {
      double acc = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
      for (std::int64_t i = 0; i < in; ++i)
        acc += x[static_cast<std::size_t>(n * in + i)] * w[static_cast<std::size_t>(o * in + i)];
      y.push_back(acc);
    }
  return y;
}

inline std::vector<double> naive_partial_conv(const std::vector<double>& x, const Shape& xs, std::int64_t r,
                                        const std::vector<double>& w) {
  const std::int64_t cp = xs.c / r;
  std::vector<double> y = x;
  const Shape ws{cp, 1, 3, 3};
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t c = 0; c < cp; ++c)
      for (std::int64_t h = 0; h < xs.h; ++h)
        for (std::int64_t ww = 0; ww < xs.w; ++ww) {
          double acc = 0;
          for (std::int64_t kh = 0; kh < 3; ++kh)
            for (std::int64_t kw = 0; kw < 3; ++kw) {
              const std::int64_t ih = h - 1 + kh, iw = ww - 1 + kw;
              if (ih < 0 || iw < 0 || ih >= xs.h || iw >= xs.w) continue;
              acc += at(x, xs, n, c, ih, iw) * at(w, ws, c, 0, kh, kw);
            }
          y[static_cast<std::size_t>(((n * xs.c + c) * xs.h + h) * xs.w + ww)] = acc;
        }
  return y;
}

inline double max_abs_diff(const std::vector<double>& a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Quadratic greedy NMS: repeatedly take the best remaining detection and drop
/// every same-class detection overlapping it at or above the threshold.
inline std::vector<Detection> naive_nms(std::vector<Detection> dets, double iou_t) {
  std::vector<std::size_t> rank(dets.size());
  std::iota(rank.begin(), rank.end(), 0);
  std::vector<bool> alive(dets.size(), true);
  std::vector<Detection> keep;
  for (;;) {
    std::size_t best = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (!alive[i]) continue;
      if (best == dets.size() || dets[i].score > dets[best].score ||
          (dets[i].score == dets[best].score && dets[i].class_id < dets[best].class_id))
        best = i;
    }
    if (best == dets.size()) break;
    alive[best] = false;
    keep.push_back(dets[best]);
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (alive[i] && dets[i].class_id == dets[best].class_id && iou(dets[i].box, dets[best].box) >= iou_t)
        alive[i] = false;
  }
  return keep;
}

/// True positives among `dets` by brute-force greedy matching.
inline std::vector<bool> naive_match(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                               double iou_t) {
  std::vector<bool> done(dets.size(), false), tp(dets.size(), false), used(gts.size(), false);
  for (std::size_t step = 0; step < dets.size(); ++step) {
    std::size_t d = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (!done[i] && (d == dets.size() || dets[i].score > dets[d].score)) d = i;
    done[d] = true;
    std::size_t g_best = gts.size();
    double best = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image != dets[d].image || gts[g].class_id != dets[d].class_id) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= iou_t && (g_best == gts.size() || v > best)) {
        best = v;
        g_best = g;
      }
    }
    if (g_best < gts.size()) {
      used[g_best] = true;
      tp[d] = true;
    }
  }
  return tp;
}

inline PrF1 naive_pr_f1(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t,
                  double conf_t) {
  std::vector<Detection> kept;
  for (const auto& d : dets)
    if (d.score >= conf_t) kept.push_back(d);
  const auto tp = naive_match(kept, gts, iou_t);
  PrF1 r;
  r.true_positives = std::count(tp.begin(), tp.end(), true);
  r.false_positives = static_cast<std::int64_t>(kept.size()) - r.true_positives;
  r.false_negatives = static_cast<std::int64_t>(gts.size()) - r.true_positives;
  r.precision = kept.empty() ? 0.0 : static_cast<double>(r.true_positives) / static_cast<double>(kept.size());
  r.recall = gts.empty() ? 0.0 : static_cast<double>(r.true_positives) / static_cast<double>(gts.size());
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

/// 101-point AP by enumerating every distinct score as a cut-off and taking,
/// for each recall level, the best precision among cut-offs reaching it.
inline double naive_average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                double iou_t) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  if (classes.empty()) return 0.0;
  double total = 0;
  for (int cls : classes) {
    std::vector<Detection> cd;
    std::vector<GroundTruthBox> cg;
    for (const auto& d : dets)
      if (d.class_id == cls) cd.push_back(d);
    for (const auto& g : gts)
      if (g.class_id == cls) cg.push_back(g);
    std::set<double, std::greater<>> cutoffs;
    for (const auto& d : cd) cutoffs.insert(d.score);
    std::vector<std::pair<double, double>> points;  // (recall, precision)
    for (double s : cutoffs) {
      const PrF1 p = naive_pr_f1(cd, cg, iou_t, s);
      points.emplace_back(p.recall, p.precision);
    }
    double sum = 0;
    for (int i = 0; i <= 100; ++i) {
      const double r = i / 100.0;
      double best = 0;
      bool any = false;
      for (const auto& [rec, prec] : points)
        if (rec >= r) {
          best = any ? std::max(best, prec) : prec;
          any = true;
        }
      if (any) sum += best;
    }
    total += sum / 101.0;
  }
  return total / static_cast<double>(classes.size());
}

/// Small random detection problem on a coarse grid so that ties in score and
/// IoU are common.
struct MetricCase {
  std::vector<Detection> dets;
  std::vector<GroundTruthBox> gts;
};

inline MetricCase random_metric_case(Rng& rng, int max_dets = 5, int max_gts = 3) {
  auto box = [&] {
    const double w = 0.1 * static_cast<double>(1 + rng.below(4));
    const double h = 0.1 * static_cast<double>(1 + rng.below(4));
    return Box{0.1 * static_cast<double>(2 + rng.below(6)), 0.1 * static_cast<double>(2 + rng.below(6)), w, h};
  };
  static const char* kImages[] = {"a", "b"};
  MetricCase c;
  const auto nd = rng.below(static_cast<std::uint64_t>(max_dets + 1));
  const auto ng = rng.below(static_cast<std::uint64_t>(max_gts + 1));
  for (std::uint64_t i = 0; i < ng; ++i)
    c.gts.push_back({kImages[rng.below(2)], static_cast<int>(rng.below(2)), box()});
  for (std::uint64_t i = 0; i < nd; ++i) {
    Detection d{kImages[rng.below(2)], static_cast<int>(rng.below(2)), 0.1 * static_cast<double>(1 + rng.below(9)),
                box()};
    // Half the detections start from a ground truth so that matches occur.
    if (!c.gts.empty() && rng.below(2) == 0) {
      const auto& g = c.gts[rng.below(c.gts.size())];
      d.image = g.image;
      d.class_id = g.class_id;
      d.box = g.box;
      d.box.cx += 0.05 * (static_cast<double>(rng.below(3)) - 1.0);
    }
    c.dets.push_back(d);
  }
  return c;
}

}  // namespace firead::oracle
