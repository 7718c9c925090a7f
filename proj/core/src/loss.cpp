#include "firead/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <type_traits>

#include "firead/errors.hpp"

namespace firead {

namespace {

// Forward-mode number carrying derivatives w.r.t. the four predicted box
// coordinates.
template <typename R>
struct Dual {
  R v = 0;
  std::array<R, 4> d{};

  Dual() = default;
  Dual(R value) : v(value) {}  // NOLINT: constants promote implicitly
  static Dual var(R value, int i) {
    Dual x(value);
    x.d[static_cast<std::size_t>(i)] = 1;
    return x;
  }
};

template <typename R>
Dual<R> operator+(const Dual<R>& a, const Dual<R>& b) {
  Dual<R> r(a.v + b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
template <typename R>
Dual<R> operator-(const Dual<R>& a, const Dual<R>& b) {
  Dual<R> r(a.v - b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
template <typename R>
Dual<R> operator*(const Dual<R>& a, const Dual<R>& b) {
  Dual<R> r(a.v * b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
template <typename R>
Dual<R> operator/(const Dual<R>& a, const Dual<R>& b) {
  Dual<R> r(a.v / b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
template <typename R>
Dual<R> atan_of(const Dual<R>& a) {
  Dual<R> r(std::atan(a.v));
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] / (1 + a.v * a.v);
  return r;
}
// Ties pick the first argument.
template <typename R>
Dual<R> min_of(const Dual<R>& a, const Dual<R>& b) { return b.v < a.v ? b : a; }
template <typename R>
Dual<R> max_of(const Dual<R>& a, const Dual<R>& b) { return b.v > a.v ? b : a; }
template <typename R>
Dual<R> value_only(const Dual<R>& a) { return Dual<R>(a.v); }
template <typename R>
R value_of(const Dual<R>& x) { return x.v; }

template <typename R>
  requires std::is_floating_point_v<R>
R value_of(R x) { return x; }
template <typename R>
  requires std::is_floating_point_v<R>
R min_of(R a, R b) { return std::min(a, b); }
template <typename R>
  requires std::is_floating_point_v<R>
R max_of(R a, R b) { return std::max(a, b); }
template <typename R>
  requires std::is_floating_point_v<R>
R atan_of(R a) { return std::atan(a); }
template <typename R>
  requires std::is_floating_point_v<R>
R value_only(R a) { return a; }

constexpr double kMinExtent = 1e-9;

// S is a floating type or Dual<R>; the target box enters as constants.
template <typename S>
S ciou_impl(S cx, S cy, S w, S h, const Box& b, CiouAlpha mode) {
  if (value_of(w) < kMinExtent) w = S(kMinExtent);
  if (value_of(h) < kMinExtent) h = S(kMinExtent);
  const S half(0.5);
  const S ax1 = cx - w * half, ax2 = cx + w * half;
  const S ay1 = cy - h * half, ay2 = cy + h * half;
  const S bx1(b.x1()), bx2(b.x2()), by1(b.y1()), by2(b.y2());
  const S zero(0.0);

  const S iw = max_of(zero, min_of(ax2, bx2) - max_of(ax1, bx1));
  const S ih = max_of(zero, min_of(ay2, by2) - max_of(ay1, by1));
  const S inter = iw * ih;
  const S uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  const S iou = inter / uni;

  const S cw = max_of(ax2, bx2) - min_of(ax1, bx1);
  const S ch = max_of(ay2, by2) - min_of(ay1, by1);
  const S c2 = cw * cw + ch * ch;
  const S dx = cx - S(b.cx), dy = cy - S(b.cy);
  const S rho2 = dx * dx + dy * dy;

  const S dv = S(std::atan(b.w / b.h)) - atan_of(w / h);
  const S v = S(4.0 / (std::numbers::pi * std::numbers::pi)) * dv * dv;
  const S denom = (S(1.0) - iou) + v;
  S alpha = value_of(denom) > 0 ? v / denom : zero;
  if (mode == CiouAlpha::constant) alpha = value_only(alpha);
  return iou - rho2 / c2 - alpha * v;
}

template <typename R>
Dual<R> ciou_dual(R cx, R cy, R w, R h, const Box& target, CiouAlpha mode) {
  return ciou_impl<Dual<R>>(Dual<R>::var(cx, 0), Dual<R>::var(cy, 1), Dual<R>::var(w, 2), Dual<R>::var(h, 3),
                            target, mode);
}

template <typename T>
std::vector<T> sigmoid_values(const std::vector<T>& z) {
  std::vector<T> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-z[i]));
  return out;
}

template <typename R>
R stable_bce(R z, R t) {
  return std::max(z, R(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
}
template <typename R>
R softplus_of(R v) { return v > 20 ? v : std::log1p(std::exp(v)); }
template <typename R>
R sigmoid_of(R v) { return R(1) / (R(1) + std::exp(-v)); }

}  // namespace

double ciou(const Box& pred, const Box& target) {
  return ciou_impl<double>(pred.cx, pred.cy, pred.w, pred.h, target, CiouAlpha::constant);
}

CiouGradient ciou_with_gradient(const Box& pred, const Box& target, CiouAlpha mode) {
  const auto r = ciou_dual(pred.cx, pred.cy, pred.w, pred.h, target, mode);
  return {r.v, r.d};
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce shapes differ: " + logits.shape().str() + " vs " + targets.shape().str());
  const auto z = logits.data();
  const auto t = targets.data();
  const std::size_t count = z.size();
  if (count == 0) throw ShapeError("bce of an empty tensor");
  using Acc = detail::accum_t<T>;
  Acc acc = 0;
  for (std::size_t i = 0; i < count; ++i) acc += stable_bce(static_cast<Acc>(z[i]), static_cast<Acc>(t[i]));
  std::vector<T> out{static_cast<T>(acc / static_cast<Acc>(count))};
  return detail::make_result<T>({1, 1, 1, 1}, std::move(out), {logits.node_ptr(), targets.node_ptr()},
                                [count](detail::Node<T>& y) {
                                  auto& zn = *y.inputs[0];
                                  auto& tn = *y.inputs[1];
                                  const T g = y.grad[0] / static_cast<T>(count);
                                  if (zn.requires_grad) {
                                    zn.ensure_grad();
                                    const auto s = sigmoid_values<T>(zn.data);
                                    for (std::size_t i = 0; i < count; ++i) zn.grad[i] += g * (s[i] - tn.data[i]);
                                  }
                                  if (tn.requires_grad) {
                                    tn.ensure_grad();
                                    for (std::size_t i = 0; i < count; ++i) tn.grad[i] -= g * zn.data[i];
                                  }
                                });
}

int assign_scale(const Box& box, int input_size) {
  const double side = std::max(box.w, box.h) * input_size;
  if (side <= 64) return 0;
  if (side <= 128) return 1;
  return 2;
}

ImageTargets assign(const std::vector<GroundTruthBox>& gts, const ModelConfig& config) {
  ImageTargets out;
  for (std::size_t s = 0; s < 3; ++s) {
    out[s].height = config.input_size / ModelConfig::kStrides[s];
    out[s].width = out[s].height;
  }
  for (const auto& gt : gts) {
    if (gt.class_id < 0 || gt.class_id >= config.num_classes)
      throw ContractError("ground-truth class " + std::to_string(gt.class_id) + " outside [0, " +
                          std::to_string(config.num_classes) + ")");
    ScaleTargets& st = out[static_cast<std::size_t>(assign_scale(gt.box, config.input_size))];
    const auto cell = [](double v, std::int64_t n) {
      return std::clamp(static_cast<std::int64_t>(std::floor(v * static_cast<double>(n))), std::int64_t{0}, n - 1);
    };
    ScaleTargets::Positive p{cell(gt.box.cy, st.height), cell(gt.box.cx, st.width), gt.class_id, gt.box};
    auto it = std::find_if(st.positives.begin(), st.positives.end(),
                           [&](const auto& q) { return q.row == p.row && q.col == p.col; });
    if (it == st.positives.end())
      st.positives.push_back(p);
    else if (p.box.area() > it->box.area())
      *it = p;
  }
  for (auto& st : out)
    std::sort(st.positives.begin(), st.positives.end(),
              [](const auto& a, const auto& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  return out;
}

template <typename T>
LossOutput<T> detection_loss(const typename Model<T>::Maps& maps, const std::vector<ImageTargets>& targets,
                             int input_size, const LossOptions& options) {
  const std::int64_t batch = maps[0].shape().n;
  if (static_cast<std::int64_t>(targets.size()) != batch)
    throw ContractError("detection_loss got " + std::to_string(targets.size()) + " target sets for batch " +
                        std::to_string(batch));
  std::int64_t cls_count = 0;
  std::int64_t positives = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    const Shape s = maps[l].shape();
    const std::int64_t expect = input_size / ModelConfig::kStrides[l];
    if (s.n != batch || s.c < 5 || s.h != expect || s.w != expect)
      throw ShapeError("detection_loss map " + std::to_string(l) + " has shape " + s.str() + ", expected side " +
                       std::to_string(expect));
    cls_count += s.n * (s.c - 4) * s.h * s.w;
    for (const auto& t : targets) positives += static_cast<std::int64_t>(t[l].positives.size());
  }

  using Acc = detail::accum_t<T>;
  std::array<std::vector<Acc>, 3> grads;
  Acc cls_sum = 0;
  Acc box_sum = 0;
  const Acc cls_scale = static_cast<Acc>(options.lambda_cls) / static_cast<Acc>(cls_count);
  const Acc box_scale = positives > 0 ? static_cast<Acc>(options.lambda_box) / static_cast<Acc>(positives) : Acc(0);

  for (std::size_t l = 0; l < 3; ++l) {
    const Shape s = maps[l].shape();
    const auto data = maps[l].data();
    auto& g = grads[l];
    g.assign(data.size(), Acc(0));
    const std::int64_t plane = s.h * s.w;
    const Acc stride = static_cast<Acc>(ModelConfig::kStrides[l]);
    for (std::int64_t n = 0; n < s.n; ++n) {
      const auto& pos = targets[static_cast<std::size_t>(n)][l];
      if (pos.height != s.h || pos.width != s.w)
        throw ShapeError("targets for scale " + std::to_string(l) + " do not match map " + s.str());
      std::vector<int> cell_class(static_cast<std::size_t>(plane), -1);
      for (const auto& p : pos.positives) cell_class[static_cast<std::size_t>(p.row * s.w + p.col)] = p.class_id;

      for (std::int64_t k = 4; k < s.c; ++k) {
        const std::size_t base = static_cast<std::size_t>((n * s.c + k) * plane);
        for (std::int64_t q = 0; q < plane; ++q) {
          const Acc z = static_cast<Acc>(data[base + static_cast<std::size_t>(q)]);
          const Acc t = cell_class[static_cast<std::size_t>(q)] == k - 4 ? Acc(1) : Acc(0);
          cls_sum += stable_bce(z, t);
          g[base + static_cast<std::size_t>(q)] = cls_scale * (sigmoid_of(z) - t);
        }
      }

      for (const auto& p : pos.positives) {
        const std::size_t cellq = static_cast<std::size_t>(p.row * s.w + p.col);
        std::array<std::size_t, 4> idx{};
        std::array<Acc, 4> raw{};
        for (std::size_t c = 0; c < 4; ++c) {
          idx[c] = static_cast<std::size_t>((n * s.c + static_cast<std::int64_t>(c)) * plane) + cellq;
          raw[c] = static_cast<Acc>(data[idx[c]]);
        }
        const Acc ccx = (static_cast<Acc>(p.col) + Acc(0.5)) * stride;
        const Acc ccy = (static_cast<Acc>(p.row) + Acc(0.5)) * stride;
        std::array<Acc, 4> sp{};
        for (std::size_t c = 0; c < 4; ++c) sp[c] = softplus_of(raw[c]);
        const double px = static_cast<double>(input_size);
        const Box gt{p.box.cx * px, p.box.cy * px, p.box.w * px, p.box.h * px};
        const auto cg = ciou_dual<Acc>(ccx + stride * (sp[2] - sp[0]) / 2, ccy + stride * (sp[3] - sp[1]) / 2,
                                       stride * (sp[0] + sp[2]), stride * (sp[1] + sp[3]), gt, options.alpha);
        box_sum += Acc(1) - cg.v;
        // d loss / d (cx, cy, w, h)
        const Acc dcx = -cg.d[0] * box_scale, dcy = -cg.d[1] * box_scale;
        const Acc dw = -cg.d[2] * box_scale, dh = -cg.d[3] * box_scale;
        g[idx[0]] += sigmoid_of(raw[0]) * stride * (-dcx / 2 + dw);
        g[idx[2]] += sigmoid_of(raw[2]) * stride * (dcx / 2 + dw);
        g[idx[1]] += sigmoid_of(raw[1]) * stride * (-dcy / 2 + dh);
        g[idx[3]] += sigmoid_of(raw[3]) * stride * (dcy / 2 + dh);
      }
    }
  }

  LossOutput<T> out;
  out.positives = positives;
  const Acc cls_term = cls_scale * cls_sum;
  const Acc box_term = box_scale * box_sum;
  out.cls_term = static_cast<double>(cls_term);
  out.box_term = static_cast<double>(box_term);
  std::vector<T> value{static_cast<T>(cls_term + box_term)};
  out.total = detail::make_result<T>(
      {1, 1, 1, 1}, std::move(value), {maps[0].node_ptr(), maps[1].node_ptr(), maps[2].node_ptr()},
      [grads = std::move(grads)](detail::Node<T>& y) {
        const Acc up = static_cast<Acc>(y.grad[0]);
        for (std::size_t l = 0; l < 3; ++l) {
          auto& m = *y.inputs[l];
          if (!m.requires_grad) continue;
          m.ensure_grad();
          for (std::size_t i = 0; i < grads[l].size(); ++i) m.grad[i] += static_cast<T>(up * grads[l][i]);
        }
      });
  return out;
}

#define FIREAD_INSTANTIATE_LOSS(T)                                                                               \
  template Tensor<T> bce_with_logits(const Tensor<T>&, const Tensor<T>&);                                      \
  template LossOutput<T> detection_loss<T>(const Model<T>::Maps&, const std::vector<ImageTargets>&, int, \
                                           const LossOptions&);

FIREAD_INSTANTIATE_LOSS(float)
FIREAD_INSTANTIATE_LOSS(double)
FIREAD_INSTANTIATE_LOSS(long double)

}  // namespace firead
