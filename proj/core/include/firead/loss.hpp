#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "firead/box.hpp"
#include "firead/model.hpp"
#include "firead/tensor.hpp"

namespace firead {

/// How the aspect weight alpha = v / ((1 - IoU) + v) enters the gradient.
/// `constant` treats it as a per-step constant (the usual training choice);
/// `exact` differentiates through it, which makes the loss a plain function
/// of the prediction and is what finite differences see.
enum class CiouAlpha { constant, exact };

/// CIoU = IoU - rho^2 / c^2 - alpha * v, with
/// v = 4 / pi^2 * (atan(w_b / h_b) - atan(w_a / h_a))^2. Predicted extents
/// below 1e-9 are clamped.
double ciou(const Box& pred, const Box& target);
inline double ciou_loss(const Box& pred, const Box& target) { return 1.0 - ciou(pred, target); }

struct CiouGradient {
  double value = 0;
  std::array<double, 4> d{};  // dCIoU / d(cx, cy, w, h) of the prediction
};
CiouGradient ciou_with_gradient(const Box& pred, const Box& target, CiouAlpha mode = CiouAlpha::constant);

/// Mean binary cross-entropy with logits, max(z, 0) - z t + log1p(exp(-|z|)).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets);

/// Positive cells of one image at one scale.
struct ScaleTargets {
  std::int64_t height = 0;
  std::int64_t width = 0;
  struct Positive {
    std::int64_t row = 0;
    std::int64_t col = 0;
    int class_id = 0;
    Box box;  // normalized
  };
  std::vector<Positive> positives;  // sorted by (row, col)
};

using ImageTargets = std::array<ScaleTargets, 3>;

/// Index (0, 1, 2 for strides 8, 16, 32) of the scale a box of this size is
/// assigned to: max side in pixels <= 64 -> 0, <= 128 -> 1, else 2.
int assign_scale(const Box& box, int input_size);

/// One positive per ground truth at the cell containing its center; when two
/// fall in the same cell the larger area stays (the earlier one on a tie).
ImageTargets assign(const std::vector<GroundTruthBox>& gts, const ModelConfig& config);

struct LossOptions {
  double lambda_box = 7.5;
  double lambda_cls = 0.5;
  CiouAlpha alpha = CiouAlpha::constant;
};

template <typename T>
struct LossOutput {
  Tensor<T> total;       // scalar, differentiable w.r.t. the maps
  double box_term = 0;   // lambda_box * mean CIoU loss over positives
  double cls_term = 0;   // lambda_cls * mean BCE over all cells and classes
  std::int64_t positives = 0;
};

/// `targets[n]` describes batch element n. Boxes are decoded exactly as in
/// decode() (ltrb = stride * softplus(raw)) but without clamping.
template <typename T>
LossOutput<T> detection_loss(const typename Model<T>::Maps& maps, const std::vector<ImageTargets>& targets,
                             int input_size, const LossOptions& options = {});

#define FIREAD_EXTERN_LOSS(T)                                                                        \
  extern template Tensor<T> bce_with_logits(const Tensor<T>&, const Tensor<T>&);                    \
  extern template LossOutput<T> detection_loss<T>(const Model<T>::Maps&, const std::vector<ImageTargets>&, \
                                                  int, const LossOptions&);

FIREAD_EXTERN_LOSS(float)
FIREAD_EXTERN_LOSS(double)
FIREAD_EXTERN_LOSS(long double)
#undef FIREAD_EXTERN_LOSS

}  // namespace firead
