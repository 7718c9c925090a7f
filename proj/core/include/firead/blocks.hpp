#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "firead/attention.hpp"
#include "firead/nn.hpp"
#include "firead/tensor.hpp"

namespace firead {

/// Bias-free convolution followed by batch normalization.
template <typename T>
struct ConvBn {
  Conv2dSpec spec;
  Tensor<T> weight;
  BatchNorm<T> bn;

  static ConvBn make(const Conv2dSpec& spec, Rng& rng);
  std::int64_t out_channels() const { return spec.out_channels; }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    fn(prefix + ".conv.weight", weight, true);
    fn(prefix + ".bn.gamma", bn.gamma, true);
    fn(prefix + ".bn.beta", bn.beta, true);
    fn(prefix + ".bn.running_mean", bn.running_mean, false);
    fn(prefix + ".bn.running_var", bn.running_var, false);
  }
};

template <typename T>
Tensor<T> conv_bn(const Tensor<T>& x, const ConvBn<T>& p, Mode mode);

/// Conv -> BatchNorm -> SiLU.
template <typename T>
Tensor<T> cbs(const Tensor<T>& x, const ConvBn<T>& p, Mode mode);

/// Attention-guided bottleneck: 1x1 reduce to ceil(C/4) (BN, ReLU), depthwise
/// 3x3 (BN, ReLU), CAS attention at the reduced width, 1x1 restore (BN), and
/// an identity skip.
template <typename T>
struct AirBlockParams {
  std::int64_t channels = 0;
  ConvBn<T> reduce;
  ConvBn<T> dw;
  CasAttentionParams<T> attention;
  ConvBn<T> expand;
  bool use_residual = true;

  static AirBlockParams make(std::int64_t channels, Rng& rng, double dropout_p = 0.0);
  static std::int64_t reduced_width(std::int64_t channels) { return (channels + 3) / 4; }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    reduce.visit(prefix + ".reduce", fn);
    dw.visit(prefix + ".dw", fn);
    attention.visit(prefix + ".attn", fn);
    expand.visit(prefix + ".expand", fn);
  }
};

template <typename T>
Tensor<T> air(const Tensor<T>& x, const AirBlockParams<T>& p, Mode mode, Rng* rng = nullptr);

/// Dual-pool downscale fusion: max- and avg-pool paths, each refined by
/// partial conv (rate 4), spatial then channel calibration, fused as
/// a * max + (1 - a) * avg with a = sigmoid(alpha_raw); optional 1x1 Conv+BN
/// when the output width differs.
template <typename T>
struct DpdfBlockParams {
  static constexpr std::int64_t kPartialRate = 4;

  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  Tensor<T> pconv_max;  // (C/4, 1, 3, 3)
  Tensor<T> pconv_avg;
  SpatialCalibration<T> sa_max;
  SpatialCalibration<T> sa_avg;
  ChannelGate<T> ca_max;
  ChannelGate<T> ca_avg;
  Tensor<T> alpha_raw;  // (1, 1, 1, 1), initialized to 0
  std::optional<ConvBn<T>> project;

  static DpdfBlockParams make(std::int64_t in_channels, std::int64_t out_channels, Rng& rng);
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    fn(prefix + ".pconv_max.weight", pconv_max, true);
    sa_max.visit(prefix + ".sa_max", fn);
    ca_max.visit(prefix + ".ca_max", fn);
    fn(prefix + ".pconv_avg.weight", pconv_avg, true);
    sa_avg.visit(prefix + ".sa_avg", fn);
    ca_avg.visit(prefix + ".ca_avg", fn);
    fn(prefix + ".alpha_raw", alpha_raw, true);
    if (project) project->visit(prefix + ".project", fn);
  }
};

template <typename T>
struct DpdfOutputs {
  Tensor<T> path_max;
  Tensor<T> path_avg;
  Tensor<T> fused;   // before projection
  Tensor<T> output;  // after projection (== fused when absent)
};

template <typename T>
DpdfOutputs<T> dpdf_detailed(const Tensor<T>& x, const DpdfBlockParams<T>& p, Mode mode);

template <typename T>
Tensor<T> dpdf(const Tensor<T>& x, const DpdfBlockParams<T>& p, Mode mode) {
  return dpdf_detailed(x, p, mode).output;
}

// Baseline skeleton blocks (YOLOv8n-style), used when AIR/DPDF are disabled.

template <typename T>
struct BottleneckParams {
  ConvBn<T> cv1;
  ConvBn<T> cv2;
  bool shortcut = true;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    cv1.visit(prefix + ".cv1", fn);
    cv2.visit(prefix + ".cv2", fn);
  }
};

/// Split-concat bottleneck stack: cv1 to 2c, n 3x3 bottlenecks on the second
/// half, concat of all intermediate halves, cv2 to the output width.
template <typename T>
struct C2fParams {
  std::int64_t hidden = 0;
  ConvBn<T> cv1;
  ConvBn<T> cv2;
  std::vector<BottleneckParams<T>> blocks;

  static C2fParams make(std::int64_t in, std::int64_t out, std::int64_t repeats, bool shortcut, Rng& rng);
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    cv1.visit(prefix + ".cv1", fn);
    cv2.visit(prefix + ".cv2", fn);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".m" + std::to_string(i), fn);
  }
};

template <typename T>
Tensor<T> c2f(const Tensor<T>& x, const C2fParams<T>& p, Mode mode);

/// Spatial pyramid pooling (fast): three chained 5x5 stride-1 max pools.
template <typename T>
struct SppfParams {
  ConvBn<T> cv1;
  ConvBn<T> cv2;

  static SppfParams make(std::int64_t channels, Rng& rng);
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    cv1.visit(prefix + ".cv1", fn);
    cv2.visit(prefix + ".cv2", fn);
  }
};

template <typename T>
Tensor<T> sppf(const Tensor<T>& x, const SppfParams<T>& p, Mode mode);

/// Closed-form trainable parameter counts (BN running statistics excluded).
std::int64_t conv_bn_param_count(const Conv2dSpec& spec);
std::int64_t cas_param_count(std::int64_t channels);
std::int64_t air_param_count(std::int64_t channels);
std::int64_t dpdf_param_count(std::int64_t in_channels, std::int64_t out_channels);

#define FIREAD_EXTERN_BLOCKS(T)                                                                \
  extern template struct ConvBn<T>;                                                           \
  extern template struct AirBlockParams<T>;                                                   \
  extern template struct DpdfBlockParams<T>;                                                  \
  extern template struct C2fParams<T>;                                                        \
  extern template struct SppfParams<T>;                                                       \
  extern template Tensor<T> conv_bn(const Tensor<T>&, const ConvBn<T>&, Mode);                \
  extern template Tensor<T> cbs(const Tensor<T>&, const ConvBn<T>&, Mode);                    \
  extern template Tensor<T> air(const Tensor<T>&, const AirBlockParams<T>&, Mode, Rng*);      \
  extern template DpdfOutputs<T> dpdf_detailed(const Tensor<T>&, const DpdfBlockParams<T>&, Mode); \
  extern template Tensor<T> c2f(const Tensor<T>&, const C2fParams<T>&, Mode);                 \
  extern template Tensor<T> sppf(const Tensor<T>&, const SppfParams<T>&, Mode);

FIREAD_EXTERN_BLOCKS(float)
FIREAD_EXTERN_BLOCKS(double)
FIREAD_EXTERN_BLOCKS(long double)
#undef FIREAD_EXTERN_BLOCKS

}  // namespace firead
