#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "firead/rng.hpp"
#include "firead/tensor.hpp"

namespace firead {

/// Square-kernel 2-D convolution geometry. Weight shape is
/// (out_channels, in_channels / groups, kernel, kernel).
struct Conv2dSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
  bool has_bias = false;

  static Conv2dSpec pointwise(std::int64_t in, std::int64_t out) { return {in, out, 1, 1, 0, 1, 1, false}; }
  /// k x k, "same" padding for stride 1.
  static Conv2dSpec dense(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1) {
    return {in, out, k, stride, k / 2, 1, 1, false};
  }
  static Conv2dSpec depthwise(std::int64_t channels, std::int64_t k = 3) {
    return {channels, channels, k, 1, k / 2, 1, channels, false};
  }

  /// Throws ContractError when the geometry is invalid.
  void validate() const;
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel, kernel}; }
  std::int64_t fan_in() const { return in_channels / groups * kernel * kernel; }
  /// Throws ShapeError on a channel mismatch or empty output.
  Shape output_shape(const Shape& input) const;
  std::int64_t macs(const Shape& input) const;
};

/// Cross-correlation (no kernel flip). `bias`, when present, is (1, out, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>* bias = nullptr);

/// Per-channel normalization state. gamma/beta are trainable; the running
/// statistics are buffers updated in train mode (unbiased variance) and used
/// in infer mode.
template <typename T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  /// gamma = 1, beta = 0, mean = 0, var = 1.
  static BatchNorm make(std::int64_t channels);
  std::int64_t channels() const { return gamma.shape().c; }
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const BatchNorm<T>& state, Mode mode);

enum class PoolKind { max, avg };

/// Output extent floor((H + 2p - k) / s) + 1. Max backward routes to the first
/// maximal element in row-major window order; avg spreads 1/k^2 (padding
/// counts toward the divisor).
template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, std::int64_t kernel = 2, std::int64_t stride = 2,
                 std::int64_t padding = 0);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor = 2);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

/// x is (N, Cin, 1, 1); weight is (Cout, Cin, 1, 1); bias is (1, Cout, 1, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr);

/// Inverted dropout. Identity in infer mode or when p == 0; `rng` is required
/// only when elements are actually dropped.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng* rng);

/// Depthwise 3x3 (stride 1, pad 1) on the first C/r channels, remaining
/// channels passed through unchanged, original channel order kept.
/// `dw_weight` is (C/r, 1, 3, 3).
template <typename T>
Tensor<T> partial_conv(const Tensor<T>& x, std::int64_t reduction, const Tensor<T>& dw_weight);

#define FIREAD_EXTERN_NN(T)                                                                                   \
  extern template Tensor<T> conv2d(const Tensor<T>&, const Conv2dSpec&, const Tensor<T>&, const Tensor<T>*); \
  extern template struct BatchNorm<T>;                                                                       \
  extern template Tensor<T> batch_norm(const Tensor<T>&, const BatchNorm<T>&, Mode);                         \
  extern template Tensor<T> pool2d(const Tensor<T>&, PoolKind, std::int64_t, std::int64_t, std::int64_t);    \
  extern template Tensor<T> global_avg_pool(const Tensor<T>&);                                               \
  extern template Tensor<T> upsample_nearest(const Tensor<T>&, std::int64_t);                                \
  extern template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                  \
  extern template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                    \
  extern template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng*);                                   \
  extern template Tensor<T> partial_conv(const Tensor<T>&, std::int64_t, const Tensor<T>&);

FIREAD_EXTERN_NN(float)
FIREAD_EXTERN_NN(double)
FIREAD_EXTERN_NN(long double)
#undef FIREAD_EXTERN_NN

}  // namespace firead
