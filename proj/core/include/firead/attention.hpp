#pragma once

#include <cstdint>
#include <string>

#include "firead/nn.hpp"
#include "firead/tensor.hpp"

namespace firead {

// Parameter structs expose visit(prefix, fn) which calls
// fn(name, tensor, trainable) for every named tensor they own.

/// Position gate: x * sigmoid(conv3x3(depthwise3x3(x))). Both convs are
/// bias-free and keep the spatial extent; the gate has x's full shape.
template <typename T>
struct SpatialGate {
  Tensor<T> dw;    // (C, 1, 3, 3)
  Tensor<T> conv;  // (C, C, 3, 3)

  static SpatialGate make(std::int64_t channels, Rng& rng);
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    fn(prefix + ".dw.weight", dw, true);
    fn(prefix + ".conv.weight", conv, true);
  }
};

/// Squeeze-excite style gate: x * sigmoid(fc2(relu(fc1(gap(x))))) with hidden
/// width ceil(C / 4).
template <typename T>
struct ChannelGate {
  Tensor<T> fc1_weight;  // (hidden, C, 1, 1)
  Tensor<T> fc1_bias;    // (1, hidden, 1, 1)
  Tensor<T> fc2_weight;  // (C, hidden, 1, 1)
  Tensor<T> fc2_bias;    // (1, C, 1, 1)

  static ChannelGate make(std::int64_t channels, Rng& rng);
  static std::int64_t hidden_width(std::int64_t channels) { return (channels + 3) / 4; }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    fn(prefix + ".fc1.weight", fc1_weight, true);
    fn(prefix + ".fc1.bias", fc1_bias, true);
    fn(prefix + ".fc2.weight", fc2_weight, true);
    fn(prefix + ".fc2.bias", fc2_bias, true);
  }
};

/// Convolutional additive self-attention over C channels.
template <typename T>
struct CasAttentionParams {
  std::int64_t channels = 0;
  Tensor<T> qkv;  // (3C, C, 1, 1), split contiguously as [Q | K | V]
  SpatialGate<T> q_spatial;
  SpatialGate<T> k_spatial;
  ChannelGate<T> q_channel;
  ChannelGate<T> k_channel;
  Tensor<T> out_dw;  // (C, 1, 3, 3)
  double dropout_p = 0.0;

  static CasAttentionParams make(std::int64_t channels, Rng& rng, double dropout_p = 0.0);
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    fn(prefix + ".qkv.weight", qkv, true);
    q_spatial.visit(prefix + ".q_spatial", fn);
    q_channel.visit(prefix + ".q_channel", fn);
    k_spatial.visit(prefix + ".k_spatial", fn);
    k_channel.visit(prefix + ".k_channel", fn);
    fn(prefix + ".out_dw.weight", out_dw, true);
  }
};

/// Spatial calibration mask built from the channel-mean and channel-max maps
/// by one 7x7 dilation-2 convolution (single output channel, with bias).
template <typename T>
struct SpatialCalibration {
  Tensor<T> weight;  // (1, 2, 7, 7)
  Tensor<T> bias;    // (1, 1, 1, 1)

  static SpatialCalibration make(Rng& rng);
  static Conv2dSpec conv_spec() { return {2, 1, 7, 1, 6, 2, 1, true}; }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    fn(prefix + ".conv.weight", weight, true);
    fn(prefix + ".conv.bias", bias, true);
  }
};

template <typename T>
Tensor<T> spatial_gate(const Tensor<T>& x, const SpatialGate<T>& gate);

template <typename T>
Tensor<T> channel_gate(const Tensor<T>& x, const ChannelGate<T>& gate);

/// Q, K, V = split(conv1x1(x)); Q' = channel(spatial(Q)); K' likewise;
/// out = dropout(depthwise3x3((Q' + K') * V)). No softmax.
template <typename T>
Tensor<T> cas_attention(const Tensor<T>& x, const CasAttentionParams<T>& params, Mode mode, Rng* rng = nullptr);

/// x * sigmoid(conv([mean_c(x); max_c(x)])), mask broadcast across channels.
template <typename T>
Tensor<T> sa_calibrate(const Tensor<T>& x, const SpatialCalibration<T>& sa);

/// Channel reweighting; same contract as channel_gate with its own parameters.
template <typename T>
Tensor<T> ca_calibrate(const Tensor<T>& x, const ChannelGate<T>& ca) {
  return channel_gate(x, ca);
}

/// Per-position maximum over channels, shape (N, 1, H, W). Gradient goes to
/// the first maximal channel.
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x);

#define FIREAD_EXTERN_ATTENTION(T)                                                                  \
  extern template struct SpatialGate<T>;                                                           \
  extern template struct ChannelGate<T>;                                                           \
  extern template struct CasAttentionParams<T>;                                                    \
  extern template struct SpatialCalibration<T>;                                                    \
  extern template Tensor<T> spatial_gate(const Tensor<T>&, const SpatialGate<T>&);                 \
  extern template Tensor<T> channel_gate(const Tensor<T>&, const ChannelGate<T>&);                 \
  extern template Tensor<T> cas_attention(const Tensor<T>&, const CasAttentionParams<T>&, Mode, Rng*); \
  extern template Tensor<T> sa_calibrate(const Tensor<T>&, const SpatialCalibration<T>&);          \
  extern template Tensor<T> channel_max(const Tensor<T>&);

FIREAD_EXTERN_ATTENTION(float)
FIREAD_EXTERN_ATTENTION(double)
FIREAD_EXTERN_ATTENTION(long double)
#undef FIREAD_EXTERN_ATTENTION

}  // namespace firead
