#include "firead/attention.hpp"

#include "firead/errors.hpp"

namespace firead {

namespace {

template <typename T>
Tensor<T> trainable(Tensor<T> t) {
  t.set_requires_grad(true);
  return t;
}

}  // namespace

template <typename T>
SpatialGate<T> SpatialGate<T>::make(std::int64_t channels, Rng& rng) {
  SpatialGate g;
  g.dw = trainable(Tensor<T>::kaiming({channels, 1, 3, 3}, 9, rng));
  g.conv = trainable(Tensor<T>::kaiming({channels, channels, 3, 3}, 9 * channels, rng));
  return g;
}

template <typename T>
ChannelGate<T> ChannelGate<T>::make(std::int64_t channels, Rng& rng) {
  const std::int64_t hidden = hidden_width(channels);
  ChannelGate g;
  g.fc1_weight = trainable(Tensor<T>::kaiming({hidden, channels, 1, 1}, channels, rng));
  g.fc1_bias = trainable(Tensor<T>::zeros({1, hidden, 1, 1}));
  g.fc2_weight = trainable(Tensor<T>::kaiming({channels, hidden, 1, 1}, hidden, rng));
  g.fc2_bias = trainable(Tensor<T>::zeros({1, channels, 1, 1}));
  return g;
}

template <typename T>
CasAttentionParams<T> CasAttentionParams<T>::make(std::int64_t channels, Rng& rng, double dropout_p) {
  CasAttentionParams p;
  p.channels = channels;
  p.qkv = trainable(Tensor<T>::kaiming({3 * channels, channels, 1, 1}, channels, rng));
  p.q_spatial = SpatialGate<T>::make(channels, rng);
  p.q_channel = ChannelGate<T>::make(channels, rng);
  p.k_spatial = SpatialGate<T>::make(channels, rng);
  p.k_channel = ChannelGate<T>::make(channels, rng);
  p.out_dw = trainable(Tensor<T>::kaiming({channels, 1, 3, 3}, 9, rng));
  p.dropout_p = dropout_p;
  return p;
}

template <typename T>
SpatialCalibration<T> SpatialCalibration<T>::make(Rng& rng) {
  SpatialCalibration sa;
  sa.weight = trainable(Tensor<T>::kaiming({1, 2, 7, 7}, 2 * 49, rng));
  sa.bias = trainable(Tensor<T>::zeros({1, 1, 1, 1}));
  return sa;
}

template <typename T>
Tensor<T> spatial_gate(const Tensor<T>& x, const SpatialGate<T>& gate) {
  const std::int64_t c = x.shape().c;
  auto h = conv2d(x, Conv2dSpec::depthwise(c, 3), gate.dw);
  auto logits = conv2d(h, Conv2dSpec::dense(c, c, 3), gate.conv);
  return mul(x, sigmoid(logits));
}

template <typename T>
Tensor<T> channel_gate(const Tensor<T>& x, const ChannelGate<T>& gate) {
  if (gate.fc1_weight.shape().c != x.shape().c)
    throw ShapeError("channel gate for " + std::to_string(gate.fc1_weight.shape().c) + " channels applied to " +
                     x.shape().str());
  auto squeezed = global_avg_pool(x);
  auto hidden = relu(linear(squeezed, gate.fc1_weight, &gate.fc1_bias));
  auto logits = linear(hidden, gate.fc2_weight, &gate.fc2_bias);
  return mul(x, sigmoid(logits));
}

template <typename T>
Tensor<T> cas_attention(const Tensor<T>& x, const CasAttentionParams<T>& params, Mode mode, Rng* rng) {
  const std::int64_t c = params.channels;
  if (x.shape().c != c)
    throw ShapeError("cas_attention for " + std::to_string(c) + " channels applied to " + x.shape().str());
  auto qkv = conv2d(x, Conv2dSpec::pointwise(c, 3 * c), params.qkv);
  auto q = slice_channels(qkv, 0, c);
  auto k = slice_channels(qkv, c, 2 * c);
  auto v = slice_channels(qkv, 2 * c, 3 * c);
  auto q_hat = channel_gate(spatial_gate(q, params.q_spatial), params.q_channel);
  auto k_hat = channel_gate(spatial_gate(k, params.k_spatial), params.k_channel);
  auto mixed = mul(add(q_hat, k_hat), v);
  auto out = conv2d(mixed, Conv2dSpec::depthwise(c, 3), params.out_dw);
  return dropout(out, params.dropout_p, mode, rng);
}

template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.c < 1) throw ShapeError("channel_max on zero channels " + s.str());
  const Shape o{s.n, 1, s.h, s.w};
  const std::int64_t plane = s.plane();
  const auto& in = x.data();
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  std::vector<std::int64_t> arg(out.size());
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < plane; ++i) {
      std::int64_t best = n * s.c * plane + i;
      for (std::int64_t c = 1; c < s.c; ++c) {
        const std::int64_t idx = (n * s.c + c) * plane + i;
        if (in[idx] > in[best]) best = idx;
      }
      out[n * plane + i] = in[best];
      arg[n * plane + i] = best;
    }
  return detail::make_result<T>(o, std::move(out), {x.node_ptr()}, [arg = std::move(arg)](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    for (std::size_t i = 0; i < arg.size(); ++i) xn.grad[static_cast<std::size_t>(arg[i])] += y.grad[i];
  });
}

template <typename T>
Tensor<T> sa_calibrate(const Tensor<T>& x, const SpatialCalibration<T>& sa) {
  const std::int64_t c = x.shape().c;
  auto pooled = concat_channels<T>({reduce(x, ReduceKind::mean, axis::c), channel_max(x)});
  auto mask = sigmoid(conv2d(pooled, SpatialCalibration<T>::conv_spec(), sa.weight, &sa.bias));
  // Broadcast the single-channel mask over every channel.
  return mul(x, concat_channels(std::vector<Tensor<T>>(static_cast<std::size_t>(c), mask)));
}

#define FIREAD_INSTANTIATE_ATTENTION(T)                                                      \
  template struct SpatialGate<T>;                                                           \
  template struct ChannelGate<T>;                                                           \
  template struct CasAttentionParams<T>;                                                    \
  template struct SpatialCalibration<T>;                                                    \
  template Tensor<T> spatial_gate(const Tensor<T>&, const SpatialGate<T>&);                 \
  template Tensor<T> channel_gate(const Tensor<T>&, const ChannelGate<T>&);                 \
  template Tensor<T> cas_attention(const Tensor<T>&, const CasAttentionParams<T>&, Mode, Rng*); \
  template Tensor<T> sa_calibrate(const Tensor<T>&, const SpatialCalibration<T>&);          \
  template Tensor<T> channel_max(const Tensor<T>&);

FIREAD_INSTANTIATE_ATTENTION(float)
FIREAD_INSTANTIATE_ATTENTION(double)
FIREAD_INSTANTIATE_ATTENTION(long double)

}  // namespace firead
