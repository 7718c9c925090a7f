#include "firead/blocks.hpp"

#include "firead/errors.hpp"

namespace firead {

template <typename T>
ConvBn<T> ConvBn<T>::make(const Conv2dSpec& spec, Rng& rng) {
  spec.validate();
  ConvBn p;
  p.spec = spec;
  p.spec.has_bias = false;
  p.weight = Tensor<T>::kaiming(spec.weight_shape(), spec.fan_in(), rng);
  p.weight.set_requires_grad(true);
  p.bn = BatchNorm<T>::make(spec.out_channels);
  return p;
}

template <typename T>
Tensor<T> conv_bn(const Tensor<T>& x, const ConvBn<T>& p, Mode mode) {
  return batch_norm(conv2d(x, p.spec, p.weight), p.bn, mode);
}

template <typename T>
Tensor<T> cbs(const Tensor<T>& x, const ConvBn<T>& p, Mode mode) {
  return silu(conv_bn(x, p, mode));
}

template <typename T>
AirBlockParams<T> AirBlockParams<T>::make(std::int64_t channels, Rng& rng, double dropout_p) {
  const std::int64_t q = reduced_width(channels);
  AirBlockParams p;
  p.channels = channels;
  p.reduce = ConvBn<T>::make(Conv2dSpec::pointwise(channels, q), rng);
  p.dw = ConvBn<T>::make(Conv2dSpec::depthwise(q, 3), rng);
  p.attention = CasAttentionParams<T>::make(q, rng, dropout_p);
  p.expand = ConvBn<T>::make(Conv2dSpec::pointwise(q, channels), rng);
  p.use_residual = true;
  return p;
}

template <typename T>
Tensor<T> air(const Tensor<T>& x, const AirBlockParams<T>& p, Mode mode, Rng* rng) {
  const Shape s = x.shape();
  if (s.c != p.channels)
    throw ShapeError("AIR block for " + std::to_string(p.channels) + " channels applied to " + s.str());
  if (s.h < 3 || s.w < 3) throw ShapeError("AIR block needs H, W >= 3, got " + s.str());
  auto h = relu(conv_bn(x, p.reduce, mode));
  h = relu(conv_bn(h, p.dw, mode));
  h = cas_attention(h, p.attention, mode, rng);
  auto y = conv_bn(h, p.expand, mode);
  return p.use_residual ? add(y, x) : y;
}

template <typename T>
DpdfBlockParams<T> DpdfBlockParams<T>::make(std::int64_t in_channels, std::int64_t out_channels, Rng& rng) {
  if (in_channels % kPartialRate != 0)
    throw ContractError("DPDF input channels " + std::to_string(in_channels) + " not divisible by 4");
  const std::int64_t active = in_channels / kPartialRate;
  DpdfBlockParams p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.pconv_max = Tensor<T>::kaiming({active, 1, 3, 3}, 9, rng).set_requires_grad(true);
  p.sa_max = SpatialCalibration<T>::make(rng);
  p.ca_max = ChannelGate<T>::make(in_channels, rng);
  p.pconv_avg = Tensor<T>::kaiming({active, 1, 3, 3}, 9, rng).set_requires_grad(true);
  p.sa_avg = SpatialCalibration<T>::make(rng);
  p.ca_avg = ChannelGate<T>::make(in_channels, rng);
  p.alpha_raw = Tensor<T>::zeros({1, 1, 1, 1});
  p.alpha_raw.set_requires_grad(true);
  if (out_channels != in_channels) p.project = ConvBn<T>::make(Conv2dSpec::pointwise(in_channels, out_channels), rng);
  return p;
}

template <typename T>
DpdfOutputs<T> dpdf_detailed(const Tensor<T>& x, const DpdfBlockParams<T>& p, Mode mode) {
  const Shape s = x.shape();
  if (s.c != p.in_channels)
    throw ShapeError("DPDF block for " + std::to_string(p.in_channels) + " channels applied to " + s.str());
  if (s.c % DpdfBlockParams<T>::kPartialRate != 0)
    throw ContractError("DPDF needs channels divisible by 4, got " + s.str());
  if (s.h < 2 || s.w < 2 || s.h % 2 != 0 || s.w % 2 != 0)
    throw ContractError("DPDF needs even H, W >= 2, got " + s.str());

  constexpr std::int64_t rate = DpdfBlockParams<T>::kPartialRate;
  DpdfOutputs<T> out;
  out.path_max = ca_calibrate(sa_calibrate(partial_conv(pool2d(x, PoolKind::max, 2, 2), rate, p.pconv_max), p.sa_max),
                              p.ca_max);
  out.path_avg = ca_calibrate(sa_calibrate(partial_conv(pool2d(x, PoolKind::avg, 2, 2), rate, p.pconv_avg), p.sa_avg),
                              p.ca_avg);
  auto alpha = sigmoid(p.alpha_raw);
  out.fused = add(mul(out.path_max, alpha), mul(out.path_avg, affine(alpha, T(-1), T(1))));
  out.output = p.project ? conv_bn(out.fused, *p.project, mode) : out.fused;
  return out;
}

template <typename T>
C2fParams<T> C2fParams<T>::make(std::int64_t in, std::int64_t out, std::int64_t repeats, bool shortcut, Rng& rng) {
  C2fParams p;
  p.hidden = out / 2;
  p.cv1 = ConvBn<T>::make(Conv2dSpec::pointwise(in, 2 * p.hidden), rng);
  p.cv2 = ConvBn<T>::make(Conv2dSpec::pointwise((2 + repeats) * p.hidden, out), rng);
  for (std::int64_t i = 0; i < repeats; ++i) {
    BottleneckParams<T> b;
    b.cv1 = ConvBn<T>::make(Conv2dSpec::dense(p.hidden, p.hidden, 3), rng);
    b.cv2 = ConvBn<T>::make(Conv2dSpec::dense(p.hidden, p.hidden, 3), rng);
    b.shortcut = shortcut;
    p.blocks.push_back(std::move(b));
  }
  return p;
}

template <typename T>
Tensor<T> c2f(const Tensor<T>& x, const C2fParams<T>& p, Mode mode) {
  auto y = cbs(x, p.cv1, mode);
  std::vector<Tensor<T>> parts{slice_channels(y, 0, p.hidden), slice_channels(y, p.hidden, 2 * p.hidden)};
  for (const auto& b : p.blocks) {
    const Tensor<T>& last = parts.back();
    auto h = cbs(cbs(last, b.cv1, mode), b.cv2, mode);
    parts.push_back(b.shortcut ? add(h, last) : h);
  }
  return cbs(concat_channels(parts), p.cv2, mode);
}

template <typename T>
SppfParams<T> SppfParams<T>::make(std::int64_t channels, Rng& rng) {
  SppfParams p;
  p.cv1 = ConvBn<T>::make(Conv2dSpec::pointwise(channels, channels / 2), rng);
  p.cv2 = ConvBn<T>::make(Conv2dSpec::pointwise(channels / 2 * 4, channels), rng);
  return p;
}

template <typename T>
Tensor<T> sppf(const Tensor<T>& x, const SppfParams<T>& p, Mode mode) {
  auto a = cbs(x, p.cv1, mode);
  auto b = pool2d(a, PoolKind::max, 5, 1, 2);
  auto c = pool2d(b, PoolKind::max, 5, 1, 2);
  auto d = pool2d(c, PoolKind::max, 5, 1, 2);
  return cbs(concat_channels<T>({a, b, c, d}), p.cv2, mode);
}

std::int64_t conv_bn_param_count(const Conv2dSpec& spec) {
  return spec.weight_shape().numel() + 2 * spec.out_channels;
}

std::int64_t cas_param_count(std::int64_t q) {
  const std::int64_t h = ChannelGate<float>::hidden_width(q);
  const std::int64_t spatial = 9 * q + 9 * q * q;
  const std::int64_t channel = q * h + h + h * q + q;
  return 3 * q * q + 2 * (spatial + channel) + 9 * q;
}

std::int64_t air_param_count(std::int64_t c) {
  const std::int64_t q = AirBlockParams<float>::reduced_width(c);
  return (c * q + 2 * q) + (9 * q + 2 * q) + cas_param_count(q) + (q * c + 2 * c);
}

std::int64_t dpdf_param_count(std::int64_t cin, std::int64_t cout) {
  const std::int64_t h = ChannelGate<float>::hidden_width(cin);
  const std::int64_t per_path = 9 * (cin / 4) + (2 * 49 + 1) + (cin * h + h + h * cin + cin);
  const std::int64_t project = cout != cin ? cin * cout + 2 * cout : 0;
  return 2 * per_path + 1 + project;
}

#define FIREAD_INSTANTIATE_BLOCKS(T)                                                    \
  template struct ConvBn<T>;                                                           \
  template struct AirBlockParams<T>;                                                   \
  template struct DpdfBlockParams<T>;                                                  \
  template struct C2fParams<T>;                                                        \
  template struct SppfParams<T>;                                                       \
  template Tensor<T> conv_bn(const Tensor<T>&, const ConvBn<T>&, Mode);                \
  template Tensor<T> cbs(const Tensor<T>&, const ConvBn<T>&, Mode);                    \
  template Tensor<T> air(const Tensor<T>&, const AirBlockParams<T>&, Mode, Rng*);      \
  template DpdfOutputs<T> dpdf_detailed(const Tensor<T>&, const DpdfBlockParams<T>&, Mode); \
  template Tensor<T> c2f(const Tensor<T>&, const C2fParams<T>&, Mode);                 \
  template Tensor<T> sppf(const Tensor<T>&, const SppfParams<T>&, Mode);

FIREAD_INSTANTIATE_BLOCKS(float)
FIREAD_INSTANTIATE_BLOCKS(double)
FIREAD_INSTANTIATE_BLOCKS(long double)

}  // namespace firead
