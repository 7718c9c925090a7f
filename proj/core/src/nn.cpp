#include "firead/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "firead/errors.hpp"
#include "firead/op_counter.hpp"

namespace firead {

namespace {

thread_local OpCounter* g_active_counter = nullptr;

std::string str(std::int64_t v) { return std::to_string(v); }

// Half-open range [lo, hi) of output positions whose input index
// o * stride + offset falls inside [0, extent).
struct Range {
  std::int64_t lo;
  std::int64_t hi;
};

Range valid_range(std::int64_t offset, std::int64_t stride, std::int64_t extent, std::int64_t out_extent) {
  std::int64_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::int64_t last = extent - 1 - offset;
  std::int64_t hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
  return {std::min(lo, hi), hi};
}

struct ConvGeom {
  std::int64_t n, c, h, w;
  std::int64_t co, ho, wo;
  std::int64_t k, s, p, d;
  std::int64_t cin_g, cout_g;
  std::vector<Range> rows;  // per kh
  std::vector<Range> cols;  // per kw

  ConvGeom(const Shape& in, const Shape& out, const Conv2dSpec& spec)
      : n(in.n), c(in.c), h(in.h), w(in.w), co(out.c), ho(out.h), wo(out.w), k(spec.kernel), s(spec.stride),
        p(spec.padding), d(spec.dilation), cin_g(spec.in_channels / spec.groups),
        cout_g(spec.out_channels / spec.groups) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      rows.push_back(valid_range(kk * d - p, s, h, ho));
      cols.push_back(valid_range(kk * d - p, s, w, wo));
    }
  }
  bool pointwise_fast() const { return k == 1 && s == 1 && p == 0 && ho == h && wo == w; }
};

template <typename T>
void conv_forward(const ConvGeom& g, const T* in, const T* wt, const T* bias, T* out) {
  const std::int64_t plane_in = g.h * g.w;
  const std::int64_t plane_out = g.ho * g.wo;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oc = 0; oc < g.co; ++oc) {
      const std::int64_t grp = oc / g.cout_g;
      T* op = out + (n * g.co + oc) * plane_out;
      if (bias) std::fill(op, op + plane_out, bias[oc]);
      for (std::int64_t icg = 0; icg < g.cin_g; ++icg) {
        const T* ip = in + (n * g.c + grp * g.cin_g + icg) * plane_in;
        const T* wp = wt + (oc * g.cin_g + icg) * g.k * g.k;
        if (g.pointwise_fast()) {
          const T wv = wp[0];
          for (std::int64_t i = 0; i < plane_out; ++i) op[i] += wv * ip[i];
          continue;
        }
        for (std::int64_t kh = 0; kh < g.k; ++kh) {
          const Range rr = g.rows[static_cast<std::size_t>(kh)];
          const std::int64_t row_off = kh * g.d - g.p;
          for (std::int64_t kw = 0; kw < g.k; ++kw) {
            const Range cr = g.cols[static_cast<std::size_t>(kw)];
            const std::int64_t col_off = kw * g.d - g.p;
            const T wv = wp[kh * g.k + kw];
            for (std::int64_t oh = rr.lo; oh < rr.hi; ++oh) {
              const T* irow = ip + (oh * g.s + row_off) * g.w + col_off;
              T* orow = op + oh * g.wo;
              if (g.s == 1) {
                for (std::int64_t ow = cr.lo; ow < cr.hi; ++ow) orow[ow] += wv * irow[ow];
              } else {
                for (std::int64_t ow = cr.lo; ow < cr.hi; ++ow) orow[ow] += wv * irow[ow * g.s];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvGeom& g, const T* in, const T* wt, const T* gout, T* gin, T* gw, T* gb) {
  const std::int64_t plane_in = g.h * g.w;
  const std::int64_t plane_out = g.ho * g.wo;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oc = 0; oc < g.co; ++oc) {
      const std::int64_t grp = oc / g.cout_g;
      const T* gop = gout + (n * g.co + oc) * plane_out;
      if (gb) {
        T acc = 0;
        for (std::int64_t i = 0; i < plane_out; ++i) acc += gop[i];
        gb[oc] += acc;
      }
      for (std::int64_t icg = 0; icg < g.cin_g; ++icg) {
        const std::int64_t ic = grp * g.cin_g + icg;
        const T* ip = in + (n * g.c + ic) * plane_in;
        T* gip = gin ? gin + (n * g.c + ic) * plane_in : nullptr;
        const T* wp = wt + (oc * g.cin_g + icg) * g.k * g.k;
        T* gwp = gw ? gw + (oc * g.cin_g + icg) * g.k * g.k : nullptr;
        if (g.pointwise_fast()) {
          if (gip) {
            const T wv = wp[0];
            for (std::int64_t i = 0; i < plane_out; ++i) gip[i] += wv * gop[i];
          }
          if (gwp) {
            T acc = 0;
            for (std::int64_t i = 0; i < plane_out; ++i) acc += gop[i] * ip[i];
            gwp[0] += acc;
          }
          continue;
        }
        for (std::int64_t kh = 0; kh < g.k; ++kh) {
          const Range rr = g.rows[static_cast<std::size_t>(kh)];
          const std::int64_t row_off = kh * g.d - g.p;
          for (std::int64_t kw = 0; kw < g.k; ++kw) {
            const Range cr = g.cols[static_cast<std::size_t>(kw)];
            const std::int64_t col_off = kw * g.d - g.p;
            const T wv = wp[kh * g.k + kw];
            T acc = 0;
            for (std::int64_t oh = rr.lo; oh < rr.hi; ++oh) {
              const std::int64_t base = (oh * g.s + row_off) * g.w + col_off;
              const T* gorow = gop + oh * g.wo;
              const T* irow = ip + base;
              if (gip) {
                T* girow = gip + base;
                for (std::int64_t ow = cr.lo; ow < cr.hi; ++ow) girow[ow * g.s] += wv * gorow[ow];
              }
              if (gwp)
                for (std::int64_t ow = cr.lo; ow < cr.hi; ++ow) acc += gorow[ow] * irow[ow * g.s];
            }
            if (gwp) gwp[kh * g.k + kw] += acc;
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> counted_zeros(const Shape& shape) {
  return detail::make_result<T>(shape, std::vector<T>(static_cast<std::size_t>(shape.numel()), T(0)), {}, nullptr);
}

}  // namespace

OpCounter* OpCounter::active() noexcept { return g_active_counter; }
OpCounterScope::OpCounterScope(OpCounter& counter) : previous_(g_active_counter) { g_active_counter = &counter; }
OpCounterScope::~OpCounterScope() { g_active_counter = previous_; }

void Conv2dSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0) throw ContractError("conv channels must be positive");
  if (kernel <= 0 || stride < 1 || padding < 0 || dilation < 1 || groups < 1)
    throw ContractError("invalid conv geometry: k=" + str(kernel) + " s=" + str(stride) + " p=" + str(padding) +
                        " d=" + str(dilation) + " g=" + str(groups));
  if (in_channels % groups != 0 || out_channels % groups != 0)
    throw ContractError("conv channels " + str(in_channels) + "->" + str(out_channels) + " not divisible by groups " +
                        str(groups));
}

Shape Conv2dSpec::output_shape(const Shape& input) const {
  if (input.c != in_channels)
    throw ShapeError("conv expects " + str(in_channels) + " input channels, got shape " + input.str());
  const std::int64_t span = dilation * (kernel - 1) + 1;
  const std::int64_t ho = (input.h + 2 * padding - span) / stride + 1;
  const std::int64_t wo = (input.w + 2 * padding - span) / stride + 1;
  if (input.h + 2 * padding < span || input.w + 2 * padding < span || ho <= 0 || wo <= 0)
    throw ShapeError("conv output would be empty for input " + input.str());
  return {input.n, out_channels, ho, wo};
}

std::int64_t Conv2dSpec::macs(const Shape& input) const {
  const Shape o = output_shape(input);
  return kernel * kernel * (in_channels / groups) * out_channels * o.h * o.w * o.n;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dSpec& spec, const Tensor<T>& weight, const Tensor<T>* bias) {
  spec.validate();
  const Shape os = spec.output_shape(x.shape());
  if (weight.shape() != spec.weight_shape())
    throw ShapeError("conv weight shape " + weight.shape().str() + " expected " + spec.weight_shape().str());
  if (spec.has_bias != (bias != nullptr && bias->defined()))
    throw ContractError("conv bias presence does not match spec.has_bias");
  if (bias && bias->defined() && bias->shape() != Shape{1, spec.out_channels, 1, 1})
    throw ShapeError("conv bias shape " + bias->shape().str());

  if (OpCounter* counter = OpCounter::active()) {
    counter->add(weight.id(), spec.macs(x.shape()));
    if (counter->skip_compute()) return counted_zeros<T>(os);
  }

  ConvGeom geom(x.shape(), os, spec);
  std::vector<T> out(static_cast<std::size_t>(os.numel()), T(0));
  const bool with_bias = bias && bias->defined();
  conv_forward<T>(geom, x.data().data(), weight.data().data(), with_bias ? bias->data().data() : nullptr, out.data());

  std::vector<std::shared_ptr<detail::Node<T>>> inputs{x.node_ptr(), weight.node_ptr()};
  if (with_bias) inputs.push_back(bias->node_ptr());
  return detail::make_result<T>(os, std::move(out), std::move(inputs), [geom](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    auto& wn = *y.inputs[1];
    detail::Node<T>* bn = y.inputs.size() > 2 ? y.inputs[2].get() : nullptr;
    if (xn.requires_grad) xn.ensure_grad();
    if (wn.requires_grad) wn.ensure_grad();
    if (bn && bn->requires_grad) bn->ensure_grad();
    std::vector<T> gw_local;
    T* gw = nullptr;
    if (wn.requires_grad) {
      gw_local.assign(wn.data.size(), T(0));
      gw = gw_local.data();
    }
    conv_backward<T>(geom, xn.data.data(), wn.data.data(), y.grad.data(), xn.requires_grad ? xn.grad.data() : nullptr,
                     gw, (bn && bn->requires_grad) ? bn->grad.data() : nullptr);
    if (gw) {
      const T fault = detail::backward_fault() ? T(1.05) : T(1);
      for (std::size_t i = 0; i < gw_local.size(); ++i) wn.grad[i] += fault * gw_local[i];
    }
  });
}

template <typename T>
BatchNorm<T> BatchNorm<T>::make(std::int64_t channels) {
  const Shape s{1, channels, 1, 1};
  BatchNorm bn;
  bn.gamma = Tensor<T>::constant(s, T(1));
  bn.gamma.set_requires_grad(true);
  bn.beta = Tensor<T>::zeros(s);
  bn.beta.set_requires_grad(true);
  bn.running_mean = Tensor<T>::zeros(s);
  bn.running_var = Tensor<T>::constant(s, T(1));
  return bn;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const BatchNorm<T>& state, Mode mode) {
  using Acc = detail::accum_t<T>;
  const Shape s = x.shape();
  if (state.gamma.shape() != Shape{1, s.c, 1, 1})
    throw ShapeError("batch_norm state for " + state.gamma.shape().str() + " applied to " + s.str());
  const std::int64_t plane = s.plane();
  const std::int64_t count = s.n * plane;
  const auto& in = x.data();
  const auto& gamma = state.gamma.data();
  const auto& beta = state.beta.data();
  const T eps = static_cast<T>(state.eps);

  std::vector<T> mean(static_cast<std::size_t>(s.c)), inv_std(static_cast<std::size_t>(s.c));
  if (mode == Mode::train) {
    if (count == 0) throw ContractError("batch_norm train mode on empty batch");
    auto rm = Tensor<T>(state.running_mean).mutable_data();
    auto rv = Tensor<T>(state.running_var).mutable_data();
    const T mom = static_cast<T>(state.momentum);
    for (std::int64_t c = 0; c < s.c; ++c) {
      Acc acc = 0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const T* p = in.data() + (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      }
      const Acc m = acc / static_cast<Acc>(count);
      Acc var = 0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const T* p = in.data() + (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) var += (p[i] - m) * (p[i] - m);
      }
      var /= static_cast<Acc>(count);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(Acc(1) / std::sqrt(var + static_cast<Acc>(state.eps)));
      const Acc unbiased = count > 1 ? var * static_cast<Acc>(count) / static_cast<Acc>(count - 1) : var;
      rm[c] = (T(1) - mom) * rm[c] + mom * static_cast<T>(m);
      rv[c] = (T(1) - mom) * rv[c] + mom * static_cast<T>(unbiased);
    }
  } else {
    const auto& rm = state.running_mean.data();
    const auto& rv = state.running_var.data();
    for (std::int64_t c = 0; c < s.c; ++c) {
      mean[c] = rm[c];
      inv_std[c] = T(1) / std::sqrt(rv[c] + eps);
    }
  }

  std::vector<T> out(in.size());
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
      const T scale = gamma[c] * inv_std[c];
      for (std::int64_t i = 0; i < plane; ++i) out[base + i] = (in[base + i] - mean[c]) * scale + beta[c];
    }

  const bool train = mode == Mode::train;
  return detail::make_result<T>(
      s, std::move(out), {x.node_ptr(), state.gamma.node_ptr(), state.beta.node_ptr()},
      [s, plane, count, train, mean = std::move(mean), inv_std = std::move(inv_std)](detail::Node<T>& y) {
        auto& xn = *y.inputs[0];
        auto& gn = *y.inputs[1];
        auto& bn = *y.inputs[2];
        if (xn.requires_grad) xn.ensure_grad();
        if (gn.requires_grad) gn.ensure_grad();
        if (bn.requires_grad) bn.ensure_grad();
        for (std::int64_t c = 0; c < s.c; ++c) {
          detail::accum_t<T> sum_dy = 0, sum_dy_xhat = 0;
          for (std::int64_t n = 0; n < s.n; ++n) {
            const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
            for (std::int64_t i = 0; i < plane; ++i) {
              const T xhat = (xn.data[base + i] - mean[c]) * inv_std[c];
              sum_dy += y.grad[base + i];
              sum_dy_xhat += y.grad[base + i] * xhat;
            }
          }
          if (gn.requires_grad) gn.grad[c] += static_cast<T>(sum_dy_xhat);
          if (bn.requires_grad) bn.grad[c] += static_cast<T>(sum_dy);
          if (!xn.requires_grad) continue;
          const T g = gn.data[c];
          const T k = g * inv_std[c];
          if (!train) {
            for (std::int64_t n = 0; n < s.n; ++n) {
              const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
              for (std::int64_t i = 0; i < plane; ++i) xn.grad[base + i] += k * y.grad[base + i];
            }
            continue;
          }
          // dx = g/sigma * (dy - mean(dy) - xhat * mean(dy * xhat))
          const T mdy = static_cast<T>(sum_dy / static_cast<T>(count));
          const T mdyx = static_cast<T>(sum_dy_xhat / static_cast<T>(count));
          for (std::int64_t n = 0; n < s.n; ++n) {
            const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
            for (std::int64_t i = 0; i < plane; ++i) {
              const T xhat = (xn.data[base + i] - mean[c]) * inv_std[c];
              xn.grad[base + i] += k * (y.grad[base + i] - mdy - xhat * mdyx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  const Shape s = x.shape();
  if (kernel < 1 || stride < 1 || padding < 0) throw ContractError("invalid pool geometry");
  if (s.h + 2 * padding < kernel || s.w + 2 * padding < kernel)
    throw ShapeError("pool window " + str(kernel) + " larger than input " + s.str());
  const Shape o{s.n, s.c, (s.h + 2 * padding - kernel) / stride + 1, (s.w + 2 * padding - kernel) / stride + 1};
  const auto& in = x.data();
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  std::vector<std::int64_t> argmax;
  if (kind == PoolKind::max) argmax.assign(out.size(), -1);
  const T inv_area = T(1) / static_cast<T>(kernel * kernel);

  std::size_t oi = 0;
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const std::int64_t base = nc * s.plane();
    for (std::int64_t oh = 0; oh < o.h; ++oh)
      for (std::int64_t ow = 0; ow < o.w; ++ow, ++oi) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_idx = -1;
        T acc = 0;
        for (std::int64_t kh = 0; kh < kernel; ++kh) {
          const std::int64_t ih = oh * stride - padding + kh;
          if (ih < 0 || ih >= s.h) continue;
          for (std::int64_t kw = 0; kw < kernel; ++kw) {
            const std::int64_t iw = ow * stride - padding + kw;
            if (iw < 0 || iw >= s.w) continue;
            const std::int64_t idx = base + ih * s.w + iw;
            const T v = in[static_cast<std::size_t>(idx)];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = idx;
            }
            acc += v;
          }
        }
        if (kind == PoolKind::max) {
          out[oi] = best;
          argmax[oi] = best_idx;
        } else {
          out[oi] = acc * inv_area;
        }
      }
  }

  return detail::make_result<T>(o, std::move(out), {x.node_ptr()},
                                [kind, s, o, kernel, stride, padding, inv_area,
                                 argmax = std::move(argmax)](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    if (kind == PoolKind::max) {
      for (std::size_t i = 0; i < argmax.size(); ++i) xn.grad[static_cast<std::size_t>(argmax[i])] += y.grad[i];
      return;
    }
    std::size_t oi = 0;
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
      const std::int64_t base = nc * s.plane();
      for (std::int64_t oh = 0; oh < o.h; ++oh)
        for (std::int64_t ow = 0; ow < o.w; ++ow, ++oi) {
          const T g = y.grad[oi] * inv_area;
          for (std::int64_t kh = 0; kh < kernel; ++kh) {
            const std::int64_t ih = oh * stride - padding + kh;
            if (ih < 0 || ih >= s.h) continue;
            for (std::int64_t kw = 0; kw < kernel; ++kw) {
              const std::int64_t iw = ow * stride - padding + kw;
              if (iw < 0 || iw >= s.w) continue;
              xn.grad[static_cast<std::size_t>(base + ih * s.w + iw)] += g;
            }
          }
        }
    }
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.shape().h < 1 || x.shape().w < 1) throw ShapeError("global_avg_pool on empty plane " + x.shape().str());
  return reduce(x, ReduceKind::mean, axis::hw);
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor) {
  if (factor < 1) throw ContractError("upsample factor must be >= 1");
  const Shape s = x.shape();
  const Shape o{s.n, s.c, s.h * factor, s.w * factor};
  const auto& in = x.data();
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  std::size_t oi = 0;
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::int64_t oh = 0; oh < o.h; ++oh) {
      const T* row = in.data() + nc * s.plane() + (oh / factor) * s.w;
      for (std::int64_t ow = 0; ow < o.w; ++ow) out[oi++] = row[ow / factor];
    }
  return detail::make_result<T>(o, std::move(out), {x.node_ptr()}, [s, o, factor](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    std::size_t oi = 0;
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc)
      for (std::int64_t oh = 0; oh < o.h; ++oh) {
        T* row = xn.grad.data() + nc * s.plane() + (oh / factor) * s.w;
        for (std::int64_t ow = 0; ow < o.w; ++ow) row[ow / factor] += y.grad[oi++];
      }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels needs at least one part");
  const Shape first = parts.front().shape();
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      throw ShapeError("concat_channels mismatch: " + first.str() + " vs " + s.str());
    channels += s.c;
  }
  const Shape o{first.n, channels, first.h, first.w};
  const std::int64_t plane = first.plane();
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  std::vector<std::shared_ptr<detail::Node<T>>> inputs;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    const auto& d = p.data();
    for (std::int64_t n = 0; n < s.n; ++n)
      std::copy_n(d.begin() + n * s.c * plane, s.c * plane, out.begin() + (n * channels + offset) * plane);
    offset += s.c;
    inputs.push_back(p.node_ptr());
  }
  return detail::make_result<T>(o, std::move(out), std::move(inputs), [plane, channels](detail::Node<T>& y) {
    std::int64_t offset = 0;
    for (auto& in : y.inputs) {
      const Shape& s = in->shape;
      if (in->requires_grad) {
        in->ensure_grad();
        for (std::int64_t n = 0; n < s.n; ++n) {
          const T* src = y.grad.data() + (n * channels + offset) * plane;
          T* dst = in->grad.data() + n * s.c * plane;
          for (std::int64_t i = 0; i < s.c * plane; ++i) dst[i] += src[i];
        }
      }
      offset += s.c;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  const Shape s = x.shape();
  const Shape ws = weight.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("linear expects (N,C,1,1), got " + s.str());
  if (ws.h != 1 || ws.w != 1 || ws.c != s.c)
    throw ShapeError("linear weight " + ws.str() + " incompatible with input " + s.str());
  const bool with_bias = bias && bias->defined();
  if (with_bias && bias->shape() != Shape{1, ws.n, 1, 1}) throw ShapeError("linear bias shape " + bias->shape().str());
  const std::int64_t cin = s.c;
  const std::int64_t cout = ws.n;
  const Shape o{s.n, cout, 1, 1};

  if (OpCounter* counter = OpCounter::active()) {
    counter->add(weight.id(), cin * cout * s.n);
    if (counter->skip_compute()) return counted_zeros<T>(o);
  }

  const auto& in = x.data();
  const auto& w = weight.data();
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t j = 0; j < cout; ++j) {
      T acc = with_bias ? bias->data()[j] : T(0);
      for (std::int64_t i = 0; i < cin; ++i) acc += w[j * cin + i] * in[n * cin + i];
      out[n * cout + j] = acc;
    }
  std::vector<std::shared_ptr<detail::Node<T>>> inputs{x.node_ptr(), weight.node_ptr()};
  if (with_bias) inputs.push_back(bias->node_ptr());
  return detail::make_result<T>(o, std::move(out), std::move(inputs), [cin, cout, batch = s.n](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    auto& wn = *y.inputs[1];
    detail::Node<T>* bn = y.inputs.size() > 2 ? y.inputs[2].get() : nullptr;
    if (xn.requires_grad) xn.ensure_grad();
    if (wn.requires_grad) wn.ensure_grad();
    if (bn && bn->requires_grad) bn->ensure_grad();
    for (std::int64_t n = 0; n < batch; ++n)
      for (std::int64_t j = 0; j < cout; ++j) {
        const T g = y.grad[n * cout + j];
        if (bn && bn->requires_grad) bn->grad[j] += g;
        for (std::int64_t i = 0; i < cin; ++i) {
          if (xn.requires_grad) xn.grad[n * cin + i] += g * wn.data[j * cin + i];
          if (wn.requires_grad) wn.grad[j * cin + i] += g * xn.data[n * cin + i];
        }
      }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
  if (mode == Mode::infer || p == 0.0) return x;
  if (!rng) throw ContractError("dropout in train mode needs an rng");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(static_cast<std::size_t>(x.numel()));
  for (T& m : mask) m = rng->bernoulli(p) ? T(0) : keep_scale;
  return mul(x, Tensor<T>::from_data(x.shape(), std::move(mask)));
}

template <typename T>
Tensor<T> partial_conv(const Tensor<T>& x, std::int64_t reduction, const Tensor<T>& dw_weight) {
  const std::int64_t c = x.shape().c;
  if (reduction < 1 || c % reduction != 0)
    throw ContractError("partial_conv: channels " + str(c) + " not divisible by rate " + str(reduction));
  const std::int64_t active = c / reduction;
  auto head = conv2d(slice_channels(x, 0, active), Conv2dSpec::depthwise(active, 3), dw_weight);
  if (active == c) return head;
  return concat_channels<T>({head, slice_channels(x, active, c)});
}

#define FIREAD_INSTANTIATE_NN(T)                                                                       \
  template Tensor<T> conv2d(const Tensor<T>&, const Conv2dSpec&, const Tensor<T>&, const Tensor<T>*); \
  template struct BatchNorm<T>;                                                                       \
  template Tensor<T> batch_norm(const Tensor<T>&, const BatchNorm<T>&, Mode);                         \
  template Tensor<T> pool2d(const Tensor<T>&, PoolKind, std::int64_t, std::int64_t, std::int64_t);    \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                               \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::int64_t);                                \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                    \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng*);                                   \
  template Tensor<T> partial_conv(const Tensor<T>&, std::int64_t, const Tensor<T>&);

FIREAD_INSTANTIATE_NN(float)
FIREAD_INSTANTIATE_NN(double)
FIREAD_INSTANTIATE_NN(long double)

}  // namespace firead
