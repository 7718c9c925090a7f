#include "gradcheck_suite.hpp"

#include <cmath>
#include <limits>

#include "firead/blocks.hpp"
#include "firead/errors.hpp"
#include "firead/grad_check.hpp"
#include "firead/loss.hpp"
#include "firead/model.hpp"

namespace firead::tools {

namespace {

bool ends_with(const std::string& name, const char* suffix) {
  const std::string s(suffix);
  return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
}

/// Moves freshly initialized constants (unit gamma, zero beta and biases,
/// zero alpha_raw) to generic values so no gradient path is trivially flat.
template <typename T>
void jitter(const std::string& name, Tensor<T> t, Rng& rng) {
  double lo = 0, hi = 0;
  if (ends_with(name, "bn.gamma")) {
    lo = 0.5, hi = 1.5;
  } else if (ends_with(name, "bn.beta") || ends_with(name, "bias") || ends_with(name, "alpha_raw")) {
    lo = -0.5, hi = 0.5;
  } else if (ends_with(name, "running_var")) {
    lo = 0.5, hi = 2.0;
  } else if (ends_with(name, "running_mean")) {
    lo = -0.3, hi = 0.3;
  } else {
    return;
  }
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
}

/// Builds one unit's tensors at precision T. The 64-bit and extended builds
/// run the same sequence of calls, so `mirrored` lines up element for element.
template <typename T>
struct Ctx {
  explicit Ctx(std::uint64_t seed) : rng(seed) {}

  Rng rng;
  std::vector<Tensor<T>> checked;
  std::vector<Tensor<T>> mirrored;

  Tensor<T> leaf(Shape s, double lo = -1, double hi = 1) {
    Tensor<T> t = Tensor<T>::uniform(s, lo, hi, rng);
    t.set_requires_grad(true);
    checked.push_back(t);
    mirrored.push_back(t);
    return t;
  }

  Tensor<T> input(Shape s, double lo, double hi) {
    Tensor<T> t = Tensor<T>::uniform(s, lo, hi, rng);
    mirrored.push_back(t);
    return t;
  }

  void adopt(const std::string& name, const Tensor<T>& t, bool trainable) {
    jitter(name, t, rng);
    mirrored.push_back(t);
    if (trainable) checked.push_back(t);
  }

  template <typename P>
  P adopt(P p) {
    p.visit("", [&](const std::string& name, const Tensor<T>& t, bool trainable) { adopt(name, t, trainable); });
    return p;
  }

  BatchNorm<T> adopt(BatchNorm<T> bn) {
    adopt("bn.gamma", bn.gamma, true);
    adopt("bn.beta", bn.beta, true);
    adopt("bn.running_mean", bn.running_mean, false);
    adopt("bn.running_var", bn.running_var, false);
    return bn;
  }

  void adopt_model(const Model<T>& m) {
    for (const auto& t : m.tensors()) adopt(t.name, t.tensor, t.trainable);
  }
};

template <typename T>
Tensor<T> project_maps(const typename Model<T>::Maps& maps) {
  return add(add(maps[0], upsample_nearest(maps[1], 2)), upsample_nearest(maps[2], 4));
}

class Suite {
 public:
  Suite(std::string scope, std::uint64_t seed, double epsilon, const std::function<void(const GradUnitResult&)>& cb)
      : scope_(std::move(scope)), seed_(seed), epsilon_(epsilon), cb_(cb) {}

  /// `make` is a generic callable taking Ctx<T>& and returning the unit's
  /// output as std::function<Tensor<T>()>.
  template <typename Make>
  void unit(const std::string& name, Make&& make, double threshold, std::int64_t max_elements = 0) {
    GradUnitResult r;
    r.scope = scope_;
    r.name = name;
    r.threshold = threshold;
    const std::uint64_t unit_seed = seed_ * 7919 + results_.size() + 1;
    GradCheckOptions opt;
    opt.epsilon = epsilon_;
    opt.refinements = kRefinements;
    opt.consistency = kConsistency;
    opt.max_elements_per_param = max_elements;
    opt.sample_seed = unit_seed;
    try {
      Ctx<double> lo(unit_seed);
      Ctx<long double> hi(unit_seed);
      std::function<Tensor<double>()> f = make(lo);
      std::function<Tensor<long double>()> g = make(hi);
      if (lo.mirrored.size() != hi.mirrored.size()) throw ContractError("gradcheck unit builds diverged");
      for (std::size_t i = 0; i < lo.mirrored.size(); ++i) {
        const auto& src = lo.mirrored[i].data();
        auto dst = hi.mirrored[i].mutable_data();
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j];
      }
      const auto res = grad_check([&] { return random_projection(f(), unit_seed); }, lo.checked,
                                  [&] { return random_projection(g(), unit_seed); }, hi.checked, opt);
      r.max_relative_error = res.max_relative_error;
      r.elements = res.elements_checked;
      r.worst_analytic = res.worst_analytic;
      r.worst_numeric = res.worst_numeric;
      r.passed = res.max_relative_error < threshold;
    } catch (const std::exception& e) {
      r.max_relative_error = std::numeric_limits<double>::infinity();
      r.passed = false;
      r.error = e.what();
    }
    if (cb_) cb_(r);
    results_.push_back(std::move(r));
  }

  std::vector<GradUnitResult> take() { return std::move(results_); }

 private:
  std::string scope_;
  std::uint64_t seed_;
  double epsilon_;
  std::function<void(const GradUnitResult&)> cb_;
  std::vector<GradUnitResult> results_;
};

template <typename T>
using Fn = std::function<Tensor<T>()>;

void primitives(Suite& s) {
  const double th = kUnitThreshold;

  auto conv_unit = [&](const std::string& name, Conv2dSpec spec, Shape in) {
    s.unit(name, [=]<typename T>(Ctx<T>& c) -> Fn<T> {
      Tensor<T> x = c.leaf(in);
      Tensor<T> w = c.leaf(spec.weight_shape());
      if (!spec.has_bias) return [=] { return conv2d(x, spec, w); };
      Tensor<T> b = c.leaf({1, spec.out_channels, 1, 1});
      return [=] { return conv2d(x, spec, w, &b); };
    }, th);
  };
  conv_unit("conv2d 3x3 pad 1 bias", {3, 4, 3, 1, 1, 1, 1, true}, {2, 3, 5, 6});
  conv_unit("conv2d 3x3 stride 2", {3, 4, 3, 2, 1, 1, 1, false}, {1, 3, 7, 6});
  conv_unit("conv2d 1x1", {4, 3, 1, 1, 0, 1, 1, false}, {2, 4, 3, 3});
  conv_unit("conv2d grouped g=2", {4, 6, 3, 1, 1, 1, 2, false}, {1, 4, 5, 5});
  conv_unit("conv2d depthwise", Conv2dSpec::depthwise(4, 3), {1, 4, 5, 4});
  conv_unit("conv2d dilated 7x7 d=2", {2, 1, 7, 1, 6, 2, 1, true}, {1, 2, 6, 6});

  for (Mode mode : {Mode::train, Mode::infer}) {
    s.unit(mode == Mode::train ? "batch_norm train" : "batch_norm infer", [=]<typename T>(Ctx<T>& c) -> Fn<T> {
      const auto bn = c.adopt(BatchNorm<T>::make(3));
      Tensor<T> x = c.leaf({2, 3, 3, 4});
      return [=] { return batch_norm(x, bn, mode); };
    }, th);
  }

  auto simple = [&](const std::string& name, Shape shape, auto op) {
    s.unit(name, [=]<typename T>(Ctx<T>& c) -> Fn<T> {
      Tensor<T> x = c.leaf(shape);
      return [=] { return op(x); };
    }, th);
  };
  const Shape x6{2, 3, 6, 6};
  simple("pool2d max 2x2", x6, [](const auto& x) { return pool2d(x, PoolKind::max, 2, 2); });
  simple("pool2d avg 2x2", x6, [](const auto& x) { return pool2d(x, PoolKind::avg, 2, 2); });
  simple("pool2d max 5x5 s1 p2", x6, [](const auto& x) { return pool2d(x, PoolKind::max, 5, 1, 2); });
  simple("global_avg_pool", x6, [](const auto& x) { return global_avg_pool(x); });
  simple("upsample_nearest x2", x6, [](const auto& x) { return upsample_nearest(x, 2); });
  simple("slice_channels", x6, [](const auto& x) { return slice_channels(x, 1, 3); });
  simple("channel_max", x6, [](const auto& x) { return channel_max(x); });
  simple("relu", x6, [](const auto& x) { return relu(x); });
  simple("sigmoid", x6, [](const auto& x) { return sigmoid(x); });
  simple("silu", x6, [](const auto& x) { return silu(x); });
  simple("softplus", x6, [](const auto& x) { return softplus(x); });
  simple("affine", x6, [](const auto& x) {
    using T = typename std::decay_t<decltype(x)>::value_type;
    return affine(x, T(0.7), T(-0.2));
  });
  simple("reduce mean hw", x6, [](const auto& x) { return reduce(x, ReduceKind::mean, axis::hw); });
  simple("dropout train (fixed mask)", x6, [](const auto& x) {
    Rng mask_rng(99);
    return dropout(x, 0.3, Mode::train, &mask_rng);
  });

  auto binary_unit = [&](const std::string& name, Shape b_shape, BinaryKind kind) {
    s.unit(name, [=]<typename T>(Ctx<T>& c) -> Fn<T> {
      Tensor<T> a = c.leaf(x6);
      Tensor<T> b = c.leaf(b_shape);
      return [=] { return binary(a, b, kind); };
    }, th);
  };
  binary_unit("add", x6, BinaryKind::add);
  binary_unit("mul", x6, BinaryKind::mul);
  binary_unit("mul broadcast per-channel", {2, 3, 1, 1}, BinaryKind::mul);
  binary_unit("add broadcast scalar", {1, 1, 1, 1}, BinaryKind::add);

  s.unit("concat_channels", []<typename T>(Ctx<T>& c) -> Fn<T> {
    Tensor<T> x = c.leaf({2, 3, 6, 6});
    Tensor<T> y = c.leaf({2, 2, 6, 6});
    return [=] { return concat_channels<T>({x, y, x}); };
  }, th);
  s.unit("linear", []<typename T>(Ctx<T>& c) -> Fn<T> {
    Tensor<T> x = c.leaf({3, 5, 1, 1});
    Tensor<T> w = c.leaf({4, 5, 1, 1});
    Tensor<T> b = c.leaf({1, 4, 1, 1});
    return [=] { return linear(x, w, &b); };
  }, th);
  s.unit("partial_conv r=4", []<typename T>(Ctx<T>& c) -> Fn<T> {
    Tensor<T> x = c.leaf({2, 8, 4, 5});
    Tensor<T> w = c.leaf({2, 1, 3, 3});
    return [=] { return partial_conv(x, 4, w); };
  }, th);
  s.unit("bce_with_logits", []<typename T>(Ctx<T>& c) -> Fn<T> {
    Tensor<T> z = c.leaf({2, 3, 3, 3}, -4, 4);
    Tensor<T> t = c.input({2, 3, 3, 3}, 0, 1);
    return [=] { return bce_with_logits(z, t); };
  }, th);
}

void blocks(Suite& s) {
  const double th = kUnitThreshold;
  s.unit("spatial_gate", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto g = c.adopt(SpatialGate<T>::make(3, c.rng));
    Tensor<T> x = c.leaf({1, 3, 5, 5});
    return [=] { return spatial_gate(x, g); };
  }, th);
  s.unit("channel_gate", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto g = c.adopt(ChannelGate<T>::make(6, c.rng));
    Tensor<T> x = c.leaf({2, 6, 3, 3});
    return [=] { return channel_gate(x, g); };
  }, th);
  s.unit("cas_attention", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto p = c.adopt(CasAttentionParams<T>::make(4, c.rng));
    Tensor<T> x = c.leaf({1, 4, 4, 5});
    return [=] { return cas_attention(x, p, Mode::train); };
  }, th);
  s.unit("sa_calibrate", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto p = c.adopt(SpatialCalibration<T>::make(c.rng));
    Tensor<T> x = c.leaf({2, 3, 6, 6});
    return [=] { return sa_calibrate(x, p); };
  }, th);
  s.unit("cbs (1,3,8,8)->(1,8,4,4)", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto p = c.adopt(ConvBn<T>::make(Conv2dSpec::dense(3, 8, 3, 2), c.rng));
    Tensor<T> x = c.leaf({1, 3, 8, 8});
    return [=] { return cbs(x, p, Mode::train); };
  }, th);
  for (Mode mode : {Mode::train, Mode::infer}) {
    s.unit(mode == Mode::train ? "air (1,8,6,6) train" : "air (1,8,6,6) infer", [=]<typename T>(Ctx<T>& c) -> Fn<T> {
      const auto p = c.adopt(AirBlockParams<T>::make(8, c.rng));
      Tensor<T> x = c.leaf({1, 8, 6, 6});
      return [=] { return air(x, p, mode); };
    }, th);
  }
  s.unit("dpdf (1,8,8,8)->12 incl. alpha_raw", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto p = c.adopt(DpdfBlockParams<T>::make(8, 12, c.rng));
    Tensor<T> x = c.leaf({1, 8, 8, 8});
    return [=] { return dpdf(x, p, Mode::train); };
  }, th);
  s.unit("dpdf (2,8,4,6)->8 incl. alpha_raw", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto p = c.adopt(DpdfBlockParams<T>::make(8, 8, c.rng));
    Tensor<T> x = c.leaf({2, 8, 4, 6});
    return [=] { return dpdf(x, p, Mode::train); };
  }, th);
  s.unit("dpdf alpha_raw only", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto p = c.adopt(DpdfBlockParams<T>::make(8, 8, c.rng));
    Tensor<T> x = c.input({1, 8, 8, 8}, -1, 1);
    c.checked = {p.alpha_raw};
    return [=] { return dpdf(x, p, Mode::train); };
  }, th);
  s.unit("c2f", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto p = c.adopt(C2fParams<T>::make(4, 6, 2, true, c.rng));
    Tensor<T> x = c.leaf({2, 4, 4, 4});
    return [=] { return c2f(x, p, Mode::train); };
  }, th);
  s.unit("sppf", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto p = c.adopt(SppfParams<T>::make(4, c.rng));
    Tensor<T> x = c.leaf({1, 4, 12, 12});
    return [=] { return sppf(x, p, Mode::train); };
  }, th);
}

void model(Suite& s) {
  const double th = kModelThreshold;
  constexpr std::int64_t kPerTensor = 3;
  s.unit("toy model forward", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const auto m = Model<T>::build(ModelConfig::toy(), c.rng);
    c.adopt_model(m);
    Tensor<T> x = c.leaf({1, 3, 64, 64}, 0, 1);
    return [=] { return project_maps<T>(m.forward(x, Mode::infer)); };
  }, th, kPerTensor);
  s.unit("toy baseline forward", []<typename T>(Ctx<T>& c) -> Fn<T> {
    ModelConfig cfg = ModelConfig::toy();
    cfg.use_air = false;
    cfg.use_dpdf = false;
    const auto m = Model<T>::build(cfg, c.rng);
    c.adopt_model(m);
    Tensor<T> x = c.leaf({1, 3, 64, 64}, 0, 1);
    return [=] { return project_maps<T>(m.forward(x, Mode::infer)); };
  }, th, kPerTensor);
  s.unit("toy detection loss pipeline", []<typename T>(Ctx<T>& c) -> Fn<T> {
    const ModelConfig cfg = ModelConfig::toy();
    const auto m = Model<T>::build(cfg, c.rng);
    c.adopt_model(m);
    Tensor<T> x = c.leaf({1, 3, 64, 64}, 0, 1);
    const std::vector<GroundTruthBox> gts{{"", 0, {0.31, 0.42, 0.22, 0.18}}, {"", 0, {0.72, 0.65, 0.12, 0.3}}};
    const std::vector<ImageTargets> targets{assign(gts, cfg)};
    LossOptions opt;
    opt.alpha = CiouAlpha::exact;
    return [=] { return detection_loss<T>(m.forward(x, Mode::infer), targets, cfg.input_size, opt).total; };
  }, th, kPerTensor);
}

}  // namespace

const std::vector<std::string>& gradcheck_scopes() {
  static const std::vector<std::string> scopes{"primitives", "blocks", "model"};
  return scopes;
}

std::vector<GradUnitResult> run_gradcheck(const std::string& scope, std::uint64_t seed,
                                          const std::function<void(const GradUnitResult&)>& on_result,
                                          double epsilon) {
  Suite suite(scope, seed, epsilon, on_result);
  if (scope == "primitives")
    primitives(suite);
  else if (scope == "blocks")
    blocks(suite);
  else if (scope == "model")
    model(suite);
  else
    throw std::invalid_argument("unknown gradcheck scope '" + scope + "'");
  return suite.take();
}

}  // namespace firead::tools
