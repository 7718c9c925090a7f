#include "firead/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "firead/errors.hpp"

namespace firead {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::baseline:
      return "baseline";
    case Variant::air:
      return "air";
    case Variant::dpdf:
      return "dpdf";
    case Variant::full:
      return "full";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::baseline, Variant::air, Variant::dpdf, Variant::full})
    if (variant_name(v) == name) return v;
  throw ConfigError("variant", "unknown variant '" + std::string(name) + "' (baseline, air, dpdf, full)");
}

ModelConfig ModelConfig::preset(Variant v) {
  ModelConfig c;
  c.use_air = v == Variant::air || v == Variant::full;
  c.use_dpdf = v == Variant::dpdf || v == Variant::full;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.input_size = 64;
  c.width_multiple = 0.125;
  // AIR needs at least 3x3 maps; stride 32 of a 64 input is 2x2.
  c.blocks_per_stage = {1, 1, 1, 0};
  c.head_channels = 16;
  return c;
}

std::array<std::int64_t, 5> ModelConfig::widths() const {
  std::array<std::int64_t, 5> out{};
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::int64_t>(std::llround(static_cast<double>(stage_widths[i]) * width_multiple));
  return out;
}

void ModelConfig::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes", "must be >= 1");
  if (input_size < 32 || input_size % 32 != 0) throw ConfigError("input_size", "must be a positive multiple of 32");
  if (!(width_multiple > 0) || !std::isfinite(width_multiple)) throw ConfigError("width_multiple", "must be > 0");
  for (std::int64_t w : stage_widths)
    if (w <= 0) throw ConfigError("stage_widths", "entries must be positive");
  const auto w = widths();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::string at = "scaled width " + std::to_string(w[i]) + " of stage " + std::to_string(i);
    if (w[i] < 2 || w[i] % 2 != 0) throw ConfigError("width_multiple", at + " must be even and >= 2");
    if (use_dpdf && w[i] % 4 != 0) throw ConfigError("width_multiple", at + " must be divisible by 4 with use_dpdf");
  }
  for (std::size_t i = 0; i < blocks_per_stage.size(); ++i) {
    if (blocks_per_stage[i] < 0) throw ConfigError("blocks_per_stage", "entries must be >= 0");
    const std::int64_t side = input_size >> (i + 2);
    if (use_air && blocks_per_stage[i] > 0 && side < 3)
      throw ConfigError("blocks_per_stage", "AIR blocks at stage " + std::to_string(i) + " need maps >= 3x3, got " +
                                                std::to_string(side));
  }
  if (neck_air_blocks < 0) throw ConfigError("neck_air_blocks", "must be >= 0");
  if (use_air && neck_air_blocks > 0 && input_size / 32 < 3)
    throw ConfigError("neck_air_blocks", "neck AIR blocks need stride-32 maps >= 3x3");
  if (head_channels < 1) throw ConfigError("head_channels", "must be >= 1");
  if (!(score_threshold >= 0 && score_threshold <= 1)) throw ConfigError("score_threshold", "must lie in [0, 1]");
  if (!(nms_iou_threshold >= 0 && nms_iou_threshold <= 1))
    throw ConfigError("nms_iou_threshold", "must lie in [0, 1]");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout", "must lie in [0, 1)");
}

namespace {

using Json = nlohmann::ordered_json;

template <typename V>
void read_field(const Json& j, const char* key, V& out) {
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, std::string("wrong type: ") + e.what());
  }
}

}  // namespace

ModelConfig parse_model_config(std::string_view text, const ModelConfig& base) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<document>", e.what());
  }
  if (!j.is_object()) throw ConfigError("<document>", "expected an object");

  ModelConfig c = base;
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key == "num_classes")
      read_field(j, "num_classes", c.num_classes);
    else if (key == "input_size")
      read_field(j, "input_size", c.input_size);
    else if (key == "width_multiple")
      read_field(j, "width_multiple", c.width_multiple);
    else if (key == "stage_widths")
      read_field(j, "stage_widths", c.stage_widths);
    else if (key == "blocks_per_stage")
      read_field(j, "blocks_per_stage", c.blocks_per_stage);
    else if (key == "neck_air_blocks")
      read_field(j, "neck_air_blocks", c.neck_air_blocks);
    else if (key == "use_air")
      read_field(j, "use_air", c.use_air);
    else if (key == "use_dpdf")
      read_field(j, "use_dpdf", c.use_dpdf);
    else if (key == "include_sppf")
      read_field(j, "include_sppf", c.include_sppf);
    else if (key == "head_channels")
      read_field(j, "head_channels", c.head_channels);
    else if (key == "score_threshold")
      read_field(j, "score_threshold", c.score_threshold);
    else if (key == "nms_iou_threshold")
      read_field(j, "nms_iou_threshold", c.nms_iou_threshold);
    else if (key == "dropout")
      read_field(j, "dropout", c.dropout);
    else
      throw ConfigError(key, "unknown key");
  }
  c.validate();
  return c;
}

std::string model_config_to_text(const ModelConfig& c) {
  Json j;
  j["num_classes"] = c.num_classes;
  j["input_size"] = c.input_size;
  j["width_multiple"] = c.width_multiple;
  j["stage_widths"] = c.stage_widths;
  j["blocks_per_stage"] = c.blocks_per_stage;
  j["neck_air_blocks"] = c.neck_air_blocks;
  j["use_air"] = c.use_air;
  j["use_dpdf"] = c.use_dpdf;
  j["include_sppf"] = c.include_sppf;
  j["head_channels"] = c.head_channels;
  j["score_threshold"] = c.score_threshold;
  j["nms_iou_threshold"] = c.nms_iou_threshold;
  j["dropout"] = c.dropout;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kClassPrior = 0.01;

template <typename T>
ConvBias<T> make_conv_bias(std::int64_t in, std::int64_t out, double bias_value, Rng& rng) {
  ConvBias<T> p;
  p.spec = Conv2dSpec::pointwise(in, out);
  p.spec.has_bias = true;
  p.weight = Tensor<T>::kaiming(p.spec.weight_shape(), p.spec.fan_in(), rng);
  p.weight.set_requires_grad(true);
  p.bias = Tensor<T>::constant({1, out, 1, 1}, static_cast<T>(bias_value));
  p.bias.set_requires_grad(true);
  return p;
}

}  // namespace

template <typename T>
Model<T> Model<T>::build(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model m;
  m.config_ = config;
  const auto w = config.widths();

  auto make_down = [&](std::int64_t in, std::int64_t out) -> Downsample {
    if (config.use_dpdf) return DpdfBlockParams<T>::make(in, out, rng);
    return ConvBn<T>::make(Conv2dSpec::dense(in, out, 3, 2), rng);
  };
  auto make_air_stack = [&](std::int64_t c, std::int64_t n) {
    std::vector<AirBlockParams<T>> blocks;
    for (std::int64_t i = 0; i < n; ++i) blocks.push_back(AirBlockParams<T>::make(c, rng, config.dropout));
    return blocks;
  };
  auto make_fusion = [&](std::int64_t in, std::int64_t out) -> Fusion {
    if (!config.use_air) return C2fParams<T>::make(in, out, 1, false, rng);
    AirFusion f;
    f.squeeze = ConvBn<T>::make(Conv2dSpec::pointwise(in, out), rng);
    f.blocks = make_air_stack(out, config.neck_air_blocks);
    return f;
  };

  m.stem_ = ConvBn<T>::make(Conv2dSpec::dense(3, w[0], 3, 2), rng);
  for (std::size_t i = 0; i < 4; ++i) {
    Downsample down = make_down(w[i], w[i + 1]);
    StageBody body = config.use_air ? StageBody{AirStack{make_air_stack(w[i + 1], config.blocks_per_stage[i])}}
                                    : StageBody{C2fParams<T>::make(w[i + 1], w[i + 1], config.blocks_per_stage[i],
                                                                   true, rng)};
    m.stages_.push_back(Stage{std::move(down), std::move(body)});
  }
  if (config.include_sppf) m.sppf_ = SppfParams<T>::make(w[4], rng);

  m.td_p4_ = make_fusion(w[4] + w[3], w[3]);
  m.td_p3_ = make_fusion(w[3] + w[2], w[2]);
  m.down_p3_ = make_down(w[2], w[2]);
  m.bu_p4_ = make_fusion(w[2] + w[3], w[3]);
  m.down_p4_ = make_down(w[3], w[3]);
  m.bu_p5_ = make_fusion(w[3] + w[4], w[4]);

  const std::int64_t hc = config.head_channels;
  const double cls_bias = std::log(kClassPrior / (1 - kClassPrior));
  for (std::size_t s = 0; s < 3; ++s) {
    const std::int64_t cin = w[s + 2];
    HeadScale& h = m.head_[s];
    h.box.cv1 = ConvBn<T>::make(Conv2dSpec::dense(cin, hc, 3), rng);
    h.box.cv2 = ConvBn<T>::make(Conv2dSpec::dense(hc, hc, 3), rng);
    h.box.out = make_conv_bias<T>(hc, 4, 0.0, rng);
    h.cls.cv1 = ConvBn<T>::make(Conv2dSpec::dense(cin, hc, 3), rng);
    h.cls.cv2 = ConvBn<T>::make(Conv2dSpec::dense(hc, hc, 3), rng);
    h.cls.out = make_conv_bias<T>(hc, config.num_classes, cls_bias, rng);
  }
  m.register_all();
  return m;
}

template <typename T>
void Model<T>::register_all() {
  tensors_.clear();
  auto add = [this](const std::string& name, const Tensor<T>& t, bool trainable) {
    tensors_.push_back({name, t, trainable});
  };
  auto visit_down = [&](const Downsample& d, const std::string& prefix) {
    std::visit([&](const auto& p) { p.visit(prefix, add); }, d);
  };
  auto visit_airs = [&](const std::vector<AirBlockParams<T>>& blocks, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".air" + std::to_string(i), add);
  };
  auto visit_fusion = [&](const Fusion& f, const std::string& prefix) {
    if (const auto* c = std::get_if<C2fParams<T>>(&f)) {
      c->visit(prefix + ".c2f", add);
    } else {
      const auto& a = std::get<AirFusion>(f);
      a.squeeze.visit(prefix + ".squeeze", add);
      visit_airs(a.blocks, prefix);
    }
  };

  stem_.visit("backbone.stem", add);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string prefix = "backbone.stage" + std::to_string(i + 1);
    visit_down(stages_[i].down, prefix + ".down");
    if (const auto* c = std::get_if<C2fParams<T>>(&stages_[i].body))
      c->visit(prefix + ".c2f", add);
    else
      visit_airs(std::get<AirStack>(stages_[i].body).blocks, prefix);
  }
  if (sppf_) sppf_->visit("backbone.sppf", add);
  visit_fusion(td_p4_, "neck.td_p4");
  visit_fusion(td_p3_, "neck.td_p3");
  visit_down(down_p3_, "neck.down_p3");
  visit_fusion(bu_p4_, "neck.bu_p4");
  visit_down(down_p4_, "neck.down_p4");
  visit_fusion(bu_p5_, "neck.bu_p5");
  static const char* const kScale[] = {"p3", "p4", "p5"};
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string prefix = std::string("head.") + kScale[s];
    for (const auto& [branch, name] : {std::pair{&head_[s].box, "box"}, std::pair{&head_[s].cls, "cls"}}) {
      branch->cv1.visit(prefix + "." + name + ".cv1", add);
      branch->cv2.visit(prefix + "." + name + ".cv2", add);
      branch->out.visit(prefix + "." + name + ".out", add);
    }
  }
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& t : tensors_)
    if (t.trainable) out.push_back(t.tensor);
  return out;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& t : tensors_)
    if (t.trainable) t.tensor.zero_grad();
}

template <typename T>
Tensor<T> Model<T>::run_down(const Downsample& d, const Tensor<T>& x, Mode mode) const {
  if (const auto* c = std::get_if<ConvBn<T>>(&d)) return cbs(x, *c, mode);
  return dpdf(x, std::get<DpdfBlockParams<T>>(d), mode);
}

template <typename T>
Tensor<T> Model<T>::run_body(const StageBody& b, const Tensor<T>& x, Mode mode, Rng* rng) const {
  if (const auto* c = std::get_if<C2fParams<T>>(&b)) return c2f(x, *c, mode);
  Tensor<T> y = x;
  for (const auto& block : std::get<AirStack>(b).blocks) y = air(y, block, mode, rng);
  return y;
}

template <typename T>
Tensor<T> Model<T>::run_fusion(const Fusion& f, const Tensor<T>& x, Mode mode, Rng* rng) const {
  if (const auto* c = std::get_if<C2fParams<T>>(&f)) return c2f(x, *c, mode);
  const auto& a = std::get<AirFusion>(f);
  Tensor<T> y = cbs(x, a.squeeze, mode);
  for (const auto& block : a.blocks) y = air(y, block, mode, rng);
  return y;
}

template <typename T>
Tensor<T> Model<T>::run_branch(const HeadBranch& b, const Tensor<T>& x, Mode mode) const {
  auto h = cbs(cbs(x, b.cv1, mode), b.cv2, mode);
  return conv2d(h, b.out.spec, b.out.weight, &b.out.bias);
}

template <typename T>
typename Model<T>::Maps Model<T>::forward(const Tensor<T>& batch, Mode mode, Rng* rng) const {
  const Shape s = batch.shape();
  if (s.c != 3) throw ContractError("forward expects 3 input channels, got " + s.str());
  if (s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0)
    throw ContractError("forward needs H and W divisible by 32, got " + s.str());

  Tensor<T> x = cbs(batch, stem_, mode);
  std::array<Tensor<T>, 4> feats;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = run_down(stages_[i].down, x, mode);
    x = run_body(stages_[i].body, x, mode, rng);
    feats[i] = x;
  }
  Tensor<T> p5 = sppf_ ? sppf(feats[3], *sppf_, mode) : feats[3];
  const Tensor<T>& p4 = feats[2];
  const Tensor<T>& p3 = feats[1];

  Tensor<T> t4 = run_fusion(td_p4_, concat_channels<T>({upsample_nearest(p5, 2), p4}), mode, rng);
  Tensor<T> o3 = run_fusion(td_p3_, concat_channels<T>({upsample_nearest(t4, 2), p3}), mode, rng);
  Tensor<T> o4 = run_fusion(bu_p4_, concat_channels<T>({run_down(down_p3_, o3, mode), t4}), mode, rng);
  Tensor<T> o5 = run_fusion(bu_p5_, concat_channels<T>({run_down(down_p4_, o4, mode), p5}), mode, rng);

  const std::array<const Tensor<T>*, 3> levels{&o3, &o4, &o5};
  Maps out;
  for (std::size_t i = 0; i < 3; ++i) {
    const HeadScale& h = head_[i];
    out[i] = concat_channels<T>({run_branch(h.box, *levels[i], mode), run_branch(h.cls, *levels[i], mode)});
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<Detection> decode(const typename Model<T>::Maps& maps, double score_threshold, std::int64_t b) {
  std::vector<Detection> out;
  for (std::size_t level = 0; level < maps.size(); ++level) {
    const Tensor<T>& m = maps[level];
    const Shape s = m.shape();
    if (s.c < 5) throw ShapeError("decode expects at least 5 channels, got " + s.str());
    if (b < 0 || b >= s.n) throw ContractError("decode batch index out of range for " + s.str());
    const double stride = static_cast<double>(ModelConfig::kStrides[level]);
    const double img_w = static_cast<double>(s.w) * stride;
    const double img_h = static_cast<double>(s.h) * stride;
    auto softplus_d = [](double v) { return v > 20 ? v : std::log1p(std::exp(v)); };
    for (std::int64_t i = 0; i < s.h; ++i) {
      for (std::int64_t j = 0; j < s.w; ++j) {
        Box box;
        bool box_ready = false;
        for (std::int64_t k = 4; k < s.c; ++k) {
          const double logit = static_cast<double>(m.at(b, k, i, j));
          const double score = 1.0 / (1.0 + std::exp(-logit));
          if (!(score >= score_threshold)) continue;
          if (!box_ready) {
            const double cx = (static_cast<double>(j) + 0.5) * stride;
            const double cy = (static_cast<double>(i) + 0.5) * stride;
            const double l = stride * softplus_d(m.at(b, 0, i, j));
            const double t = stride * softplus_d(m.at(b, 1, i, j));
            const double r = stride * softplus_d(m.at(b, 2, i, j));
            const double btm = stride * softplus_d(m.at(b, 3, i, j));
            const double x1 = std::clamp((cx - l) / img_w, 0.0, 1.0);
            const double y1 = std::clamp((cy - t) / img_h, 0.0, 1.0);
            const double x2 = std::clamp((cx + r) / img_w, 0.0, 1.0);
            const double y2 = std::clamp((cy + btm) / img_h, 0.0, 1.0);
            box = Box::from_corners(x1, y1, x2, y2);
            box_ready = true;
          }
          if (!(box.w > 0 && box.h > 0)) break;
          out.push_back({"", static_cast<int>(k - 4), score, box});
        }
      }
    }
  }
  return out;
}

template <typename T>
std::vector<Detection> decode(const typename Model<T>::Maps& maps, const ModelConfig& config, std::int64_t b) {
  return decode<T>(maps, config.score_threshold, b);
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].class_id < dets[b].class_id;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    bool keep = true;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && !(iou(k.box, d.box) < iou_threshold)) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(d);
  }
  return kept;
}

#define FIREAD_INSTANTIATE_MODEL(T)                                                                     \
  template class Model<T>;                                                                              \
  template std::vector<Detection> decode<T>(const Model<T>::Maps&, const ModelConfig&, std::int64_t); \
  template std::vector<Detection> decode<T>(const Model<T>::Maps&, double, std::int64_t);

FIREAD_INSTANTIATE_MODEL(float)
FIREAD_INSTANTIATE_MODEL(double)
FIREAD_INSTANTIATE_MODEL(long double)

}  // namespace firead
