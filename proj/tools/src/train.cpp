#include "train.hpp"

#include <cmath>

#include "firead/errors.hpp"

namespace firead::tools {

AdamW::AdamW(std::vector<NamedTensor<float>> tensors, AdamWOptions options) : opt_(options) {
  for (auto& t : tensors) {
    if (!t.trainable) continue;
    Slot s;
    s.tensor = t.tensor;
    s.decay = t.name.size() >= 7 && t.name.compare(t.name.size() - 7, 7, ".weight") == 0;
    s.m.assign(static_cast<std::size_t>(t.tensor.numel()), 0.0);
    s.v.assign(static_cast<std::size_t>(t.tensor.numel()), 0.0);
    slots_.push_back(std::move(s));
  }
}

void AdamW::step() {
  ++t_;
  const double c1 = 1 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    const auto g = s.tensor.grad();
    if (g.empty()) continue;
    auto w = s.tensor.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      s.m[i] = opt_.beta1 * s.m[i] + (1 - opt_.beta1) * gi;
      s.v[i] = opt_.beta2 * s.v[i] + (1 - opt_.beta2) * gi * gi;
      double wi = w[i];
      if (s.decay) wi -= opt_.lr * opt_.weight_decay * wi;
      wi -= opt_.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + opt_.eps);
      w[i] = static_cast<float>(wi);
    }
  }
}

ModelConfig toy_train_config() {
  ModelConfig c = ModelConfig::toy();
  c.input_size = 128;
  c.blocks_per_stage = {1, 1, 1, 1};
  c.head_channels = 32;
  return c;
}

Batch make_batch(const ModelConfig& config, const std::vector<SynthSample>& samples) {
  if (samples.empty()) throw ContractError("training needs at least one sample");
  const std::int64_t n = static_cast<std::int64_t>(samples.size());
  const std::int64_t s = config.input_size;
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(n * 3 * s * s));
  Batch batch;
  for (const auto& sample : samples) {
    const auto g = Letterbox::fit(sample.image.width, sample.image.height, config.input_size);
    const auto t = to_tensor<float>(letterbox(sample.image, g));
    data.insert(data.end(), t.data().begin(), t.data().end());
    std::vector<GroundTruthBox> boxes;
    for (auto b : sample.boxes) {
      b.box = g.to_network(b.box);
      boxes.push_back(b);
    }
    batch.targets.push_back(assign(boxes, config));
  }
  batch.images = Tensor<float>::from_data({n, 3, s, s}, std::move(data));
  return batch;
}

TrainResult train_toy(const ModelConfig& config, const std::vector<SynthSample>& samples, const TrainOptions& options) {
  Rng rng(options.seed);
  TrainResult result{Model<float>::build(config, rng), {}};
  Model<float>& model = result.model;
  const Batch batch = make_batch(config, samples);
  AdamW optimizer(model.tensors(), options.optimizer);

  for (int step = 1; step <= options.steps; ++step) {
    model.zero_grad();
    const auto maps = model.forward(batch.images, Mode::train, &rng);
    const auto loss = detection_loss<float>(maps, batch.targets, config.input_size, options.loss);
    const double value = static_cast<double>(loss.total.item());
    if (!std::isfinite(value)) throw DivergenceError(step, value);
    backward(loss.total);
    optimizer.step();
    result.losses.push_back(value);
    if (options.on_step) options.on_step(step, value);
  }
  return result;
}

std::vector<Detection> detect(const Model<float>& model, const Image& image, const std::string& name,
                              double score_threshold, double nms_iou_threshold) {
  const int size = model.config().input_size;
  const auto g = Letterbox::fit(image.width, image.height, size);
  Model<float>::Maps maps;
  {
    NoGradGuard no_grad;
    maps = model.forward(to_tensor<float>(letterbox(image, g)), Mode::infer);
  }
  std::vector<Detection> out;
  for (auto& d : nms(decode<float>(maps, score_threshold), nms_iou_threshold)) {
    d.image = name;
    d.box = g.to_source(d.box);
    if (d.box.w > 0 && d.box.h > 0) out.push_back(std::move(d));
  }
  return out;
}

}  // namespace firead::tools
