#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "firead/loss.hpp"
#include "firead/model.hpp"
#include "synth.hpp"

namespace firead::tools {

/// Adam with decoupled weight decay. Decay applies to tensors whose name ends
/// in ".weight" (conv and linear kernels); norms, biases and alpha_raw are
/// exempt. Bias-corrected moments; eps added outside the square root.
struct AdamWOptions {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

class AdamW {
 public:
  AdamW(std::vector<NamedTensor<float>> tensors, AdamWOptions options);
  void step();
  std::int64_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor<float> tensor;
    bool decay = false;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Slot> slots_;
  AdamWOptions opt_;
  std::int64_t t_ = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, double loss)
      : std::runtime_error("loss became non-finite at step " + std::to_string(step)), step_(step), loss_(loss) {}
  int step() const { return step_; }
  double loss() const { return loss_; }

 private:
  int step_;
  double loss_;
};

struct TrainOptions {
  int steps = 300;
  AdamWOptions optimizer;
  std::uint64_t seed = 0;
  LossOptions loss;
  /// Called after each step with (1-based step, loss before the update).
  std::function<void(int, double)> on_step;
};

struct TrainResult {
  Model<float> model;
  std::vector<double> losses;
};

/// Default configuration for train-toy: the toy model at 128 px with one
/// block per stage and 32 head channels.
ModelConfig toy_train_config();

/// Full-batch training on the samples, letterboxed to config.input_size.
TrainResult train_toy(const ModelConfig& config, const std::vector<SynthSample>& samples, const TrainOptions& options);

/// Batched (N, 3, S, S) tensor of letterboxed samples and their targets.
struct Batch {
  Tensor<float> images;
  std::vector<ImageTargets> targets;
};
Batch make_batch(const ModelConfig& config, const std::vector<SynthSample>& samples);

/// Inference-mode detections (after NMS) for one letterboxed image, boxes
/// normalized to the source image.
std::vector<Detection> detect(const Model<float>& model, const Image& image, const std::string& name,
                              double score_threshold, double nms_iou_threshold);

}  // namespace firead::tools
