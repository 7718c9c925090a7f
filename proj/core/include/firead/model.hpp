#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "firead/blocks.hpp"
#include "firead/box.hpp"
#include "firead/tensor.hpp"

namespace firead {

enum class Variant { baseline, air, dpdf, full };

std::string_view variant_name(Variant v);
/// Accepts "baseline", "air", "dpdf", "full"; throws ConfigError otherwise.
Variant parse_variant(std::string_view name);

/// Declarative network description. Defaults describe the full detector at
/// 640x640 with YOLOv8n-style scaling.
struct ModelConfig {
  int num_classes = 1;
  int input_size = 640;
  double width_multiple = 0.25;
  std::array<std::int64_t, 5> stage_widths{64, 128, 256, 512, 1024};
  /// Repeats per backbone stage: AIR blocks when use_air, else the C2f depth.
  std::array<std::int64_t, 4> blocks_per_stage{1, 2, 2, 1};
  /// AIR blocks after each neck fusion squeeze (use_air only).
  std::int64_t neck_air_blocks = 0;
  bool use_air = true;
  bool use_dpdf = true;
  bool include_sppf = true;
  std::int64_t head_channels = 64;
  double score_threshold = 0.25;
  double nms_iou_threshold = 0.45;
  double dropout = 0.0;

  static constexpr std::array<std::int64_t, 3> kStrides{8, 16, 32};

  static ModelConfig preset(Variant v);
  /// Small configuration for gradient checks and desk-scale training.
  static ModelConfig toy();

  /// round(stage_widths[i] * width_multiple).
  std::array<std::int64_t, 5> widths() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Parses the structured-text (JSON) config; unspecified fields keep their
/// defaults, unknown keys are rejected with ConfigError.
ModelConfig parse_model_config(std::string_view text, const ModelConfig& base = {});
std::string model_config_to_text(const ModelConfig& config);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

/// 1x1 convolution with bias and no normalization (detection outputs).
template <typename T>
struct ConvBias {
  Conv2dSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    fn(prefix + ".weight", weight, true);
    fn(prefix + ".bias", bias, true);
  }
};

template <typename T>
class Model {
 public:
  using Maps = std::array<Tensor<T>, 3>;

  /// Initialization is fully determined by the rng state.
  static Model build(const ModelConfig& config, Rng& rng);

  /// Raw per-scale maps (N, 4 + classes, H/s, W/s) for strides 8/16/32:
  /// channels 0..3 are box regressors, the rest class logits.
  Maps forward(const Tensor<T>& batch, Mode mode, Rng* rng = nullptr) const;

  const ModelConfig& config() const { return config_; }
  /// Every named tensor (parameters and BN buffers) in registration order.
  const std::vector<NamedTensor<T>>& tensors() const { return tensors_; }
  /// Trainable tensors only.
  std::vector<Tensor<T>> parameters() const;
  void zero_grad();

 private:
  using Downsample = std::variant<ConvBn<T>, DpdfBlockParams<T>>;
  struct AirStack {
    std::vector<AirBlockParams<T>> blocks;
  };
  using StageBody = std::variant<C2fParams<T>, AirStack>;
  struct AirFusion {
    ConvBn<T> squeeze;
    std::vector<AirBlockParams<T>> blocks;
  };
  using Fusion = std::variant<C2fParams<T>, AirFusion>;
  struct Stage {
    Downsample down;
    StageBody body;
  };
  struct HeadBranch {
    ConvBn<T> cv1;
    ConvBn<T> cv2;
    ConvBias<T> out;
  };
  struct HeadScale {
    HeadBranch box;
    HeadBranch cls;
  };

  Tensor<T> run_down(const Downsample& d, const Tensor<T>& x, Mode mode) const;
  Tensor<T> run_body(const StageBody& b, const Tensor<T>& x, Mode mode, Rng* rng) const;
  Tensor<T> run_fusion(const Fusion& f, const Tensor<T>& x, Mode mode, Rng* rng) const;
  Tensor<T> run_branch(const HeadBranch& b, const Tensor<T>& x, Mode mode) const;
  void register_all();

  ModelConfig config_;
  ConvBn<T> stem_;
  std::vector<Stage> stages_;
  std::optional<SppfParams<T>> sppf_;
  Fusion td_p4_, td_p3_, bu_p4_, bu_p5_;
  Downsample down_p3_, down_p4_;
  std::array<HeadScale, 3> head_;
  std::vector<NamedTensor<T>> tensors_;
};

/// Anchor-free decode of one image of the batch. For a cell (i, j) at stride
/// s the ltrb distances are s * softplus(raw[0..3]) from the center
/// ((j + 0.5) s, (i + 0.5) s); scores are sigmoid(logit). Keeps scores
/// >= score_threshold; boxes are normalized to the input and clamped.
template <typename T>
std::vector<Detection> decode(const typename Model<T>::Maps& maps, const ModelConfig& config,
                              std::int64_t batch_index = 0);

/// Same, with an explicit threshold.
template <typename T>
std::vector<Detection> decode(const typename Model<T>::Maps& maps, double score_threshold,
                              std::int64_t batch_index = 0);

/// Greedy per-class suppression. Sort by score descending (ties: lower
/// class_id, then input order); keep iff IoU with every kept detection of the
/// same class is below the threshold. Output is in keep order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

#define FIREAD_EXTERN_MODEL(T)                                                                                   \
  extern template class Model<T>;                                                                               \
  extern template std::vector<Detection> decode<T>(const Model<T>::Maps&, const ModelConfig&, std::int64_t); \
  extern template std::vector<Detection> decode<T>(const Model<T>::Maps&, double, std::int64_t);

FIREAD_EXTERN_MODEL(float)
FIREAD_EXTERN_MODEL(double)
FIREAD_EXTERN_MODEL(long double)
#undef FIREAD_EXTERN_MODEL

}  // namespace firead
