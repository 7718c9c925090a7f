#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "firead/model.hpp"

namespace firead {

struct ProfileRow {
  std::string layer;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

/// Parameters count trainable elements only (BN running statistics are
/// buffers). MACs count conv2d and linear work; normalization, activations,
/// pooling and elementwise products are treated as free.
struct ProfileReport {
  std::vector<ProfileRow> rows;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  double gflops = 0;  // 2 * macs / 1e9
  int input_size = 0;
  std::int64_t buffer_elements = 0;
  std::uint64_t data_bytes_f32 = 0;     // params * 4
  std::uint64_t data_bytes_f16 = 0;     // params * 2
  std::uint64_t archive_bytes_f32 = 0;  // exact serialized size, buffers included
  std::uint64_t archive_bytes_f16 = 0;
};

/// Layer a tensor name belongs to, e.g. "backbone.stage2.air1.attn.qkv.weight"
/// -> "backbone.stage2.air1".
std::string layer_of(const std::string& tensor_name);

template <typename T>
std::int64_t count_params(const Model<T>& model);

/// Runs a counting-only forward pass at input_size x input_size.
template <typename T>
std::int64_t count_macs(const Model<T>& model, int input_size);

template <typename T>
ProfileReport profile(const Model<T>& model, int input_size);

std::string format_report(const ProfileReport& report);
/// One JSON object per line: {"layer", "params", "macs"}, then a totals line.
std::string format_report_records(const ProfileReport& report);

struct AblationRow {
  Variant variant = Variant::baseline;
  ProfileReport report;
};

/// Profiles each variant of `base` (flags overridden) with a fixed seed.
std::vector<AblationRow> ablation_report(const ModelConfig& base, int input_size,
                                         const std::vector<Variant>& variants = {Variant::baseline, Variant::air,
                                                                                 Variant::dpdf, Variant::full});
std::string format_ablation(const std::vector<AblationRow>& rows);

#define FIREAD_EXTERN_PROFILER(T)                                        \
  extern template std::int64_t count_params(const Model<T>&);           \
  extern template std::int64_t count_macs(const Model<T>&, int);        \
  extern template ProfileReport profile(const Model<T>&, int);

FIREAD_EXTERN_PROFILER(float)
FIREAD_EXTERN_PROFILER(double)
#undef FIREAD_EXTERN_PROFILER

}  // namespace firead
