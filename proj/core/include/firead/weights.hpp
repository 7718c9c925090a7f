#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "firead/model.hpp"

namespace firead {

// Archive layout (all integers little-endian, no padding):
//   "FWAD" | u32 version | u32 record count
//   per record: u16 name length | name bytes | u8 dtype | u8 rank |
//               u32 extents[rank] | element data
// Tensors of shape (1, C, 1, 1) are stored with rank 1 and extent C;
// everything else with rank 4 (N, C, H, W).

enum class Dtype : std::uint8_t { f32 = 0, f16 = 1 };

inline constexpr std::uint32_t kArchiveVersion = 1;

std::size_t dtype_bytes(Dtype d);

/// IEEE binary16 conversion, round to nearest even; overflow goes to inf.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

std::vector<std::uint32_t> archive_extents(const Shape& shape);

/// Exact serialized size in bytes for these records.
template <typename T>
std::size_t archive_size(const std::vector<NamedTensor<T>>& tensors, Dtype dtype);

template <typename T>
std::vector<std::uint8_t> save_weights(const std::vector<NamedTensor<T>>& tensors, Dtype dtype = Dtype::f32);

template <typename T>
std::vector<std::uint8_t> save_weights(const Model<T>& model, Dtype dtype = Dtype::f32) {
  return save_weights(model.tensors(), dtype);
}

/// Records must match the targets one-to-one in order, name and extents;
/// f16 records are widened. The whole archive is validated before any target
/// is written, so a FormatError leaves the targets untouched.
template <typename T>
void load_weights(std::span<const std::uint8_t> bytes, const std::vector<NamedTensor<T>>& targets);

template <typename T>
void load_weights(std::span<const std::uint8_t> bytes, Model<T>& model) {
  load_weights(bytes, model.tensors());
}

/// Header-level view of an archive without a target model.
struct ArchiveRecordInfo {
  std::string name;
  Dtype dtype = Dtype::f32;
  std::vector<std::uint32_t> extents;
  std::uint64_t elements = 0;
};
std::vector<ArchiveRecordInfo> inspect_archive(std::span<const std::uint8_t> bytes);

#define FIREAD_EXTERN_WEIGHTS(T)                                                                       \
  extern template std::size_t archive_size(const std::vector<NamedTensor<T>>&, Dtype);                \
  extern template std::vector<std::uint8_t> save_weights(const std::vector<NamedTensor<T>>&, Dtype); \
  extern template void load_weights(std::span<const std::uint8_t>, const std::vector<NamedTensor<T>>&);

FIREAD_EXTERN_WEIGHTS(float)
FIREAD_EXTERN_WEIGHTS(double)
#undef FIREAD_EXTERN_WEIGHTS

}  // namespace firead
