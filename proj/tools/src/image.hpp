#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "firead/box.hpp"
#include "firead/tensor.hpp"

namespace firead::tools {

/// 8-bit interleaved RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Binary PPM (P6, maxval 255). Throws FormatError on malformed data.
Image decode_ppm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& image);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

/// Aspect-preserving fit into a size x size square: scale = min(size / w,
/// size / h), content centered, borders filled with gray 114.
struct Letterbox {
  int size = 0;
  int source_width = 0;
  int source_height = 0;
  double scale = 1;
  int content_width = 0;
  int content_height = 0;
  int pad_x = 0;
  int pad_y = 0;

  static Letterbox fit(int source_width, int source_height, int size);

  /// Network-normalized box -> source-normalized box.
  Box to_source(const Box& net) const;
  /// Source-normalized box -> network-normalized box.
  Box to_network(const Box& src) const;
};

/// Bilinear resize (half-pixel centers) into the letterbox canvas.
Image letterbox(const Image& image, const Letterbox& geometry);

/// (1, 3, H, W) tensor with values in [0, 1].
template <typename T>
Tensor<T> to_tensor(const Image& image);

}  // namespace firead::tools
