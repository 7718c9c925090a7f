#include "image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "firead/errors.hpp"

namespace firead::tools {

namespace {

constexpr std::uint8_t kPadGray = 114;

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') tok.push_back(static_cast<char>(b[pos++]));
  if (tok.empty()) throw FormatError("PPM header truncated");
  return tok;
}

int header_int(const std::vector<std::uint8_t>& b, std::size_t& pos, const char* what) {
  const std::string tok = header_token(b, pos);
  if (tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw FormatError(std::string("PPM ") + what + " is not a valid integer: '" + tok + "'");
  return std::stoi(tok);
}

}  // namespace

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P6") throw FormatError("not a binary PPM (P6) image");
  Image img;
  img.width = header_int(bytes, pos, "width");
  img.height = header_int(bytes, pos, "height");
  const int maxval = header_int(bytes, pos, "maxval");
  if (img.width <= 0 || img.height <= 0) throw FormatError("PPM has an empty extent");
  if (maxval != 255) throw FormatError("only 8-bit PPM (maxval 255) is supported, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PPM header not terminated");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3;
  if (bytes.size() - pos < need)
    throw FormatError("PPM pixel data truncated: need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size() - pos));
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path + "'");
  return out;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing '" + path + "'");
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::string& path) {
  const auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

Image read_ppm(const std::string& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_ppm(const std::string& path, const Image& image) { write_file(path, encode_ppm(image)); }

Letterbox Letterbox::fit(int w, int h, int size) {
  if (w <= 0 || h <= 0 || size <= 0) throw ContractError("letterbox needs positive extents");
  Letterbox g;
  g.size = size;
  g.source_width = w;
  g.source_height = h;
  g.scale = std::min(static_cast<double>(size) / w, static_cast<double>(size) / h);
  g.content_width = std::clamp(static_cast<int>(std::lround(w * g.scale)), 1, size);
  g.content_height = std::clamp(static_cast<int>(std::lround(h * g.scale)), 1, size);
  g.pad_x = (size - g.content_width) / 2;
  g.pad_y = (size - g.content_height) / 2;
  return g;
}

Box Letterbox::to_source(const Box& net) const {
  const double s = size;
  const double sx = static_cast<double>(content_width) / source_width;
  const double sy = static_cast<double>(content_height) / source_height;
  Box b;
  b.cx = (net.cx * s - pad_x) / sx / source_width;
  b.cy = (net.cy * s - pad_y) / sy / source_height;
  b.w = net.w * s / sx / source_width;
  b.h = net.h * s / sy / source_height;
  const double x1 = std::clamp(b.x1(), 0.0, 1.0), x2 = std::clamp(b.x2(), 0.0, 1.0);
  const double y1 = std::clamp(b.y1(), 0.0, 1.0), y2 = std::clamp(b.y2(), 0.0, 1.0);
  return Box::from_corners(x1, y1, x2, y2);
}

Box Letterbox::to_network(const Box& src) const {
  const double s = size;
  const double sx = static_cast<double>(content_width) / source_width;
  const double sy = static_cast<double>(content_height) / source_height;
  return {(src.cx * source_width * sx + pad_x) / s, (src.cy * source_height * sy + pad_y) / s,
          src.w * source_width * sx / s, src.h * source_height * sy / s};
}

Image letterbox(const Image& src, const Letterbox& g) {
  Image out;
  out.width = g.size;
  out.height = g.size;
  out.rgb.assign(static_cast<std::size_t>(g.size) * g.size * 3, kPadGray);
  if (g.content_width == src.width && g.content_height == src.height) {
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x)
        for (int c = 0; c < 3; ++c) out.at(x + g.pad_x, y + g.pad_y, c) = src.at(x, y, c);
    return out;
  }
  const double fx = static_cast<double>(src.width) / g.content_width;
  const double fy = static_cast<double>(src.height) / g.content_height;
  for (int y = 0; y < g.content_height; ++y) {
    const double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double ty = sy - y0;
    for (int x = 0; x < g.content_width; ++x) {
      const double sx = std::clamp((x + 0.5) * fx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double tx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0, c) * (1 - tx) + src.at(x1, y0, c) * tx;
        const double bot = src.at(x0, y1, c) * (1 - tx) + src.at(x1, y1, c) * tx;
        out.at(x + g.pad_x, y + g.pad_y, c) = static_cast<std::uint8_t>(std::lround(top * (1 - ty) + bot * ty));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  const std::int64_t h = image.height, w = image.width;
  std::vector<T> data(static_cast<std::size_t>(3 * h * w));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        data[static_cast<std::size_t>((c * h + y) * w + x)] =
            static_cast<T>(image.at(static_cast<int>(x), static_cast<int>(y), static_cast<int>(c))) / T(255);
  return Tensor<T>::from_data({1, 3, h, w}, std::move(data));
}

template Tensor<float> to_tensor(const Image&);
template Tensor<double> to_tensor(const Image&);

}  // namespace firead::tools
