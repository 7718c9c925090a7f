#include "firead/weights.hpp"

#include <bit>
#include <cstring>

#include "firead/errors.hpp"

namespace firead {

namespace {

constexpr char kMagic[4] = {'F', 'W', 'A', 'D'};

class Writer {
 public:
  explicit Writer(std::size_t reserve) { out_.reserve(reserve); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n)
      throw FormatError("truncated archive at byte " + std::to_string(pos_) + " while reading " + what);
  }
  std::uint8_t u8(const std::string& what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint16_t u16(const std::string& what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const std::string& what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct ParsedRecord {
  ArchiveRecordInfo info;
  std::span<const std::uint8_t> data;
};

std::vector<ParsedRecord> parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic: not a weight archive");
  const std::uint32_t version = r.u32("version");
  if (version != kArchiveVersion)
    throw FormatError("unsupported archive version " + std::to_string(version) + " (expected " +
                      std::to_string(kArchiveVersion) + ")");
  const std::uint32_t count = r.u32("record count");

  std::vector<ParsedRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    ParsedRecord rec;
    const std::uint16_t len = r.u16(where + " name length");
    auto name = r.take(len, where + " name");
    rec.info.name.assign(name.begin(), name.end());
    const std::uint8_t dtype = r.u8(where + " dtype");
    if (dtype > 1) throw FormatError(where + " '" + rec.info.name + "': unknown dtype " + std::to_string(dtype));
    rec.info.dtype = static_cast<Dtype>(dtype);
    const std::uint8_t rank = r.u8(where + " rank");
    rec.info.elements = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::uint32_t e = r.u32(where + " extents");
      rec.info.extents.push_back(e);
      rec.info.elements *= e;
      if (rec.info.elements > bytes.size()) throw FormatError(where + " '" + rec.info.name + "': extents too large");
    }
    rec.data = r.take(static_cast<std::size_t>(rec.info.elements) * dtype_bytes(rec.info.dtype),
                      where + " '" + rec.info.name + "' data");
    out.push_back(std::move(rec));
  }
  if (r.remaining() != 0)
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after " + std::to_string(count) + " records");
  return out;
}

}  // namespace

std::size_t dtype_bytes(Dtype d) { return d == Dtype::f16 ? 2 : 4; }

std::uint16_t float_to_half(float value) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t abs = x & 0x7fffffffu;
  if (abs >= 0x7f800000u) {
    // inf or NaN (keep a quiet NaN payload bit)
    const std::uint32_t nan = abs > 0x7f800000u ? 0x0200u | ((abs >> 13) & 0x3ffu) : 0;
    return static_cast<std::uint16_t>(sign | 0x7c00u | nan);
  }
  if (abs >= 0x477ff000u) return static_cast<std::uint16_t>(sign | 0x7c00u);  // rounds to >= 65520
  if (abs < 0x38800000u) {
    // subnormal or zero in half precision
    if (abs < 0x33000000u) return static_cast<std::uint16_t>(sign);
    const std::uint32_t exp = abs >> 23;
    const std::uint32_t mant = (abs & 0x7fffffu) | 0x800000u;
    const std::uint32_t shift = 126u - exp;  // 14..24
    std::uint32_t h = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (h & 1u))) ++h;
    return static_cast<std::uint16_t>(sign | h);
  }
  std::uint32_t h = ((abs >> 13) - (112u << 10));
  const std::uint32_t rem = abs & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return static_cast<std::uint16_t>(sign | h);
}

float half_to_float(std::uint16_t bits) {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1fu;
  std::uint32_t mant = bits & 0x3ffu;
  std::uint32_t out;
  if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      out = sign | (static_cast<std::uint32_t>(112 - e) << 23) | ((mant & 0x3ffu) << 13);
    }
  } else if (exp == 31) {
    out = sign | 0x7f800000u | (mant << 13);
  } else {
    out = sign | ((exp + 112u) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(out);
}

std::vector<std::uint32_t> archive_extents(const Shape& s) {
  auto u = [](std::int64_t v) {
    if (v < 0 || v > 0xffffffffLL) throw SizeError("extent does not fit the archive format");
    return static_cast<std::uint32_t>(v);
  };
  if (s.n == 1 && s.h == 1 && s.w == 1) return {u(s.c)};
  return {u(s.n), u(s.c), u(s.h), u(s.w)};
}

template <typename T>
std::size_t archive_size(const std::vector<NamedTensor<T>>& tensors, Dtype dtype) {
  std::size_t total = 4 + 4 + 4;
  for (const auto& t : tensors) {
    total += 2 + t.name.size() + 1 + 1 + 4 * archive_extents(t.tensor.shape()).size();
    total += static_cast<std::size_t>(t.tensor.numel()) * dtype_bytes(dtype);
  }
  return total;
}

template <typename T>
std::vector<std::uint8_t> save_weights(const std::vector<NamedTensor<T>>& tensors, Dtype dtype) {
  Writer w(archive_size(tensors, dtype));
  w.bytes(kMagic, 4);
  w.u32(kArchiveVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw FormatError("tensor name too long: " + t.name.substr(0, 64) + "...");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(dtype));
    const auto ext = archive_extents(t.tensor.shape());
    w.u8(static_cast<std::uint8_t>(ext.size()));
    for (auto e : ext) w.u32(e);
    for (T v : t.tensor.data()) {
      const float f = static_cast<float>(v);
      if (dtype == Dtype::f16)
        w.u16(float_to_half(f));
      else
        w.u32(std::bit_cast<std::uint32_t>(f));
    }
  }
  return w.take();
}

template <typename T>
void load_weights(std::span<const std::uint8_t> bytes, const std::vector<NamedTensor<T>>& targets) {
  const auto records = parse(bytes);
  if (records.size() != targets.size())
    throw FormatError("archive has " + std::to_string(records.size()) + " records, model expects " +
                      std::to_string(targets.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& info = records[i].info;
    const std::string where = "record " + std::to_string(i) + " '" + info.name + "'";
    if (info.name != targets[i].name) throw FormatError(where + ": name mismatch, model expects '" + targets[i].name + "'");
    if (info.extents != archive_extents(targets[i].tensor.shape()))
      throw FormatError(where + ": extent mismatch, model expects " + targets[i].tensor.shape().str());
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    Tensor<T> dst = targets[i].tensor;
    auto out = dst.mutable_data();
    const std::uint8_t* p = rec.data.data();
    for (std::size_t k = 0; k < out.size(); ++k) {
      float f;
      if (rec.info.dtype == Dtype::f16) {
        f = half_to_float(static_cast<std::uint16_t>(p[2 * k] | (p[2 * k + 1] << 8)));
      } else {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[4 * k + static_cast<std::size_t>(b)]) << (8 * b);
        f = std::bit_cast<float>(u);
      }
      out[k] = static_cast<T>(f);
    }
  }
}

std::vector<ArchiveRecordInfo> inspect_archive(std::span<const std::uint8_t> bytes) {
  std::vector<ArchiveRecordInfo> out;
  for (auto& r : parse(bytes)) out.push_back(std::move(r.info));
  return out;
}

#define FIREAD_INSTANTIATE_WEIGHTS(T)                                                           \
  template std::size_t archive_size(const std::vector<NamedTensor<T>>&, Dtype);                \
  template std::vector<std::uint8_t> save_weights(const std::vector<NamedTensor<T>>&, Dtype); \
  template void load_weights(std::span<const std::uint8_t>, const std::vector<NamedTensor<T>>&);

FIREAD_INSTANTIATE_WEIGHTS(float)
FIREAD_INSTANTIATE_WEIGHTS(double)

}  // namespace firead
