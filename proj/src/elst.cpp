#include "elsnet/elst.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace elsnet::elst {
namespace {

constexpr char kMagic[4] = {'E', 'L', 'S', 'T'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

std::vector<std::uint8_t> header(const Dims& dims, DType dtype, std::size_t payload_bytes) {
  if (dims.empty() || dims.size() > 255) throw DimensionError("ELST supports 1..255 dimensions");
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * dims.size() + payload_bytes);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(dims.size()));
  for (std::size_t d : dims) {
    if (d == 0 || d > 0xffffffffULL) throw DimensionError("ELST extents must fit in u32 and be positive");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  return out;
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError(std::string("truncated ELST data while reading ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode(const Dims& dims, std::span<const float> values) {
  if (numel_of(dims) != values.size()) throw DimensionError("ELST payload length does not match extents");
  auto out = header(dims, DType::F32, 4 * values.size());
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<std::uint8_t> encode(const Dims& dims, std::span<const std::uint8_t> values) {
  if (numel_of(dims) != values.size()) throw DimensionError("ELST payload length does not match extents");
  auto out = header(dims, DType::U8, values.size());
  out.insert(out.end(), values.begin(), values.end());
  return out;
}

Array decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad ELST magic", 0);
  for (int i = 0; i < 4; ++i) r.u8("magic");
  const std::size_t version_at = r.pos();
  if (r.u16("version") != kVersion) throw FormatError("unsupported ELST version", version_at);
  const std::size_t dtype_at = r.pos();
  const std::uint8_t code = r.u8("dtype");
  if (code > 1) throw FormatError("unknown ELST dtype code " + std::to_string(code), dtype_at);
  Array out;
  out.dtype = static_cast<DType>(code);
  const std::size_t ndim_at = r.pos();
  const std::uint8_t ndim = r.u8("ndim");
  if (ndim == 0) throw FormatError("ELST ndim must be positive", ndim_at);
  std::size_t n = 1;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const std::size_t at = r.pos();
    const std::uint32_t e = r.u32("extent");
    if (e == 0) throw FormatError("ELST extent must be positive", at);
    out.dims.push_back(e);
    n *= e;
  }
  const std::size_t width = out.dtype == DType::F32 ? 4 : 1;
  r.need(n * width, "payload");
  if (r.remaining() != n * width) throw FormatError("trailing bytes after ELST payload", r.pos() + n * width);
  if (out.dtype == DType::F32) {
    out.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.f32[i] = std::bit_cast<float>(r.u32("payload"));
  } else {
    out.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()), bytes.end());
  }
  return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write(const std::filesystem::path& path, const Dims& dims, std::span<const float> values) {
  write_bytes(path, encode(dims, values));
}

void write(const std::filesystem::path& path, const Dims& dims, std::span<const std::uint8_t> values) {
  write_bytes(path, encode(dims, values));
}

Array read(const std::filesystem::path& path) { return decode(read_bytes(path)); }

}  // namespace elsnet::elst
