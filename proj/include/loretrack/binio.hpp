#pragma once

// Little-endian primitives for the raster and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace loretrack::binio {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_f64s(std::string& out, std::span<const double> vs) {
  out.reserve(out.size() + 8 * vs.size());
  for (double v : vs) put_f64(out, v);
}

inline std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::vector<double> decode_f64s(std::string_view bytes) {
  std::vector<double> out(bytes.size() / 8);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::bit_cast<double>(get_le(p + 8 * i, 8));
  return out;
}

// Cursor over an in-memory byte buffer; reports whether enough bytes remain.
class Reader {
 public:
  explicit Reader(std::string_view buf) : buf_(buf) {}

  bool has(std::size_t n) const { return pos_ + n <= buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return take(8); }
  double f64() { return std::bit_cast<double>(take(8)); }
  std::string_view bytes(std::size_t n) {
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::uint64_t take(int n) {
    const auto v = get_le(reinterpret_cast<const unsigned char*>(buf_.data()) + pos_, n);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view buf_;
  std::size_t pos_ = 0;
};

}  // namespace loretrack::binio
