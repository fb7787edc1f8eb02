#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lirank/errors.hpp"

namespace lirank::binary {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(std::string_view b) { out_.write(b.data(), static_cast<std::streamsize>(b.size())); }
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const float> vs) {
    for (float v : vs) f32(v);
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

 private:
  template <typename T>
  void le(T v) {
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, sizeof(T));
  }

  std::ostream& out_;
};

/// Every short read raises FormatError(Truncated) naming `what`.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string bytes(std::size_t n, const char* what) {
    std::string b(n, '\0');
    fill(b.data(), n, what);
    return b;
  }
  std::uint8_t u8(const char* what) {
    char c;
    fill(&c, 1, what);
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32(const char* what) { return le<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return le<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  void f32s(std::span<float> out, const char* what) {
    std::vector<unsigned char> raw(out.size() * 4);
    fill(reinterpret_cast<char*>(raw.data()), raw.size(), what);
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t v = 0;
      for (std::size_t b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
      out[i] = std::bit_cast<float>(v);
    }
  }
  std::string str(const char* what) { return bytes(u32(what), what); }

  /// True when the stream has no bytes left.
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  std::uint64_t offset() { return static_cast<std::uint64_t>(in_.tellg()); }

 private:
  void fill(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(FormatErrorKind::Truncated, std::string("unexpected end of data reading ") + what);
    }
  }

  template <typename T>
  T le(const char* what) {
    unsigned char buf[sizeof(T)];
    fill(reinterpret_cast<char*>(buf), sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }

  std::istream& in_;
};

/// Checks an 8-byte magic, raising FormatError(BadMagic) on mismatch.
inline void expect_magic(Reader& r, std::string_view magic) {
  const std::string got = r.bytes(magic.size(), "magic");
  if (got != magic) {
    throw FormatError(FormatErrorKind::BadMagic,
                      "expected '" + std::string(magic) + "', found '" + got + "'");
  }
}

}  // namespace lirank::binary
