#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tinyfit/error.hpp"

namespace tinyfit {

/// IEEE CRC-32 (the zlib/PNG/Ethernet polynomial).
std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept;

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  /// u8 length prefix followed by the bytes; names longer than 255 bytes are rejected.
  void short_string(std::string_view s) {
    if (s.size() > 255) throw Error(Errc::BadInput, "name longer than 255 bytes: " + std::string(s));
    u8(static_cast<std::uint8_t>(s.size()));
    raw(s);
  }

  std::size_t size() const noexcept { return buf_.size(); }
  const std::vector<std::uint8_t>& data() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() && { return std::move(buf_); }

 private:
  template <class U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian decoder over a borrowed buffer. Reading past
/// the end raises Errc::Truncated.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }

  std::span<const std::uint8_t> bytes(std::size_t n) {
    require(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::string short_string() {
    const std::size_t n = u8();
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw Error(Errc::Truncated, "unexpected end of data",
                  {{"offset", std::to_string(pos_)}, {"needed", std::to_string(n)}});
  }

  template <class U>
  U get() {
    require(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

/// Little-endian loads from raw storage (no alignment requirement).
inline std::int32_t load_i32_le(const std::uint8_t* p) noexcept {
  return static_cast<std::int32_t>(static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                                   static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24);
}

inline float load_f32_le(const std::uint8_t* p) noexcept {
  return std::bit_cast<float>(static_cast<std::uint32_t>(load_i32_le(p)));
}

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace tinyfit
