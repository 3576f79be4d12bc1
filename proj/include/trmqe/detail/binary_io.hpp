// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian primitive encoding shared by the embedding and checkpoint formats.

#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "trmqe/errors.hpp"

namespace trmqe::detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& os) : os_(os) {}

  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> vs) {
    if constexpr (std::endian::native == std::endian::little) {
      os_.write(reinterpret_cast<const char*>(vs.data()), static_cast<std::streamsize>(vs.size() * 4));
    } else {
      for (float v : vs) f32(v);
    }
  }
  void raw(std::string_view bytes) { os_.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); }
  // u32 length prefix followed by the bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

 private:
  template <typename U>
  void put_le(U v) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os_.write(buf, sizeof(U));
  }
  std::ostream& os_;
};

// Reads throw ShortRead on end of stream; callers translate it into a format error.
class ByteReader {
 public:
  struct ShortRead {};

  explicit ByteReader(std::istream& is) : is_(is) {}

  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  void f32s(std::span<float> out) {
    if constexpr (std::endian::native == std::endian::little) {
      read_exact(reinterpret_cast<char*>(out.data()), out.size() * 4);
    } else {
      for (auto& v : out) v = f32();
    }
  }
  std::string raw(std::size_t n) {
    std::string s(n, '\0');
    read_exact(s.data(), n);
    return s;
  }
  std::string str(std::size_t max_len = 1u << 30) {
    const std::uint32_t n = u32();
    if (n > max_len) throw ShortRead{};
    return raw(n);
  }
  bool at_eof() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  void read_exact(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw ShortRead{};
  }
  template <typename U>
  U get_le() {
    unsigned char buf[sizeof(U)];
    read_exact(reinterpret_cast<char*>(buf), sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
};

}  // namespace trmqe::detail
