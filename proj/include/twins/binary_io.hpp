#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "twins/error.hpp"

// Little-endian primitives shared by the feature-file and checkpoint formats.

namespace twins::io {

inline void write_bytes(std::ostream& out, const void* data, size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  auto u = static_cast<std::make_unsigned_t<T>>(value);
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
  write_bytes(out, buf, sizeof(T));
}

inline void write_f32_le(std::ostream& out, float value) {
  uint32_t bits;
  std::memcpy(&bits, &value, 4);
  write_le(out, bits);
}

inline void write_f64_le(std::ostream& out, double value) {
  uint64_t bits;
  std::memcpy(&bits, &value, 8);
  write_le(out, bits);
}

inline void read_bytes(std::istream& in, void* data, size_t n, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw FormatError(std::string("truncated input while reading ") + what);
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  read_bytes(in, buf, sizeof(T), what);
  std::make_unsigned_t<T> u = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
  return static_cast<T>(u);
}

inline float read_f32_le(std::istream& in, const char* what) {
  uint32_t bits = read_le<uint32_t>(in, what);
  float value;
  std::memcpy(&value, &bits, 4);
  return value;
}

inline double read_f64_le(std::istream& in, const char* what) {
  uint64_t bits = read_le<uint64_t>(in, what);
  double value;
  std::memcpy(&value, &bits, 8);
  return value;
}

// FNV-1a over a byte string; used for config fingerprints and cache stamps.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string to_hex(uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return s;
}

}  // namespace twins::io
