#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace voxprop::io {

// Little-endian scalar encoding, independent of host byte order.

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xffu), static_cast<char>((v >> 8) & 0xffu),
                     static_cast<char>((v >> 16) & 0xffu), static_cast<char>((v >> 24) & 0xffu)};
  os.write(b, 4);
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t decode_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float decode_f32(const unsigned char* b) { return std::bit_cast<float>(decode_u32(b)); }

inline bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = decode_u32(b);
  return true;
}

inline bool get_f32(std::istream& is, float& v) {
  std::uint32_t u = 0;
  if (!get_u32(is, u)) return false;
  v = std::bit_cast<float>(u);
  return true;
}

}  // namespace voxprop::io
