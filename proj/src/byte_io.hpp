#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>

namespace viewsel::detail {

inline std::uint32_t to_le(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::little) {
    return x;
  } else {
    return ((x & 0xFFU) << 24) | ((x & 0xFF00U) << 8) | ((x >> 8) & 0xFF00U) | (x >> 24);
  }
}

inline void put_u32(std::ostream& out, std::uint32_t value) {
  const std::uint32_t le = to_le(value);
  out.write(reinterpret_cast<const char*>(&le), sizeof(le));
}

inline bool get_u32(std::istream& in, std::uint32_t& value) {
  std::uint32_t le = 0;
  in.read(reinterpret_cast<char*>(&le), sizeof(le));
  value = to_le(le);
  return in.good();
}

inline void put_f32s(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (const float v : values) {
      put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
  }
}

inline bool get_f32s(std::istream& in, std::span<float> values) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : values) {
      v = std::bit_cast<float>(to_le(std::bit_cast<std::uint32_t>(v)));
    }
  }
  return in.good();
}

}  // namespace viewsel::detail
