#pragma once

#include <cstdint>
#include <cstring>
#include <type_traits>

namespace revstore {

// Little-endian field access for the on-disk formats.

template <typename T>
  requires std::is_unsigned_v<T>
inline void store_le(std::uint8_t* out, T value) noexcept {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::uint8_t>(value >> (8 * i));
  }
}

template <typename T>
  requires std::is_unsigned_v<T>
inline T load_le(const std::uint8_t* in) noexcept {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(in[i]) << (8 * i);
  }
  return value;
}

}  // namespace revstore
