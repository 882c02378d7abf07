#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace revstore {

inline constexpr std::size_t kFingerprintSize = 20;

/// SHA-1 digest of a segment or block. Equal fingerprints mean equal content.
struct Fingerprint {
  std::array<std::uint8_t, kFingerprintSize> bytes{};

  friend auto operator<=>(const Fingerprint&, const Fingerprint&) = default;

  std::string hex() const;
  static std::optional<Fingerprint> from_hex(std::string_view text);
  static Fingerprint from_bytes(const std::uint8_t* data);
  bool is_zero() const noexcept;
};

struct FingerprintHash {
  std::size_t operator()(const Fingerprint& fp) const noexcept {
    std::size_t h;
    std::memcpy(&h, fp.bytes.data(), sizeof(h));
    return h;
  }
};

Fingerprint fingerprint(std::span<const std::uint8_t> data);

}  // namespace revstore
