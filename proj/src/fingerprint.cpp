#include "revstore/fingerprint.hpp"

#include <openssl/sha.h>

#include <cerrno>
#include <cstring>

#include "revstore/error.hpp"

namespace revstore {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string Fingerprint::hex() const {
  std::string out(kFingerprintSize * 2, '0');
  for (std::size_t i = 0; i < kFingerprintSize; ++i) {
    out[2 * i] = kHexDigits[bytes[i] >> 4];
    out[2 * i + 1] = kHexDigits[bytes[i] & 0x0f];
  }
  return out;
}

std::optional<Fingerprint> Fingerprint::from_hex(std::string_view text) {
  if (text.size() != kFingerprintSize * 2) return std::nullopt;
  Fingerprint fp;
  for (std::size_t i = 0; i < kFingerprintSize; ++i) {
    const int hi = hex_value(text[2 * i]);
    const int lo = hex_value(text[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    fp.bytes[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return fp;
}

Fingerprint Fingerprint::from_bytes(const std::uint8_t* data) {
  Fingerprint fp;
  std::memcpy(fp.bytes.data(), data, kFingerprintSize);
  return fp;
}

bool Fingerprint::is_zero() const noexcept {
  for (auto b : bytes) {
    if (b != 0) return false;
  }
  return true;
}

Fingerprint fingerprint(std::span<const std::uint8_t> data) {
  Fingerprint fp;
  SHA1(data.data(), data.size(), fp.bytes.data());
  return fp;
}

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::integrity: return "integrity";
    case Errc::dangling_reference: return "dangling-reference";
    case Errc::invariant_violation: return "invariant-violation";
    case Errc::at_most_once: return "at-most-once";
    case Errc::not_found: return "not-found";
    case Errc::out_of_order: return "out-of-order";
    case Errc::missing_segments: return "missing-segments";
    case Errc::corruption: return "corruption";
    case Errc::io: return "io";
    case Errc::network: return "network";
    case Errc::rejected: return "rejected";
  }
  return "unknown";
}

namespace {

std::string describe_missing(const std::vector<Fingerprint>& missing) {
  std::string msg = "missing segments:";
  for (const auto& fp : missing) {
    msg += ' ';
    msg += fp.hex();
  }
  return msg;
}

}  // namespace

MissingSegmentsError::MissingSegmentsError(std::vector<Fingerprint> missing)
    : Error(Errc::missing_segments, describe_missing(missing)),
      missing_(std::move(missing)) {}

void throw_errno(const std::string& what) {
  throw Error(Errc::io, what + ": " + std::strerror(errno));
}

}  // namespace revstore
