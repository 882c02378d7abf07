#include "revstore/version_files.hpp"

#include <algorithm>
#include <cstring>

#include "revstore/endian.hpp"
#include "revstore/error.hpp"

namespace revstore {

namespace {

constexpr std::uint8_t kRecipeMagic[4] = {'R', 'D', 'V', 'R'};
constexpr std::uint8_t kPointerMagic[4] = {'R', 'D', 'P', 'T'};
constexpr std::uint16_t kFormatVersion = 1;
constexpr std::size_t kRecipeHeader = 32;
constexpr std::size_t kPointerHeader = 24;

void put_header(std::uint8_t* out, const std::uint8_t (&magic)[4]) {
  std::memcpy(out, magic, 4);
  store_le<std::uint16_t>(out + 4, kFormatVersion);
  store_le<std::uint16_t>(out + 6, 0);
}

void check_header(std::span<const std::uint8_t> bytes, const std::uint8_t (&magic)[4],
                  std::size_t header, const char* what) {
  if (bytes.size() < header || std::memcmp(bytes.data(), magic, 4) != 0 ||
      load_le<std::uint16_t>(bytes.data() + 4) != kFormatVersion) {
    throw Error(Errc::corruption, std::string(what) + ": bad header");
  }
}

}  // namespace

std::uint64_t VersionRecipe::indirect_count() const noexcept {
  return static_cast<std::uint64_t>(std::count_if(
      pointers.begin(), pointers.end(),
      [](const BlockPointer& p) { return p.kind == PointerKind::indirect; }));
}

std::vector<std::uint8_t> encode_recipe(const VersionRecipe& recipe) {
  std::vector<std::uint8_t> out(kRecipeHeader + recipe.segments.size() * kFingerprintSize);
  put_header(out.data(), kRecipeMagic);
  store_le<std::uint64_t>(out.data() + 8, recipe.version_no);
  store_le<std::uint64_t>(out.data() + 16, recipe.logical_length);
  store_le<std::uint64_t>(out.data() + 24, recipe.segments.size());
  std::uint8_t* p = out.data() + kRecipeHeader;
  for (const auto& fp : recipe.segments) {
    std::memcpy(p, fp.bytes.data(), kFingerprintSize);
    p += kFingerprintSize;
  }
  return out;
}

void decode_recipe(std::span<const std::uint8_t> bytes, VersionRecipe& out) {
  check_header(bytes, kRecipeMagic, kRecipeHeader, "version recipe");
  out.version_no = load_le<std::uint64_t>(bytes.data() + 8);
  out.logical_length = load_le<std::uint64_t>(bytes.data() + 16);
  const auto count = load_le<std::uint64_t>(bytes.data() + 24);
  if (count > (bytes.size() - kRecipeHeader) / kFingerprintSize ||
      bytes.size() != kRecipeHeader + count * kFingerprintSize) {
    throw Error(Errc::corruption, "version recipe: truncated segment list");
  }
  out.segments.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    out.segments[i] = Fingerprint::from_bytes(bytes.data() + kRecipeHeader + i * kFingerprintSize);
  }
}

std::vector<std::uint8_t> encode_pointers(std::uint64_t version_no,
                                          std::span<const BlockPointer> pointers) {
  std::vector<std::uint8_t> out(kPointerHeader + pointers.size() * kPointerRecordSize);
  put_header(out.data(), kPointerMagic);
  store_le<std::uint64_t>(out.data() + 8, version_no);
  store_le<std::uint64_t>(out.data() + 16, pointers.size());
  std::uint8_t* p = out.data() + kPointerHeader;
  for (const auto& ptr : pointers) {
    p[0] = static_cast<std::uint8_t>(ptr.kind);
    store_le<std::uint64_t>(p + 1, ptr.a);
    store_le<std::uint64_t>(p + 9, ptr.b);
    p += kPointerRecordSize;
  }
  return out;
}

std::vector<BlockPointer> decode_pointers(std::span<const std::uint8_t> bytes,
                                          std::uint64_t expected_version) {
  check_header(bytes, kPointerMagic, kPointerHeader, "pointer table");
  if (load_le<std::uint64_t>(bytes.data() + 8) != expected_version) {
    throw Error(Errc::corruption, "pointer table: version number mismatch");
  }
  const auto count = load_le<std::uint64_t>(bytes.data() + 16);
  if (count > (bytes.size() - kPointerHeader) / kPointerRecordSize ||
      bytes.size() != kPointerHeader + count * kPointerRecordSize) {
    throw Error(Errc::corruption, "pointer table: truncated records");
  }
  std::vector<BlockPointer> out(count);
  const std::uint8_t* p = bytes.data() + kPointerHeader;
  for (auto& ptr : out) {
    if (p[0] > 2) throw Error(Errc::corruption, "pointer table: unknown pointer kind");
    ptr.kind = static_cast<PointerKind>(p[0]);
    ptr.a = load_le<std::uint64_t>(p + 1);
    ptr.b = load_le<std::uint64_t>(p + 9);
    p += kPointerRecordSize;
  }
  return out;
}

}  // namespace revstore
