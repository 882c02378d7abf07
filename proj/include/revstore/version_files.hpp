#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "revstore/fingerprint.hpp"

namespace revstore {

enum class PointerKind : std::uint8_t { null = 0, direct = 1, indirect = 2 };

/// Where one logical block of a version lives.
///   Direct:   a = segment ordinal in the owning version's recipe, b = block index
///   Indirect: a = target version number (same VM, strictly newer), b = block ordinal there
///   Null:     both zero; content is synthesized
struct BlockPointer {
  PointerKind kind = PointerKind::null;
  std::uint64_t a = 0;
  std::uint64_t b = 0;

  static BlockPointer null() { return {}; }
  static BlockPointer direct(std::uint64_t segment_ordinal, std::uint64_t block) {
    return {PointerKind::direct, segment_ordinal, block};
  }
  static BlockPointer indirect(std::uint64_t version_no, std::uint64_t ordinal) {
    return {PointerKind::indirect, version_no, ordinal};
  }

  friend bool operator==(const BlockPointer&, const BlockPointer&) = default;
};

struct VersionRecipe {
  std::string vm_id;
  std::uint64_t version_no = 0;
  std::uint64_t logical_length = 0;
  std::vector<Fingerprint> segments;
  std::vector<BlockPointer> pointers;  // segments.size() * blocks per segment

  std::uint64_t indirect_count() const noexcept;
};

// Recipe file (little-endian):
//    0  magic "RDVR"
//    4  u16 format version (1), u16 zero
//    8  u64 version number
//   16  u64 logical length in bytes
//   24  u64 segment count
//   32  segment fingerprints, 20 bytes each
std::vector<std::uint8_t> encode_recipe(const VersionRecipe& recipe);
// Fills version_no, logical_length and segments; pointers stay untouched.
void decode_recipe(std::span<const std::uint8_t> bytes, VersionRecipe& out);

// Pointer table file (little-endian):
//    0  magic "RDPT"
//    4  u16 format version (1), u16 zero
//    8  u64 version number
//   16  u64 record count
//   24  records, 17 bytes each: u8 kind (0 null, 1 direct, 2 indirect), u64 a, u64 b
inline constexpr std::size_t kPointerRecordSize = 17;
std::vector<std::uint8_t> encode_pointers(std::uint64_t version_no,
                                          std::span<const BlockPointer> pointers);
std::vector<BlockPointer> decode_pointers(std::span<const std::uint8_t> bytes,
                                          std::uint64_t expected_version);

}  // namespace revstore
