#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "revstore/fingerprint.hpp"

namespace revstore {

// Metadata file layout (little-endian), one file per stored segment:
//
//   header, 32 bytes
//     0  magic "RDSM"
//     4  u16 format version (1)
//     6  u16 flags: bit0 removal applied, bit1 compacted,
//                   bit2 some block removed (derived, lets the index load headers only)
//     8  u32 block size
//    12  u32 block count
//    16  u32 data file generation
//    20  u32 placement rank
//    24  u64 placement epoch (0 = not yet placed)
//   block records, 32 bytes each
//     0  u8  flags: bit0 null, bit1 removed
//     1  u8[3] zero
//     4  u8[20] block fingerprint (zero for null blocks)
//    24  u32 reference count
//    28  u32 physical slot in the data file (0xffffffff once removed)
inline constexpr std::size_t kMetaHeaderSize = 32;
inline constexpr std::size_t kMetaRecordSize = 32;
inline constexpr std::uint16_t kMetaFormatVersion = 1;
inline constexpr std::uint32_t kNoSlot = std::numeric_limits<std::uint32_t>::max();

struct BlockRecord {
  Fingerprint fingerprint;
  bool is_null = false;
  bool removed = false;
  std::uint32_t refcount = 0;
  std::uint32_t slot = 0;

  friend bool operator==(const BlockRecord&, const BlockRecord&) = default;
};

struct SegmentMeta {
  std::uint32_t block_size = 0;
  bool removal_applied = false;
  bool compacted = false;
  std::uint32_t generation = 0;
  std::uint64_t placement_epoch = 0;
  std::uint32_t placement_rank = 0;
  std::vector<BlockRecord> blocks;

  std::uint32_t non_null_count() const noexcept;
  // True when every non-null block is still physically present.
  bool complete() const noexcept;
  // Number of physical slots in the current data file.
  std::uint32_t physical_slot_count() const noexcept;

  std::vector<std::uint8_t> encode() const;
  static SegmentMeta decode(std::span<const std::uint8_t> bytes);

  // Encodes only the block record array (for in-place rewrites).
  void encode_records(std::span<std::uint8_t> out) const;

  friend bool operator==(const SegmentMeta&, const SegmentMeta&) = default;
};

struct MetaHeader {
  std::uint32_t block_size = 0;
  std::uint32_t block_count = 0;
  std::uint32_t generation = 0;
  bool removal_applied = false;
  bool compacted = false;
  bool complete = true;
};

MetaHeader decode_meta_header(std::span<const std::uint8_t> bytes);

}  // namespace revstore
