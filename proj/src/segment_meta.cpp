#include "revstore/segment_meta.hpp"

#include <algorithm>
#include <cstring>

#include "revstore/endian.hpp"
#include "revstore/error.hpp"

namespace revstore {

namespace {

constexpr std::uint8_t kMagic[4] = {'R', 'D', 'S', 'M'};
constexpr std::uint16_t kFlagRemovalApplied = 1u << 0;
constexpr std::uint16_t kFlagCompacted = 1u << 1;
constexpr std::uint16_t kFlagIncomplete = 1u << 2;
constexpr std::uint8_t kRecordNull = 1u << 0;
constexpr std::uint8_t kRecordRemoved = 1u << 1;

}  // namespace

std::uint32_t SegmentMeta::non_null_count() const noexcept {
  return static_cast<std::uint32_t>(
      std::count_if(blocks.begin(), blocks.end(), [](const BlockRecord& b) { return !b.is_null; }));
}

bool SegmentMeta::complete() const noexcept {
  return std::none_of(blocks.begin(), blocks.end(), [](const BlockRecord& b) { return b.removed; });
}

std::uint32_t SegmentMeta::physical_slot_count() const noexcept {
  std::uint32_t top = 0;
  for (const auto& b : blocks) {
    if (b.slot != kNoSlot) top = std::max(top, b.slot + 1);
  }
  return top;
}

void SegmentMeta::encode_records(std::span<std::uint8_t> out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    std::uint8_t* rec = out.data() + i * kMetaRecordSize;
    const BlockRecord& b = blocks[i];
    std::memset(rec, 0, kMetaRecordSize);
    rec[0] = static_cast<std::uint8_t>((b.is_null ? kRecordNull : 0) |
                                       (b.removed ? kRecordRemoved : 0));
    if (!b.is_null) std::memcpy(rec + 4, b.fingerprint.bytes.data(), kFingerprintSize);
    store_le<std::uint32_t>(rec + 24, b.refcount);
    store_le<std::uint32_t>(rec + 28, b.slot);
  }
}

std::vector<std::uint8_t> SegmentMeta::encode() const {
  std::vector<std::uint8_t> out(kMetaHeaderSize + blocks.size() * kMetaRecordSize, 0);
  std::memcpy(out.data(), kMagic, sizeof(kMagic));
  store_le<std::uint16_t>(out.data() + 4, kMetaFormatVersion);
  const std::uint16_t flags = static_cast<std::uint16_t>(
      (removal_applied ? kFlagRemovalApplied : 0) | (compacted ? kFlagCompacted : 0) |
      (complete() ? 0 : kFlagIncomplete));
  store_le<std::uint16_t>(out.data() + 6, flags);
  store_le<std::uint32_t>(out.data() + 8, block_size);
  store_le<std::uint32_t>(out.data() + 12, static_cast<std::uint32_t>(blocks.size()));
  store_le<std::uint32_t>(out.data() + 16, generation);
  store_le<std::uint32_t>(out.data() + 20, placement_rank);
  store_le<std::uint64_t>(out.data() + 24, placement_epoch);
  encode_records(std::span(out).subspan(kMetaHeaderSize));
  return out;
}

SegmentMeta SegmentMeta::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMetaHeaderSize || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(Errc::corruption, "segment metadata: bad header");
  }
  if (load_le<std::uint16_t>(bytes.data() + 4) != kMetaFormatVersion) {
    throw Error(Errc::corruption, "segment metadata: unsupported format version");
  }
  SegmentMeta meta;
  const auto flags = load_le<std::uint16_t>(bytes.data() + 6);
  meta.removal_applied = (flags & kFlagRemovalApplied) != 0;
  meta.compacted = (flags & kFlagCompacted) != 0;
  meta.block_size = load_le<std::uint32_t>(bytes.data() + 8);
  const auto count = load_le<std::uint32_t>(bytes.data() + 12);
  meta.generation = load_le<std::uint32_t>(bytes.data() + 16);
  meta.placement_rank = load_le<std::uint32_t>(bytes.data() + 20);
  meta.placement_epoch = load_le<std::uint64_t>(bytes.data() + 24);
  if (bytes.size() != kMetaHeaderSize + std::size_t{count} * kMetaRecordSize) {
    throw Error(Errc::corruption, "segment metadata: truncated record array");
  }
  meta.blocks.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = bytes.data() + kMetaHeaderSize + std::size_t{i} * kMetaRecordSize;
    BlockRecord& b = meta.blocks[i];
    b.is_null = (rec[0] & kRecordNull) != 0;
    b.removed = (rec[0] & kRecordRemoved) != 0;
    b.fingerprint = Fingerprint::from_bytes(rec + 4);
    b.refcount = load_le<std::uint32_t>(rec + 24);
    b.slot = load_le<std::uint32_t>(rec + 28);
  }
  return meta;
}

MetaHeader decode_meta_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMetaHeaderSize || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0 ||
      load_le<std::uint16_t>(bytes.data() + 4) != kMetaFormatVersion) {
    throw Error(Errc::corruption, "segment metadata: bad header");
  }
  const auto flags = load_le<std::uint16_t>(bytes.data() + 6);
  MetaHeader h;
  h.removal_applied = (flags & kFlagRemovalApplied) != 0;
  h.compacted = (flags & kFlagCompacted) != 0;
  h.complete = (flags & kFlagIncomplete) == 0;
  h.block_size = load_le<std::uint32_t>(bytes.data() + 8);
  h.block_count = load_le<std::uint32_t>(bytes.data() + 12);
  h.generation = load_le<std::uint32_t>(bytes.data() + 16);
  return h;
}

}  // namespace revstore
