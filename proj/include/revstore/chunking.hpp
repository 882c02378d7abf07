#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "revstore/fingerprint.hpp"

namespace revstore {

inline constexpr std::uint64_t kKiB = 1024;
inline constexpr std::uint64_t kMiB = 1024 * kKiB;

/// Fixed-size chunking parameters. Segments are the global dedup unit,
/// blocks the reverse dedup unit.
struct ChunkParams {
  std::uint64_t segment_size = 4 * kMiB;
  std::uint32_t block_size = 4096;

  std::uint32_t blocks_per_segment() const noexcept {
    return static_cast<std::uint32_t>(segment_size / block_size);
  }

  // Number of segments needed for an image; the last one is zero-padded.
  std::uint64_t segment_count(std::uint64_t logical_length) const noexcept {
    return (logical_length + segment_size - 1) / segment_size;
  }

  /// Throws Error(invalid_argument) unless block_size >= 512 is a power of two
  /// and segment_size is a power-of-two multiple of it.
  void validate() const;

  friend bool operator==(const ChunkParams&, const ChunkParams&) = default;
};

struct BlockDescriptor {
  Fingerprint fingerprint;  // all zero for null blocks
  bool is_null = false;

  friend bool operator==(const BlockDescriptor&, const BlockDescriptor&) = default;
};

bool is_zero(std::span<const std::uint8_t> data) noexcept;

/// Splits an in-memory stream into segment buffers, zero-padding the tail.
/// Throws on an empty stream.
std::vector<std::vector<std::uint8_t>> split_segments(
    std::span<const std::uint8_t> stream, const ChunkParams& params);

/// One descriptor per block; null detection is a full scan.
std::vector<BlockDescriptor> describe_blocks(std::span<const std::uint8_t> segment,
                                             const ChunkParams& params);

}  // namespace revstore
