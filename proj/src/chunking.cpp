#include "revstore/chunking.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <string>

#include "revstore/error.hpp"

namespace revstore {

void ChunkParams::validate() const {
  if (block_size < 512 || !std::has_single_bit(block_size)) {
    throw Error(Errc::invalid_argument,
                "block size must be a power of two >= 512, got " + std::to_string(block_size));
  }
  if (segment_size < block_size || segment_size % block_size != 0 ||
      !std::has_single_bit(segment_size / block_size)) {
    throw Error(Errc::invalid_argument,
                "segment size must be a power-of-two multiple of the block size, got " +
                    std::to_string(segment_size));
  }
  if (segment_size / block_size > (1u << 24)) {
    throw Error(Errc::invalid_argument, "too many blocks per segment");
  }
}

bool is_zero(std::span<const std::uint8_t> data) noexcept {
  const std::uint8_t* p = data.data();
  std::size_t n = data.size();
  while (n >= sizeof(std::uint64_t) * 4) {
    std::uint64_t w[4];
    std::memcpy(w, p, sizeof(w));
    if ((w[0] | w[1] | w[2] | w[3]) != 0) return false;
    p += sizeof(w);
    n -= sizeof(w);
  }
  for (; n > 0; --n, ++p) {
    if (*p != 0) return false;
  }
  return true;
}

std::vector<std::vector<std::uint8_t>> split_segments(std::span<const std::uint8_t> stream,
                                                      const ChunkParams& params) {
  params.validate();
  if (stream.empty()) {
    throw Error(Errc::invalid_argument, "cannot chunk an empty stream");
  }
  const std::uint64_t count = params.segment_count(stream.size());
  std::vector<std::vector<std::uint8_t>> segments;
  segments.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t begin = i * params.segment_size;
    const std::uint64_t len = std::min<std::uint64_t>(params.segment_size, stream.size() - begin);
    std::vector<std::uint8_t> seg(params.segment_size, 0);
    std::memcpy(seg.data(), stream.data() + begin, len);
    segments.push_back(std::move(seg));
  }
  return segments;
}

std::vector<BlockDescriptor> describe_blocks(std::span<const std::uint8_t> segment,
                                             const ChunkParams& params) {
  if (segment.size() != params.segment_size) {
    throw Error(Errc::invalid_argument, "segment length does not match the segment size");
  }
  const std::uint32_t count = params.blocks_per_segment();
  std::vector<BlockDescriptor> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto block = segment.subspan(std::size_t{i} * params.block_size, params.block_size);
    if (is_zero(block)) {
      out[i].is_null = true;
    } else {
      out[i].fingerprint = fingerprint(block);
    }
  }
  return out;
}

}  // namespace revstore
