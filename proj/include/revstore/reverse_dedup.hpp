#pragma once

#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "revstore/fingerprint.hpp"
#include "revstore/segment_store.hpp"
#include "revstore/version_files.hpp"

namespace revstore {

/// Transient fingerprint index over the two versions being compared.
/// Null blocks and blocks of segments present in both versions are left out.
class BlockIndex {
 public:
  static constexpr std::uint64_t kNone = std::numeric_limits<std::uint64_t>::max();

  void add_prev(const Fingerprint& fp, std::uint64_t ordinal);
  // Only the lowest ordinal per fingerprint is kept; that is the match target.
  void add_curr(const Fingerprint& fp, std::uint64_t ordinal);

  std::size_t size() const noexcept { return map_.size(); }

  struct Entry {
    std::vector<std::uint64_t> prev;
    std::uint64_t curr = kNone;
  };
  const std::unordered_map<Fingerprint, Entry, FingerprintHash>& entries() const noexcept {
    return map_;
  }

 private:
  std::unordered_map<Fingerprint, Entry, FingerprintHash> map_;
};

struct BlockMatch {
  std::uint64_t prev_ordinal;
  std::uint64_t curr_ordinal;

  friend bool operator==(const BlockMatch&, const BlockMatch&) = default;
};

/// Every prev block whose fingerprint occurs in curr, paired with the lowest
/// such curr ordinal. Sorted by prev ordinal.
std::vector<BlockMatch> match_blocks(const BlockIndex& index);

/// Builds the index for prev (the VM's current latest) against curr. Both
/// must hold only Direct and Null pointers.
BlockIndex build_block_index(const SegmentStore& store, const VersionRecipe& prev,
                             const VersionRecipe& curr);

struct SegmentVictims {
  SegmentId segment;
  std::vector<std::uint32_t> blocks;
};

struct ReverseDedupResult {
  std::vector<BlockMatch> matches;
  // Blocks that dropped to zero references, by segment (sorted by segment).
  std::vector<SegmentVictims> victims;
};

/// Redirects matched prev blocks to curr (in prev.pointers) and decrements
/// the refcounts they held. Removal of the victims is left to the caller.
ReverseDedupResult reverse_deduplicate(SegmentStore& store, VersionRecipe& prev,
                                       const VersionRecipe& curr);

}  // namespace revstore
