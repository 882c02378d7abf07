#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "revstore/chunking.hpp"
#include "revstore/fingerprint.hpp"
#include "revstore/segment_meta.hpp"

namespace revstore {

/// Segments are addressed by their fingerprint; the hex form is the object name.
using SegmentId = Fingerprint;

enum class RemovalMechanism { punch, compact, compact_fallback };

std::string_view to_string(RemovalMechanism m) noexcept;

struct RemovalReport {
  SegmentId segment;
  RemovalMechanism mechanism = RemovalMechanism::punch;
  std::uint32_t blocks_removed = 0;
  std::uint32_t non_null_blocks = 0;
  double threshold = 0.0;
  // Sizes in bytes of the free regions this removal leaves behind. Punching
  // frees one region per run of victims in allocation order; compaction
  // re-packs survivors at the front and frees the removed bytes as one region.
  std::vector<std::uint64_t> freed_extents;
};

struct RemovalResult {
  bool skipped_removal_applied = false;
  std::optional<RemovalReport> report;
};

/// In-memory index entry, one per stored segment.
struct SegmentIndexEntry {
  Fingerprint fingerprint;
  std::uint32_t block_count = 0;
  std::uint32_t generation = 0;
  std::uint32_t flags = 0;  // kEntryComplete | kEntryRemovalApplied

  static constexpr std::uint32_t kEntryComplete = 1u << 0;
  static constexpr std::uint32_t kEntryRemovalApplied = 1u << 1;
};
static_assert(sizeof(SegmentIndexEntry) == 32);

struct StoreOptions {
  // fsync data before publishing metadata, and metadata after rewrites.
  bool sync = true;
  // Off forces removal to take the compaction fallback (tests).
  bool allow_punch = true;
  // Called at named crash points; throwing simulates a crash there.
  std::function<void(std::string_view)> fault_hook;
};

struct IoCounters {
  std::uint64_t read_calls = 0;
  std::uint64_t bytes_read = 0;
};

/// Content-addressed segment files plus per-segment block metadata.
///
/// Layout under `root/segments/xx/yy/`: `<hex>.meta` and the data file
/// `<hex>.seg` (generation 0) or `<hex>.<gen>.seg`. Null blocks are never
/// written; they stay holes. A segment is published (visible to queries and
/// reopen) only once its metadata file exists, which is written after the
/// data file is durable.
class SegmentStore {
 public:
  SegmentStore(std::filesystem::path root, ChunkParams params, StoreOptions options = {});
  ~SegmentStore();
  SegmentStore(const SegmentStore&) = delete;
  SegmentStore& operator=(const SegmentStore&) = delete;

  const ChunkParams& params() const noexcept { return params_; }
  const std::filesystem::path& root() const noexcept { return root_; }

  /// Bit i is set iff fps[i] is stored with all of its blocks present.
  std::vector<bool> query_exists(std::span<const Fingerprint> fps) const;

  /// Stores a segment. Idempotent for complete segments. A segment that lost
  /// blocks to removal is rewritten in full (rehydrated) from `data`.
  SegmentId put_segment(const Fingerprint& fp, std::span<const std::uint8_t> data,
                        std::span<const BlockDescriptor> blocks);

  std::vector<std::vector<std::uint8_t>> read_blocks(const SegmentId& id,
                                                     std::span<const std::uint32_t> indices) const;

  /// Reads blocks [first, first + count) into `out` through the offset map.
  /// Null blocks are synthesized; unreferenced or removed blocks raise
  /// dangling_reference.
  void read_range(const SegmentId& id, std::uint32_t first, std::uint32_t count,
                  std::span<std::uint8_t> out) const;

  /// Removes `victims` (all with refcount 0) by hole punching when
  /// victims / non-null blocks < threshold, otherwise by compaction.
  /// A segment accepts at most one removal.
  RemovalReport remove_blocks(const SegmentId& id, std::span<const std::uint32_t> victims,
                              double rebuild_threshold);

  /// Removes every present non-null block with refcount 0, unless the
  /// segment already had its removal. Blocks with a nonzero `pinned` entry
  /// are kept.
  RemovalResult remove_unreferenced(const SegmentId& id, double rebuild_threshold,
                                    std::span<const std::uint32_t> pinned = {});

  /// Applies per-block refcount deltas (ignored for null blocks) atomically.
  SegmentMeta adjust_refcounts(const SegmentId& id, std::span<const std::int64_t> deltas);

  /// Adds `occurrences` references to every non-null block. Throws
  /// MissingSegmentsError if the segment is absent or lost blocks.
  void link(const SegmentId& id, std::uint32_t occurrences);

  /// Records the modeled on-disk placement the first time a segment is
  /// referenced by a committed version. Returns false if already placed.
  bool claim_placement(const SegmentId& id, std::uint64_t epoch, std::uint32_t rank);

  bool contains(const SegmentId& id) const;
  SegmentMeta meta(const SegmentId& id) const;
  /// Runs fn(meta) under the segment's shared lock.
  void with_meta(const SegmentId& id, const std::function<void(const SegmentMeta&)>& fn) const;

  /// Best-effort read-ahead hint for the segment's data file.
  void prefetch(const SegmentId& id) const;

  std::vector<SegmentId> list_segments() const;
  /// Files under the store that no published segment accounts for.
  std::vector<std::filesystem::path> orphan_files() const;

  std::filesystem::path data_path(const SegmentId& id, std::uint32_t generation) const;
  std::filesystem::path meta_path(const SegmentId& id) const;

  /// Flushes every file system buffer under the store root (used when
  /// per-write syncing is off).
  void sync_all() const;

  IoCounters io_counters() const noexcept;
  void reset_io_counters() noexcept;

 private:
  struct Slot;

  Slot* find(const SegmentId& id) const noexcept;
  Slot& require(const SegmentId& id) const;
  SegmentMeta& loaded(Slot& slot) const;
  void scan();
  void write_new(const Fingerprint& fp, std::span<const std::uint8_t> data,
                 std::span<const BlockDescriptor> blocks);
  void rehydrate(Slot& slot, std::span<const std::uint8_t> data);
  RemovalReport remove_locked(Slot& slot, std::span<const std::uint32_t> victims,
                              double rebuild_threshold);
  void compact_locked(Slot& slot, std::span<const std::uint32_t> victims);
  void write_meta_atomic(const SegmentId& id, const SegmentMeta& meta) const;
  void write_meta_in_place(const SegmentId& id, const SegmentMeta& meta) const;
  void refresh_entry(Slot& slot) const;
  void fault(std::string_view point) const;

  std::filesystem::path root_;
  ChunkParams params_;
  StoreOptions options_;

  mutable std::shared_mutex index_mutex_;
  std::unordered_map<Fingerprint, std::unique_ptr<Slot>, FingerprintHash> index_;
  std::array<std::mutex, 64> put_stripes_;

  mutable std::atomic<std::uint64_t> read_calls_{0};
  mutable std::atomic<std::uint64_t> bytes_read_{0};
};

/// Bytes actually allocated on disk (st_blocks) by every file under `path`.
std::uint64_t allocated_bytes_under(const std::filesystem::path& path);

}  // namespace revstore
