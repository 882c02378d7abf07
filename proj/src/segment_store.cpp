#include "revstore/segment_store.hpp"

#include <fcntl.h>
#include <linux/falloc.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <system_error>

#include "revstore/error.hpp"
#include "revstore/file_io.hpp"

namespace revstore {

namespace fs = std::filesystem;

std::string_view to_string(RemovalMechanism m) noexcept {
  switch (m) {
    case RemovalMechanism::punch: return "punch";
    case RemovalMechanism::compact: return "compact";
    case RemovalMechanism::compact_fallback: return "compact_fallback";
  }
  return "?";
}

struct SegmentStore::Slot {
  SegmentIndexEntry entry;
  std::atomic<std::uint32_t> flags{0};
  mutable std::shared_mutex mutex;
  std::once_flag load_once;
  SegmentMeta meta;
};

SegmentStore::SegmentStore(fs::path root, ChunkParams params, StoreOptions options)
    : root_(std::move(root)), params_(params), options_(std::move(options)) {
  params_.validate();
  fs::create_directories(root_ / "segments");
  scan();
}

SegmentStore::~SegmentStore() = default;

fs::path SegmentStore::meta_path(const SegmentId& id) const {
  const std::string hex = id.hex();
  return root_ / "segments" / hex.substr(0, 2) / hex.substr(2, 2) / (hex + ".meta");
}

fs::path SegmentStore::data_path(const SegmentId& id, std::uint32_t generation) const {
  const std::string hex = id.hex();
  std::string name = generation == 0 ? hex + ".seg" : hex + "." + std::to_string(generation) + ".seg";
  return root_ / "segments" / hex.substr(0, 2) / hex.substr(2, 2) / name;
}

void SegmentStore::fault(std::string_view point) const {
  if (options_.fault_hook) options_.fault_hook(point);
}

void SegmentStore::scan() {
  const fs::path dir = root_ / "segments";
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path& p = e.path();
    if (p.extension() != ".meta") continue;
    auto fp = Fingerprint::from_hex(p.stem().string());
    if (!fp) continue;
    std::uint8_t head[kMetaHeaderSize];
    {
      Fd f(p, O_RDONLY);
      pread_all(f.get(), head, sizeof(head), 0);
    }
    const MetaHeader h = decode_meta_header(head);
    if (h.block_size != params_.block_size || h.block_count != params_.blocks_per_segment()) {
      throw Error(Errc::corruption, "segment " + fp->hex() + " does not match the store chunk params");
    }
    auto slot = std::make_unique<Slot>();
    slot->entry.fingerprint = *fp;
    slot->entry.block_count = h.block_count;
    slot->entry.generation = h.generation;
    std::uint32_t flags = 0;
    if (h.complete) flags |= SegmentIndexEntry::kEntryComplete;
    if (h.removal_applied) flags |= SegmentIndexEntry::kEntryRemovalApplied;
    slot->entry.flags = flags;
    slot->flags.store(flags);
    index_.emplace(*fp, std::move(slot));
  }
}

SegmentStore::Slot* SegmentStore::find(const SegmentId& id) const noexcept {
  std::shared_lock lock(index_mutex_);
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : it->second.get();
}

SegmentStore::Slot& SegmentStore::require(const SegmentId& id) const {
  Slot* s = find(id);
  if (!s) throw Error(Errc::not_found, "unknown segment " + id.hex());
  return *s;
}

SegmentMeta& SegmentStore::loaded(Slot& slot) const {
  std::call_once(slot.load_once, [&] {
    slot.meta = SegmentMeta::decode(read_file(meta_path(slot.entry.fingerprint)));
  });
  return slot.meta;
}

void SegmentStore::refresh_entry(Slot& slot) const {
  const SegmentMeta& m = slot.meta;
  std::uint32_t flags = 0;
  if (m.complete()) flags |= SegmentIndexEntry::kEntryComplete;
  if (m.removal_applied) flags |= SegmentIndexEntry::kEntryRemovalApplied;
  slot.entry.generation = m.generation;
  slot.entry.flags = flags;
  slot.flags.store(flags);
}

void SegmentStore::write_meta_atomic(const SegmentId& id, const SegmentMeta& meta) const {
  write_file_atomic(meta_path(id), meta.encode(), options_.sync);
}

void SegmentStore::write_meta_in_place(const SegmentId& id, const SegmentMeta& meta) const {
  // Same record count, so the file size never changes and a single pwrite
  // replaces it.
  const auto bytes = meta.encode();
  Fd f(meta_path(id), O_WRONLY);
  pwrite_all(f.get(), bytes.data(), bytes.size(), 0);
  if (options_.sync && ::fdatasync(f.get()) != 0) throw_errno("fdatasync");
}

std::vector<bool> SegmentStore::query_exists(std::span<const Fingerprint> fps) const {
  std::vector<bool> out(fps.size(), false);
  std::shared_lock lock(index_mutex_);
  for (std::size_t i = 0; i < fps.size(); ++i) {
    auto it = index_.find(fps[i]);
    if (it != index_.end()) {
      out[i] = (it->second->flags.load() & SegmentIndexEntry::kEntryComplete) != 0;
    }
  }
  return out;
}

bool SegmentStore::contains(const SegmentId& id) const { return find(id) != nullptr; }

SegmentId SegmentStore::put_segment(const Fingerprint& fp, std::span<const std::uint8_t> data,
                                    std::span<const BlockDescriptor> blocks) {
  if (data.size() != params_.segment_size) {
    throw Error(Errc::invalid_argument, "segment body has length " + std::to_string(data.size()) +
                                            ", expected " + std::to_string(params_.segment_size));
  }
  if (blocks.size() != params_.blocks_per_segment()) {
    throw Error(Errc::invalid_argument, "block descriptor count does not match the segment");
  }
  if (fingerprint(data) != fp) {
    throw Error(Errc::integrity, "segment content does not match fingerprint " + fp.hex());
  }

  std::lock_guard put_lock(put_stripes_[FingerprintHash{}(fp) % put_stripes_.size()]);
  Slot* existing = find(fp);
  if (existing && (existing->flags.load() & SegmentIndexEntry::kEntryComplete)) return fp;

  // The sidecar is client-supplied; a wrong block fingerprint would silently
  // corrupt reverse dedup, so every block is checked.
  const auto actual = describe_blocks(data, params_);
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] != blocks[i]) {
      throw Error(Errc::integrity, "block descriptor " + std::to_string(i) + " of segment " +
                                       fp.hex() + " does not match its content");
    }
  }

  if (existing) {
    rehydrate(*existing, data);
  } else {
    write_new(fp, data, actual);
  }
  return fp;
}

namespace {

// Writes non-null blocks of `data` at their identity offsets.
void write_identity(int fd, std::span<const std::uint8_t> data,
                    std::span<const BlockRecord> blocks, std::uint32_t bs) {
  std::size_t i = 0;
  while (i < blocks.size()) {
    if (blocks[i].is_null) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < blocks.size() && !blocks[j].is_null) ++j;
    pwrite_all(fd, data.data() + i * bs, (j - i) * bs, std::uint64_t{i} * bs);
    i = j;
  }
}

}  // namespace

void SegmentStore::write_new(const Fingerprint& fp, std::span<const std::uint8_t> data,
                             std::span<const BlockDescriptor> blocks) {
  SegmentMeta meta;
  meta.block_size = params_.block_size;
  meta.blocks.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    meta.blocks[i].is_null = blocks[i].is_null;
    meta.blocks[i].fingerprint = blocks[i].fingerprint;
    meta.blocks[i].slot = static_cast<std::uint32_t>(i);
  }

  const fs::path target = data_path(fp, 0);
  fs::create_directories(target.parent_path());
  const fs::path tmp = temp_name(target);
  try {
    Fd f(tmp, O_WRONLY | O_CREAT | O_TRUNC);
    if (::ftruncate(f.get(), static_cast<off_t>(params_.segment_size)) != 0) throw_errno("truncate");
    write_identity(f.get(), data, meta.blocks, params_.block_size);
    if (options_.sync) fsync_fd(f.get());
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  fs::rename(tmp, target);
  if (options_.sync) fsync_dir(target.parent_path());

  // Data is durable; a crash from here on leaves an orphan data file only.
  fault("after-data");
  write_meta_atomic(fp, meta);
  fault("after-meta");

  auto slot = std::make_unique<Slot>();
  slot->entry.fingerprint = fp;
  slot->entry.block_count = static_cast<std::uint32_t>(meta.blocks.size());
  slot->meta = std::move(meta);
  std::call_once(slot->load_once, [] {});
  refresh_entry(*slot);
  std::unique_lock lock(index_mutex_);
  index_.emplace(fp, std::move(slot));
}

void SegmentStore::rehydrate(Slot& slot, std::span<const std::uint8_t> data) {
  std::unique_lock lock(slot.mutex);
  SegmentMeta& meta = loaded(slot);
  if (meta.complete()) return;
  SegmentMeta next = meta;
  next.generation = meta.generation + 1;
  next.compacted = false;
  for (std::size_t i = 0; i < next.blocks.size(); ++i) {
    next.blocks[i].removed = false;
    next.blocks[i].slot = static_cast<std::uint32_t>(i);
  }
  const fs::path target = data_path(slot.entry.fingerprint, next.generation);
  const fs::path tmp = temp_name(target);
  {
    Fd f(tmp, O_WRONLY | O_CREAT | O_TRUNC);
    if (::ftruncate(f.get(), static_cast<off_t>(params_.segment_size)) != 0) throw_errno("truncate");
    write_identity(f.get(), data, next.blocks, params_.block_size);
    if (options_.sync) fsync_fd(f.get());
  }
  fs::rename(tmp, target);
  fault("after-data");
  write_meta_atomic(slot.entry.fingerprint, next);
  std::error_code ec;
  fs::remove(data_path(slot.entry.fingerprint, meta.generation), ec);
  meta = std::move(next);
  refresh_entry(slot);
}

void SegmentStore::read_range(const SegmentId& id, std::uint32_t first, std::uint32_t count,
                              std::span<std::uint8_t> out) const {
  const std::uint32_t bs = params_.block_size;
  if (out.size() != std::size_t{count} * bs) {
    throw Error(Errc::invalid_argument, "read buffer does not match the block range");
  }
  Slot& slot = require(id);
  std::shared_lock lock(slot.mutex);
  const SegmentMeta& meta = loaded(slot);
  if (std::uint64_t{first} + count > meta.blocks.size()) {
    throw Error(Errc::invalid_argument, "block range past the end of segment " + id.hex());
  }
  std::optional<Fd> file;
  std::uint32_t i = 0;
  while (i < count) {
    const BlockRecord& b = meta.blocks[first + i];
    if (b.is_null) {
      std::memset(out.data() + std::size_t{i} * bs, 0, bs);
      ++i;
      continue;
    }
    if (b.removed || b.slot == kNoSlot) {
      throw Error(Errc::dangling_reference, "block " + std::to_string(first + i) + " of segment " +
                                                id.hex() + " is not referenced");
    }
    std::uint32_t j = i + 1;
    while (j < count) {
      const BlockRecord& n = meta.blocks[first + j];
      if (n.is_null || n.removed || n.refcount == 0 || n.slot != b.slot + (j - i)) break;
      ++j;
    }
    if (!file) file.emplace(data_path(id, meta.generation), O_RDONLY);
    const std::size_t len = std::size_t{j - i} * bs;
    pread_all(file->get(), out.data() + std::size_t{i} * bs, len, std::uint64_t{b.slot} * bs);
    read_calls_.fetch_add(1, std::memory_order_relaxed);
    bytes_read_.fetch_add(len, std::memory_order_relaxed);
    i = j;
  }
}

std::vector<std::vector<std::uint8_t>> SegmentStore::read_blocks(
    const SegmentId& id, std::span<const std::uint32_t> indices) const {
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(indices.size());
  for (std::uint32_t idx : indices) {
    std::vector<std::uint8_t> buf(params_.block_size);
    read_range(id, idx, 1, buf);
    out.push_back(std::move(buf));
  }
  return out;
}

RemovalReport SegmentStore::remove_blocks(const SegmentId& id,
                                          std::span<const std::uint32_t> victims,
                                          double rebuild_threshold) {
  Slot& slot = require(id);
  std::unique_lock lock(slot.mutex);
  return remove_locked(slot, victims, rebuild_threshold);
}

RemovalResult SegmentStore::remove_unreferenced(const SegmentId& id, double rebuild_threshold,
                                                std::span<const std::uint32_t> pinned) {
  Slot& slot = require(id);
  std::unique_lock lock(slot.mutex);
  const SegmentMeta& meta = loaded(slot);
  RemovalResult result;
  std::vector<std::uint32_t> victims;
  for (std::uint32_t i = 0; i < meta.blocks.size(); ++i) {
    const BlockRecord& b = meta.blocks[i];
    if (!pinned.empty() && pinned[i] != 0) continue;
    if (!b.is_null && !b.removed && b.refcount == 0) victims.push_back(i);
  }
  if (victims.empty()) return result;
  if (meta.removal_applied) {
    result.skipped_removal_applied = true;
    return result;
  }
  result.report = remove_locked(slot, victims, rebuild_threshold);
  return result;
}

namespace {

// Sizes of maximal runs of consecutive slots among `slots` (sorted).
std::vector<std::uint64_t> slot_runs(std::vector<std::uint32_t> slots, std::uint32_t bs) {
  std::sort(slots.begin(), slots.end());
  std::vector<std::uint64_t> runs;
  std::size_t i = 0;
  while (i < slots.size()) {
    std::size_t j = i + 1;
    while (j < slots.size() && slots[j] == slots[j - 1] + 1) ++j;
    runs.push_back(std::uint64_t{j - i} * bs);
    i = j;
  }
  return runs;
}

}  // namespace

RemovalReport SegmentStore::remove_locked(Slot& slot, std::span<const std::uint32_t> victims,
                                          double rebuild_threshold) {
  SegmentMeta& meta = loaded(slot);
  const SegmentId& id = slot.entry.fingerprint;
  if (meta.removal_applied) {
    throw Error(Errc::at_most_once, "segment " + id.hex() + " already had its block removal");
  }
  if (victims.empty()) throw Error(Errc::invariant_violation, "removal with no victims");
  if (!(rebuild_threshold >= 0.0 && rebuild_threshold <= 1.0)) {
    throw Error(Errc::invalid_argument, "rebuild threshold must lie in [0, 1]");
  }
  std::vector<bool> seen(meta.blocks.size(), false);
  for (std::uint32_t v : victims) {
    if (v >= meta.blocks.size() || seen[v]) {
      throw Error(Errc::invariant_violation, "bad or repeated removal victim");
    }
    seen[v] = true;
    const BlockRecord& b = meta.blocks[v];
    if (b.is_null || b.removed || b.refcount != 0) {
      throw Error(Errc::invariant_violation, "victim " + std::to_string(v) + " of segment " +
                                                 id.hex() + " is still referenced or not stored");
    }
  }

  RemovalReport report;
  report.segment = id;
  report.blocks_removed = static_cast<std::uint32_t>(victims.size());
  report.non_null_blocks = meta.non_null_count();
  report.threshold = rebuild_threshold;
  const double ratio = static_cast<double>(victims.size()) / report.non_null_blocks;
  const std::uint32_t bs = params_.block_size;
  std::vector<std::uint32_t> old_slots(meta.blocks.size());
  for (std::size_t i = 0; i < meta.blocks.size(); ++i) old_slots[i] = meta.blocks[i].slot;

  if (ratio < rebuild_threshold && options_.allow_punch) {
    std::vector<std::uint32_t> victim_slots;
    for (std::uint32_t v : victims) victim_slots.push_back(old_slots[v]);

    // Metadata goes first: if we crash mid-punch, the blocks are already
    // marked gone and can never be linked again with zeroed content.
    SegmentMeta next = meta;
    next.removal_applied = true;
    for (std::uint32_t v : victims) {
      next.blocks[v].removed = true;
      next.blocks[v].slot = kNoSlot;
    }
    write_meta_atomic(id, next);
    meta = next;
    refresh_entry(slot);
    fault("after-remove-meta");

    Fd f(data_path(id, meta.generation), O_WRONLY);
    std::sort(victim_slots.begin(), victim_slots.end());
    bool unsupported = false;
    std::size_t i = 0;
    while (i < victim_slots.size()) {
      std::size_t j = i + 1;
      while (j < victim_slots.size() && victim_slots[j] == victim_slots[j - 1] + 1) ++j;
      if (::fallocate(f.get(), FALLOC_FL_PUNCH_HOLE | FALLOC_FL_KEEP_SIZE,
                      static_cast<off_t>(std::uint64_t{victim_slots[i]} * bs),
                      static_cast<off_t>(std::uint64_t{j - i} * bs)) != 0) {
        if (errno == EOPNOTSUPP || errno == ENOSYS) {
          unsupported = true;
          break;
        }
        throw_errno("punch hole");
      }
      i = j;
    }
    if (!unsupported) {
      if (options_.sync) fsync_fd(f.get());
      report.mechanism = RemovalMechanism::punch;
      report.freed_extents = slot_runs(std::move(victim_slots), bs);
      return report;
    }
    // Victims are already flagged; compaction just drops them.
    report.mechanism = RemovalMechanism::compact_fallback;
  } else {
    report.mechanism = ratio < rebuild_threshold ? RemovalMechanism::compact_fallback
                                                 : RemovalMechanism::compact;
  }

  // Deleting the old file frees each of its allocated runs whole.
  std::vector<std::uint32_t> allocated;
  for (std::size_t i = 0; i < meta.blocks.size(); ++i) {
    if (!meta.blocks[i].is_null && old_slots[i] != kNoSlot) allocated.push_back(old_slots[i]);
  }
  compact_locked(slot, victims);
  report.freed_extents = slot_runs(std::move(allocated), bs);
  return report;
}

void SegmentStore::compact_locked(Slot& slot, std::span<const std::uint32_t> victims) {
  SegmentMeta& meta = loaded(slot);
  const SegmentId& id = slot.entry.fingerprint;
  const std::uint32_t bs = params_.block_size;
  std::vector<bool> is_victim(meta.blocks.size(), false);
  for (std::uint32_t v : victims) is_victim[v] = true;

  SegmentMeta next = meta;
  next.generation = meta.generation + 1;
  next.compacted = true;
  next.removal_applied = true;
  std::uint32_t rank = 0;
  for (std::size_t i = 0; i < next.blocks.size(); ++i) {
    BlockRecord& b = next.blocks[i];
    if (is_victim[i] || b.removed) {
      b.removed = true;
      b.slot = kNoSlot;
    } else {
      b.slot = rank++;
    }
  }

  const fs::path old_path = data_path(id, meta.generation);
  const fs::path target = data_path(id, next.generation);
  const fs::path tmp = temp_name(target);
  {
    Fd src(old_path, O_RDONLY);
    Fd dst(tmp, O_WRONLY | O_CREAT | O_TRUNC);
    if (::ftruncate(dst.get(), static_cast<off_t>(std::uint64_t{rank} * bs)) != 0) {
      throw_errno("truncate");
    }
    std::vector<std::uint8_t> buf;
    std::size_t i = 0;
    while (i < next.blocks.size()) {
      const BlockRecord& b = next.blocks[i];
      const std::uint32_t old_slot = meta.blocks[i].slot;
      if (b.is_null || b.slot == kNoSlot || old_slot == kNoSlot) {
        ++i;
        continue;
      }
      // Copy a run that is consecutive both in the old and the new layout.
      std::size_t j = i + 1;
      while (j < next.blocks.size()) {
        const BlockRecord& n = next.blocks[j];
        if (n.is_null || n.slot != b.slot + (j - i) || meta.blocks[j].slot != old_slot + (j - i)) break;
        ++j;
      }
      buf.resize((j - i) * bs);
      pread_all(src.get(), buf.data(), buf.size(), std::uint64_t{old_slot} * bs);
      pwrite_all(dst.get(), buf.data(), buf.size(), std::uint64_t{b.slot} * bs);
      i = j;
    }
    if (options_.sync) fsync_fd(dst.get());
  }
  fs::rename(tmp, target);
  fault("after-compact-data");
  write_meta_atomic(id, next);
  std::error_code ec;
  fs::remove(old_path, ec);
  meta = std::move(next);
  refresh_entry(slot);
}

SegmentMeta SegmentStore::adjust_refcounts(const SegmentId& id,
                                           std::span<const std::int64_t> deltas) {
  Slot& slot = require(id);
  std::unique_lock lock(slot.mutex);
  SegmentMeta& meta = loaded(slot);
  if (deltas.size() != meta.blocks.size()) {
    throw Error(Errc::invalid_argument, "refcount delta count does not match the segment");
  }
  std::vector<std::uint32_t> updated(meta.blocks.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const BlockRecord& b = meta.blocks[i];
    updated[i] = b.refcount;
    if (b.is_null || deltas[i] == 0) continue;
    const std::int64_t v = std::int64_t{b.refcount} + deltas[i];
    if (v < 0) {
      throw Error(Errc::invariant_violation, "refcount underflow on block " + std::to_string(i) +
                                                 " of segment " + id.hex());
    }
    if (v > std::int64_t{std::numeric_limits<std::uint32_t>::max()}) {
      throw Error(Errc::invariant_violation, "refcount overflow on block " + std::to_string(i) +
                                                 " of segment " + id.hex());
    }
    if (b.removed && v > 0) {
      throw Error(Errc::dangling_reference, "reference to removed block " + std::to_string(i) +
                                                " of segment " + id.hex());
    }
    updated[i] = static_cast<std::uint32_t>(v);
  }
  for (std::size_t i = 0; i < updated.size(); ++i) meta.blocks[i].refcount = updated[i];
  write_meta_in_place(id, meta);
  return meta;
}

void SegmentStore::link(const SegmentId& id, std::uint32_t occurrences) {
  Slot* slot = find(id);
  if (!slot) throw MissingSegmentsError({id});
  std::unique_lock lock(slot->mutex);
  SegmentMeta& meta = loaded(*slot);
  if (!meta.complete()) throw MissingSegmentsError({id});
  for (const auto& b : meta.blocks) {
    if (!b.is_null &&
        std::uint64_t{b.refcount} + occurrences > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(Errc::invariant_violation, "refcount overflow in segment " + id.hex());
    }
  }
  for (auto& b : meta.blocks) {
    if (!b.is_null) b.refcount += occurrences;
  }
  write_meta_in_place(id, meta);
}

bool SegmentStore::claim_placement(const SegmentId& id, std::uint64_t epoch, std::uint32_t rank) {
  Slot& slot = require(id);
  std::unique_lock lock(slot.mutex);
  SegmentMeta& meta = loaded(slot);
  if (meta.placement_epoch != 0) return false;
  meta.placement_epoch = epoch;
  meta.placement_rank = rank;
  write_meta_in_place(id, meta);
  return true;
}

SegmentMeta SegmentStore::meta(const SegmentId& id) const {
  Slot& slot = require(id);
  std::shared_lock lock(slot.mutex);
  return loaded(slot);
}

void SegmentStore::with_meta(const SegmentId& id,
                             const std::function<void(const SegmentMeta&)>& fn) const {
  Slot& slot = require(id);
  std::shared_lock lock(slot.mutex);
  fn(loaded(slot));
}

void SegmentStore::prefetch(const SegmentId& id) const {
  Slot* slot = find(id);
  if (!slot) return;
  std::uint32_t gen;
  {
    std::shared_lock lock(slot->mutex);
    gen = slot->entry.generation;
  }
  const int fd = ::open(data_path(id, gen).c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) return;
  ::posix_fadvise(fd, 0, 0, POSIX_FADV_WILLNEED);
  ::close(fd);
}

std::vector<SegmentId> SegmentStore::list_segments() const {
  std::shared_lock lock(index_mutex_);
  std::vector<SegmentId> out;
  out.reserve(index_.size());
  for (const auto& [fp, slot] : index_) out.push_back(fp);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> SegmentStore::orphan_files() const {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root_ / "segments")) {
    if (!e.is_regular_file()) continue;
    const fs::path& p = e.path();
    const std::string name = p.filename().string();
    const std::string hex = name.substr(0, std::min<std::size_t>(name.size(), 40));
    auto fp = Fingerprint::from_hex(hex);
    Slot* slot = fp ? find(*fp) : nullptr;
    bool known = false;
    if (slot) {
      std::uint32_t gen;
      {
        std::shared_lock lock(slot->mutex);
        gen = slot->entry.generation;
      }
      known = p == meta_path(*fp) || p == data_path(*fp, gen);
    }
    if (!known) out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void SegmentStore::sync_all() const {
  Fd d(root_, O_RDONLY | O_DIRECTORY);
  if (::syncfs(d.get()) != 0) throw_errno("syncfs");
}

IoCounters SegmentStore::io_counters() const noexcept {
  return {read_calls_.load(), bytes_read_.load()};
}

void SegmentStore::reset_io_counters() noexcept {
  read_calls_.store(0);
  bytes_read_.store(0);
}

std::uint64_t allocated_bytes_under(const fs::path& path) {
  std::uint64_t total = 0;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    struct stat st {};
    if (::lstat(e.path().c_str(), &st) != 0) continue;
    if (S_ISREG(st.st_mode)) total += static_cast<std::uint64_t>(st.st_blocks) * 512;
  }
  return total;
}

}  // namespace revstore
