#include "revstore/repository.hpp"

#include <fcntl.h>
#include <sys/file.h>

#include <algorithm>
#include <chrono>
#include <map>
#include <set>

#include "revstore/error.hpp"
#include "revstore/reverse_dedup.hpp"

namespace revstore {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Repository::Repository(std::filesystem::path root, std::optional<StoreConfig> create,
                       RepositoryOptions options)
    : root_(std::move(root)), options_(std::move(options)), catalog_(root_, create, options_.sync) {
  if (!(options_.rebuild_threshold >= 0.0 && options_.rebuild_threshold <= 1.0)) {
    throw Error(Errc::invalid_argument, "rebuild threshold must lie in [0, 1]");
  }
  lock_ = std::make_unique<Fd>(root_ / "lock", O_RDWR | O_CREAT | O_CLOEXEC);
  if (::flock(lock_->get(), LOCK_EX | LOCK_NB) != 0) {
    throw Error(Errc::io, "store " + root_.string() + " is open in another process");
  }
  StoreOptions so;
  so.sync = options_.sync;
  so.allow_punch = options_.allow_punch;
  so.fault_hook = options_.fault_hook;
  store_ = std::make_unique<SegmentStore>(root_, catalog_.config().params, std::move(so));
  if (catalog_.recover()) rebuild_refcounts();
}

std::shared_mutex& Repository::vm_mutex(const std::string& vm) {
  std::lock_guard lock(vm_map_mutex_);
  auto& m = vm_locks_[vm];
  if (!m) m = std::make_unique<std::shared_mutex>();
  return *m;
}

std::shared_lock<std::shared_mutex> Repository::read_lock(const std::string& vm) {
  return std::shared_lock(vm_mutex(vm));
}

IngestReport Repository::ingest(const IngestRequest& request) {
  const auto t0 = std::chrono::steady_clock::now();
  const ChunkParams& params = config().params;
  if (!Catalog::valid_vm_id(request.vm_id)) {
    throw Error(Errc::invalid_argument, "invalid vm id '" + request.vm_id + "'");
  }
  if (request.logical_length == 0 ||
      request.segments.size() != params.segment_count(request.logical_length)) {
    throw Error(Errc::invalid_argument, "segment count does not match the logical length");
  }

  std::unique_lock vm_lock(vm_mutex(request.vm_id));
  const std::uint64_t latest = catalog_.latest(request.vm_id).value_or(0);
  const std::uint64_t version_no = request.version_no.value_or(latest + 1);
  if (version_no != latest + 1) {
    throw Error(Errc::out_of_order, "vm " + request.vm_id + " is at version " +
                                        std::to_string(latest) + "; cannot accept version " +
                                        std::to_string(version_no));
  }

  IngestReport report;
  report.vm_id = request.vm_id;
  report.version_no = version_no;
  report.segments_total = request.segments.size();

  // Global dedup: every occurrence of a segment in this version is one more
  // direct reference to each of its non-null blocks.
  std::map<Fingerprint, std::uint32_t> occurrences;
  for (const auto& fp : request.segments) ++occurrences[fp];
  report.segments_distinct = occurrences.size();
  {
    std::vector<Fingerprint> distinct;
    for (const auto& [fp, n] : occurrences) distinct.push_back(fp);
    const auto present = store_->query_exists(distinct);
    std::vector<Fingerprint> missing;
    for (std::size_t i = 0; i < distinct.size(); ++i) {
      if (!present[i]) missing.push_back(distinct[i]);
    }
    if (!missing.empty()) throw MissingSegmentsError(std::move(missing));
  }
  const std::uint32_t bps = params.blocks_per_segment();
  VersionRecipe curr;
  curr.vm_id = request.vm_id;
  curr.version_no = version_no;
  curr.logical_length = request.logical_length;
  curr.segments = request.segments;
  curr.pointers.resize(curr.segments.size() * bps);
  std::vector<bool> has_data(curr.segments.size(), false);
  for (std::size_t s = 0; s < curr.segments.size(); ++s) {
    store_->with_meta(curr.segments[s], [&](const SegmentMeta& meta) {
      for (std::uint32_t b = 0; b < bps; ++b) {
        if (!meta.blocks[b].is_null) {
          curr.pointers[s * bps + b] = BlockPointer::direct(s, b);
          has_data[s] = true;
        }
      }
    });
  }

  std::optional<VersionRecipe> prev;
  if (config().reverse_dedup && latest > 0) prev = catalog_.load(request.vm_id, latest);

  std::vector<std::pair<Fingerprint, std::uint32_t>> linked;
  std::vector<BlockPointer> prev_pointers;
  ReverseDedupResult dedup;
  bool dedup_applied = false;
  bool pinned = false;
  auto rollback = [&] {
    if (dedup_applied) {
      std::map<SegmentId, std::vector<std::int64_t>> undo;
      for (const auto& m : dedup.matches) {
        const BlockPointer& p = prev_pointers[m.prev_ordinal];
        auto& d = undo[prev->segments[p.a]];
        if (d.empty()) d.assign(bps, 0);
        d[p.b] += 1;
      }
      for (const auto& [seg, d] : undo) store_->adjust_refcounts(seg, d);
    }
    for (const auto& [fp, n] : linked) {
      std::vector<std::int64_t> d(bps, -static_cast<std::int64_t>(n));
      store_->adjust_refcounts(fp, d);
    }
    catalog_.discard_version(request.vm_id, version_no);
  };

  const auto t1 = std::chrono::steady_clock::now();
  try {
    // The new version's files go first. Until the catalog names them they
    // mark an unfinished submit, which reopening undoes.
    catalog_.write_version(curr);
    fault("after-version-files");
    for (const auto& [fp, n] : occurrences) {
      store_->link(fp, n);
      linked.emplace_back(fp, n);
    }
    report.link_seconds = seconds_since(t0);

    if (prev) {
      prev_pointers = prev->pointers;
      pin(prev->segments, prev_pointers, 1);
      pinned = true;
      dedup = reverse_deduplicate(*store_, *prev, curr);
      dedup_applied = true;
      if (!dedup.matches.empty()) {
        catalog_.stage_pointers(prev->vm_id, prev->version_no, prev->pointers);
      }
    }
    fault("before-commit");

    // Modeled placement: segments first referenced by this commit are laid
    // out in recipe order, as one batch of writes.
    std::lock_guard place_lock(placement_mutex_);
    const std::uint64_t epoch = catalog_.next_epoch();
    std::uint32_t rank = 0;
    std::set<Fingerprint> seen;
    for (std::size_t s = 0; s < curr.segments.size(); ++s) {
      if (!has_data[s] || !seen.insert(curr.segments[s]).second) continue;
      if (store_->claim_placement(curr.segments[s], epoch, rank)) ++rank;
    }
    report.segments_placed = rank;
    catalog_.commit(request.vm_id, version_no);
  } catch (...) {
    // If the undo fails too, the version files stay behind and the next
    // open rebuilds the refcounts.
    try {
      rollback();
    } catch (...) {
    }
    if (pinned) pin(prev->segments, prev_pointers, -1);
    throw;
  }
  fault("after-commit");
  if (prev && !dedup.matches.empty()) catalog_.publish_staged(prev->vm_id, prev->version_no);
  if (pinned) pin(prev->segments, prev_pointers, -1);
  report.blocks_redirected = dedup.matches.size();
  report.reverse_seconds = seconds_since(t1);

  const auto t2 = std::chrono::steady_clock::now();
  for (const auto& v : dedup.victims) {
    report.victims += v.blocks.size();
    std::lock_guard lock(removal_mutex_);
    const auto it = pins_.find(v.segment);
    RemovalResult r = store_->remove_unreferenced(
        v.segment, options_.rebuild_threshold,
        it == pins_.end() ? std::span<const std::uint32_t>{} : std::span(it->second));
    if (r.skipped_removal_applied) ++report.removals_skipped;
    if (r.report) report.removals.push_back(std::move(*r.report));
  }
  report.removal_seconds = seconds_since(t2);
  report.total_seconds = seconds_since(t0);
  return report;
}

void Repository::fault(std::string_view point) const {
  if (options_.fault_hook) options_.fault_hook(point);
}

void Repository::pin(const std::vector<SegmentId>& segments, std::span<const BlockPointer> pointers,
                     int delta) {
  const std::uint32_t bps = config().params.blocks_per_segment();
  std::lock_guard lock(removal_mutex_);
  for (const BlockPointer& p : pointers) {
    if (p.kind != PointerKind::direct) continue;
    auto& counts = pins_[segments[p.a]];
    if (counts.empty()) counts.assign(bps, 0);
    counts[p.b] += delta;
  }
  if (delta < 0) std::erase_if(pins_, [](const auto& kv) {
    return std::all_of(kv.second.begin(), kv.second.end(), [](std::uint32_t c) { return c == 0; });
  });
}

void Repository::rebuild_refcounts() {
  const std::uint32_t bps = config().params.blocks_per_segment();
  std::map<SegmentId, std::vector<std::int64_t>> want;
  for (const auto& [vm, latest] : catalog_.vms()) {
    for (std::uint64_t v = 1; v <= latest; ++v) {
      const VersionRecipe r = catalog_.load(vm, v);
      for (const BlockPointer& p : r.pointers) {
        if (p.kind != PointerKind::direct) continue;
        auto& counts = want[r.segments.at(p.a)];
        if (counts.empty()) counts.assign(bps, 0);
        ++counts[p.b];
      }
    }
  }
  for (const SegmentId& id : store_->list_segments()) {
    const SegmentMeta meta = store_->meta(id);
    const auto it = want.find(id);
    std::vector<std::int64_t> d(meta.blocks.size(), 0);
    bool differs = false;
    for (std::size_t b = 0; b < d.size(); ++b) {
      const std::int64_t w = it == want.end() ? 0 : it->second[b];
      d[b] = w - std::int64_t{meta.blocks[b].refcount};
      differs |= !meta.blocks[b].is_null && d[b] != 0;
    }
    if (differs) store_->adjust_refcounts(id, d);
  }
}

}  // namespace revstore
