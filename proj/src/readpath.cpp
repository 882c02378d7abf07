#include "revstore/readpath.hpp"

#include <fcntl.h>

#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "revstore/error.hpp"

namespace revstore {

VersionChain::VersionChain(const Catalog& catalog, std::string vm)
    : catalog_(catalog), vm_(std::move(vm)) {
  auto head = catalog_.latest(vm_);
  if (!head) throw Error(Errc::not_found, "unknown vm " + vm_);
  latest_ = *head;
}

const VersionRecipe& VersionChain::version(std::uint64_t version_no) {
  auto it = cache_.find(version_no);
  if (it != cache_.end()) return *it->second;
  auto r = std::make_unique<VersionRecipe>(catalog_.load(vm_, version_no));
  if (r->pointers.size() != r->segments.size() * catalog_.config().params.blocks_per_segment()) {
    throw Error(Errc::corruption, "version " + std::to_string(version_no) +
                                      " has a pointer table of the wrong length");
  }
  return *cache_.emplace(version_no, std::move(r)).first->second;
}

ResolvedLocation VersionChain::resolve(std::uint64_t version_no, std::uint64_t ordinal) {
  ResolvedLocation loc;
  std::uint64_t v = version_no;
  std::uint64_t o = ordinal;
  for (;;) {
    const VersionRecipe& r = version(v);
    if (o >= r.pointers.size()) {
      throw Error(Errc::corruption, "block ordinal " + std::to_string(o) + " outside version " +
                                        std::to_string(v));
    }
    const BlockPointer& p = r.pointers[o];
    switch (p.kind) {
      case PointerKind::null:
        loc.kind = LocationKind::null;
        return loc;
      case PointerKind::direct:
        if (p.a >= r.segments.size() || p.b >= catalog_.config().params.blocks_per_segment()) {
          throw Error(Errc::corruption, "direct pointer out of range in version " +
                                            std::to_string(v));
        }
        loc.kind = LocationKind::physical;
        loc.segment = r.segments[p.a];
        loc.block = static_cast<std::uint32_t>(p.b);
        return loc;
      case PointerKind::indirect:
        // Targets are strictly newer and bounded by latest, so this terminates.
        if (p.a <= v || p.a > latest_) {
          throw Error(Errc::corruption, "indirect pointer from version " + std::to_string(v) +
                                            " to version " + std::to_string(p.a));
        }
        v = p.a;
        o = p.b;
        ++loc.hops;
        break;
    }
  }
}

ResolvedLocation resolve_block(Repository& repo, const std::string& vm, std::uint64_t version_no,
                               std::uint64_t ordinal) {
  auto lock = repo.read_lock(vm);
  VersionChain chain(repo.catalog(), vm);
  return chain.resolve(version_no, ordinal);
}

namespace {

struct Batch {
  std::uint64_t first_ordinal = 0;
  std::vector<ResolvedLocation> blocks;
};

// Single-producer single-consumer queue bounded by the number of blocks held.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(Batch b) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return cancelled_ || held_ + b.blocks.size() <= capacity_ || held_ == 0; });
    if (cancelled_) return false;
    held_ += b.blocks.size();
    q_.push_back(std::move(b));
    not_empty_.notify_one();
    return true;
  }

  std::optional<Batch> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    Batch b = std::move(q_.front());
    q_.pop_front();
    held_ -= b.blocks.size();
    not_full_.notify_one();
    return b;
  }

  void close(std::exception_ptr error = nullptr) {
    std::lock_guard lock(mu_);
    closed_ = true;
    error_ = error;
    not_empty_.notify_all();
  }

  void cancel() {
    std::lock_guard lock(mu_);
    cancelled_ = true;
    not_full_.notify_all();
  }

  std::exception_ptr error() {
    std::lock_guard lock(mu_);
    return error_;
  }

 private:
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<Batch> q_;
  std::size_t capacity_;
  std::size_t held_ = 0;
  bool closed_ = false;
  bool cancelled_ = false;
  std::exception_ptr error_;
};

}  // namespace

RestoreStats restore_stream(Repository& repo, const std::string& vm, std::uint64_t version_no,
                            const RestoreSink& sink, const RestoreOptions& options) {
  auto lock = repo.read_lock(vm);
  VersionChain chain(repo.catalog(), vm);
  const VersionRecipe& target = chain.version(version_no);
  const std::uint32_t bs = repo.config().params.block_size;
  const std::uint64_t total_blocks = target.pointers.size();
  const std::uint64_t logical_length = target.logical_length;
  const std::size_t depth = std::max<std::size_t>(options.queue_depth, 1);
  const std::size_t batch_size = std::min<std::size_t>(depth, 256);

  RestoreStats stats;
  BatchQueue queue(depth);
  std::uint64_t hops = 0;

  std::thread resolver([&] {
    try {
      std::unordered_set<Fingerprint, FingerprintHash> announced;
      for (std::uint64_t first = 0; first < total_blocks; first += batch_size) {
        Batch b;
        b.first_ordinal = first;
        const std::uint64_t n = std::min<std::uint64_t>(batch_size, total_blocks - first);
        b.blocks.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
          ResolvedLocation loc = chain.resolve(version_no, first + i);
          hops += loc.hops;
          if (options.prefetch && loc.kind == LocationKind::physical &&
              announced.insert(loc.segment).second) {
            repo.store().prefetch(loc.segment);
          }
          b.blocks.push_back(loc);
        }
        if (!queue.push(std::move(b))) break;
      }
      queue.close();
    } catch (...) {
      queue.close(std::current_exception());
    }
  });

  std::vector<std::uint8_t> buf;
  std::uint64_t emitted = 0;
  try {
    while (auto batch = queue.pop()) {
      const auto& blocks = batch->blocks;
      buf.resize(blocks.size() * std::size_t{bs});
      std::size_t i = 0;
      while (i < blocks.size()) {
        const ResolvedLocation& loc = blocks[i];
        if (loc.kind == LocationKind::null) {
          std::memset(buf.data() + i * bs, 0, bs);
          ++stats.null_blocks;
          ++i;
          continue;
        }
        // Coalesce neighbours in the same segment into one ranged read.
        std::size_t j = i + 1;
        while (j < blocks.size() && blocks[j].kind == LocationKind::physical &&
               blocks[j].segment == loc.segment && blocks[j].block == loc.block + (j - i)) {
          ++j;
        }
        repo.store().read_range(loc.segment, loc.block, static_cast<std::uint32_t>(j - i),
                                std::span(buf.data() + i * bs, (j - i) * bs));
        ++stats.read_calls;
        stats.physical_blocks += j - i;
        i = j;
      }
      const std::uint64_t begin = batch->first_ordinal * bs;
      if (begin < logical_length) {
        const std::uint64_t len = std::min<std::uint64_t>(buf.size(), logical_length - begin);
        sink(std::span<const std::uint8_t>(buf.data(), len));
        emitted += len;
      }
    }
  } catch (...) {
    queue.cancel();
    resolver.join();
    throw;
  }
  resolver.join();
  if (auto err = queue.error()) std::rethrow_exception(err);
  if (emitted != logical_length) throw Error(Errc::corruption, "restore produced a short stream");
  stats.bytes = emitted;
  stats.chain_hops = hops;
  return stats;
}

ReadStats read_stats(Repository& repo, const std::string& vm, std::uint64_t version_no) {
  auto lock = repo.read_lock(vm);
  VersionChain chain(repo.catalog(), vm);
  const VersionRecipe& target = chain.version(version_no);
  ReadStats stats;

  struct Placement {
    std::uint64_t epoch;
    std::uint32_t rank;
    std::vector<std::uint32_t> slots;
  };
  std::unordered_map<Fingerprint, Placement, FingerprintHash> placements;
  auto placement = [&](const SegmentId& id) -> const Placement& {
    auto it = placements.find(id);
    if (it != placements.end()) return it->second;
    Placement p;
    repo.store().with_meta(id, [&](const SegmentMeta& m) {
      p.epoch = m.placement_epoch;
      p.rank = m.placement_rank;
      p.slots.reserve(m.blocks.size());
      for (const auto& b : m.blocks) p.slots.push_back(b.slot);
    });
    return placements.emplace(id, std::move(p)).first->second;
  };

  bool have_prev = false;
  SegmentId prev_seg;
  std::uint32_t prev_slot = 0;
  for (std::uint64_t o = 0; o < target.pointers.size(); ++o) {
    const ResolvedLocation loc = chain.resolve(version_no, o);
    stats.chain_hops_total += loc.hops;
    stats.max_chain_length = std::max<std::uint64_t>(stats.max_chain_length, loc.hops);
    if (loc.kind == LocationKind::null) {
      ++stats.null_blocks;
      continue;
    }
    ++stats.physical_blocks;
    const Placement& here = placement(loc.segment);
    const std::uint32_t slot = here.slots[loc.block];
    bool contiguous = false;
    if (have_prev) {
      if (loc.segment == prev_seg) {
        contiguous = slot != kNoSlot && slot > prev_slot;
      } else {
        const Placement& before = placement(prev_seg);
        contiguous = here.epoch != 0 && here.epoch == before.epoch && here.rank == before.rank + 1;
      }
    }
    if (!contiguous) ++stats.non_contiguous_reads;
    have_prev = true;
    prev_seg = loc.segment;
    prev_slot = slot;
  }
  stats.distinct_segments = placements.size();
  return stats;
}

}  // namespace revstore
