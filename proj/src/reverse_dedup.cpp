#include "revstore/reverse_dedup.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "revstore/error.hpp"

namespace revstore {

void BlockIndex::add_prev(const Fingerprint& fp, std::uint64_t ordinal) {
  map_[fp].prev.push_back(ordinal);
}

void BlockIndex::add_curr(const Fingerprint& fp, std::uint64_t ordinal) {
  Entry& e = map_[fp];
  e.curr = std::min(e.curr, ordinal);
}

std::vector<BlockMatch> match_blocks(const BlockIndex& index) {
  std::vector<BlockMatch> out;
  for (const auto& [fp, e] : index.entries()) {
    if (e.curr == BlockIndex::kNone) continue;
    for (std::uint64_t p : e.prev) out.push_back({p, e.curr});
  }
  std::sort(out.begin(), out.end(),
            [](const BlockMatch& x, const BlockMatch& y) { return x.prev_ordinal < y.prev_ordinal; });
  return out;
}

namespace {

// Adds the non-null direct blocks of `v` whose segment is not in `skip`.
template <typename Add>
void index_version(const SegmentStore& store, const VersionRecipe& v,
                   const std::set<Fingerprint>& skip, Add add) {
  const std::uint32_t bps = store.params().blocks_per_segment();
  if (v.pointers.size() != v.segments.size() * bps) {
    throw Error(Errc::corruption, "pointer table length does not match the segment list");
  }
  for (std::size_t s = 0; s < v.segments.size(); ++s) {
    if (skip.contains(v.segments[s])) continue;
    store.with_meta(v.segments[s], [&](const SegmentMeta& meta) {
      for (std::uint32_t b = 0; b < bps; ++b) {
        const std::uint64_t ordinal = std::uint64_t{s} * bps + b;
        const BlockPointer& p = v.pointers[ordinal];
        if (p.kind != PointerKind::direct || meta.blocks[b].is_null) continue;
        add(meta.blocks[b].fingerprint, ordinal);
      }
    });
  }
}

}  // namespace

BlockIndex build_block_index(const SegmentStore& store, const VersionRecipe& prev,
                             const VersionRecipe& curr) {
  const std::set<Fingerprint> prev_set(prev.segments.begin(), prev.segments.end());
  std::set<Fingerprint> shared;
  for (const auto& fp : curr.segments) {
    if (prev_set.contains(fp)) shared.insert(fp);
  }
  BlockIndex index;
  index_version(store, curr, shared,
                [&](const Fingerprint& fp, std::uint64_t o) { index.add_curr(fp, o); });
  // Prev blocks only matter if curr has the same fingerprint.
  index_version(store, prev, shared, [&](const Fingerprint& fp, std::uint64_t o) {
    auto& m = index.entries();
    if (m.find(fp) != m.end()) index.add_prev(fp, o);
  });
  return index;
}

ReverseDedupResult reverse_deduplicate(SegmentStore& store, VersionRecipe& prev,
                                       const VersionRecipe& curr) {
  if (prev.vm_id != curr.vm_id || curr.version_no != prev.version_no + 1) {
    throw Error(Errc::invalid_argument, "reverse dedup needs two adjacent versions of one VM");
  }
  if (prev.indirect_count() != 0) {
    throw Error(Errc::invariant_violation, "previous version already holds indirect pointers");
  }
  const std::uint32_t bps = store.params().blocks_per_segment();
  ReverseDedupResult result;
  result.matches = match_blocks(build_block_index(store, prev, curr));

  std::map<SegmentId, std::vector<std::int64_t>> deltas;
  for (const BlockMatch& m : result.matches) {
    BlockPointer& p = prev.pointers[m.prev_ordinal];
    auto& d = deltas[prev.segments[p.a]];
    if (d.empty()) d.assign(bps, 0);
    d[p.b] -= 1;
    p = BlockPointer::indirect(curr.version_no, m.curr_ordinal);
  }

  // All or nothing: a failed decrement puts back the ones already applied.
  std::vector<const SegmentId*> applied;
  try {
    for (const auto& [seg, d] : deltas) {
      const SegmentMeta meta = store.adjust_refcounts(seg, d);
      applied.push_back(&seg);
      SegmentVictims v{seg, {}};
      for (std::uint32_t b = 0; b < bps; ++b) {
        if (d[b] < 0 && meta.blocks[b].refcount == 0) v.blocks.push_back(b);
      }
      if (!v.blocks.empty()) result.victims.push_back(std::move(v));
    }
  } catch (...) {
    for (const SegmentId* seg : applied) {
      std::vector<std::int64_t> undo = deltas[*seg];
      for (auto& x : undo) x = -x;
      store.adjust_refcounts(*seg, undo);
    }
    throw;
  }
  return result;
}

}  // namespace revstore
