#include "revstore/audit.hpp"

#include <cstdio>
#include <cstring>
#include <map>

#include "revstore/error.hpp"

namespace revstore {

namespace {

class Problems {
 public:
  Problems(AuditReport& r, std::size_t max) : r_(r), max_(max) {}
  void add(std::string p) {
    if (r_.problems.size() < max_) r_.problems.push_back(std::move(p));
  }

 private:
  AuditReport& r_;
  std::size_t max_;
};

}  // namespace

AuditReport audit(Repository& repo, const AuditOptions& options) {
  AuditReport report;
  Problems problems(report, options.max_problems);
  SegmentStore& store = repo.store();
  const ChunkParams& params = repo.config().params;
  const std::uint32_t bps = params.blocks_per_segment();

  std::map<SegmentId, SegmentMeta> metas;
  for (const SegmentId& id : store.list_segments()) {
    try {
      metas.emplace(id, store.meta(id));
    } catch (const std::exception& e) {
      problems.add("segment " + id.hex() + ": unreadable metadata: " + e.what());
    }
  }
  report.segments = metas.size();

  std::map<SegmentId, std::vector<std::uint64_t>> expected;
  std::map<SegmentId, bool> referenced;

  for (const auto& [vm, latest] : repo.catalog().vms()) {
    ++report.vms;
    auto lock = repo.read_lock(vm);
    for (std::uint64_t v = 1; v <= latest; ++v) {
      ++report.versions;
      const std::string where = "vm " + vm + " version " + std::to_string(v);
      VersionRecipe r;
      try {
        r = repo.catalog().load(vm, v);
      } catch (const std::exception& e) {
        problems.add(where + ": " + e.what());
        continue;
      }
      if (r.logical_length == 0 || r.segments.size() != params.segment_count(r.logical_length)) {
        problems.add(where + ": segment count does not match the logical length");
      }
      if (r.pointers.size() != r.segments.size() * bps) {
        problems.add(where + ": pointer table has " + std::to_string(r.pointers.size()) +
                     " records, expected " + std::to_string(r.segments.size() * bps));
        continue;
      }
      for (const auto& fp : r.segments) referenced[fp] = true;
      for (std::uint64_t o = 0; o < r.pointers.size(); ++o) {
        const BlockPointer& p = r.pointers[o];
        const std::string at = where + " block " + std::to_string(o);
        if (p.kind == PointerKind::indirect) {
          ++report.indirect_pointers;
          if (v == latest) problems.add(at + ": latest version holds an indirect pointer");
          if (p.a <= v || p.a > latest) {
            problems.add(at + ": indirect pointer to version " + std::to_string(p.a));
          }
          continue;
        }
        if (p.kind != PointerKind::direct) continue;
        if (p.a >= r.segments.size() || p.b >= bps) {
          problems.add(at + ": direct pointer out of range");
          continue;
        }
        const SegmentId& seg = r.segments[p.a];
        auto it = metas.find(seg);
        if (it == metas.end()) {
          problems.add(at + ": segment " + seg.hex() + " is not stored");
          continue;
        }
        const BlockRecord& b = it->second.blocks[p.b];
        if (b.is_null) problems.add(at + ": direct pointer to a null block");
        if (b.removed) problems.add(at + ": direct pointer to removed block " + seg.hex() + "/" +
                                    std::to_string(p.b));
        auto& counts = expected[seg];
        if (counts.empty()) counts.assign(bps, 0);
        ++counts[p.b];
      }
    }
  }

  for (const auto& [id, meta] : metas) {
    if (meta.removal_applied) ++report.removal_applied_segments;
    if (!referenced.contains(id)) report.unreferenced_segments.push_back(id);
    const auto exp_it = expected.find(id);
    for (std::uint32_t b = 0; b < meta.blocks.size(); ++b) {
      const BlockRecord& rec = meta.blocks[b];
      if (rec.removed) ++report.removed_blocks;
      if (rec.is_null) {
        if (rec.refcount != 0) {
          problems.add("segment " + id.hex() + " block " + std::to_string(b) +
                       ": null block holds a refcount");
        }
        continue;
      }
      ++report.non_null_blocks;
      ++report.checked_refcounts;
      const std::uint64_t want = exp_it == expected.end() ? 0 : exp_it->second[b];
      if (rec.refcount != want) {
        problems.add("segment " + id.hex() + " block " + std::to_string(b) + ": refcount " +
                     std::to_string(rec.refcount) + ", direct pointers " + std::to_string(want));
      }
      if (rec.removed && rec.refcount != 0) {
        problems.add("segment " + id.hex() + " block " + std::to_string(b) +
                     ": removed block is still referenced");
      }
    }

    if (options.verify_data) {
      try {
        std::vector<std::uint8_t> buf(params.block_size);
        for (std::uint32_t b = 0; b < meta.blocks.size(); ++b) {
          const BlockRecord& rec = meta.blocks[b];
          if (rec.is_null || rec.removed || rec.refcount == 0) continue;
          store.read_range(id, b, 1, buf);
          if (fingerprint(buf) != rec.fingerprint) {
            problems.add("segment " + id.hex() + " block " + std::to_string(b) +
                         ": content does not match its fingerprint");
          }
        }
        if (meta.complete()) {
          // Unreferenced blocks fail read_range, so rebuild the image by hand.
          std::vector<std::uint8_t> whole(params.segment_size, 0);
          const auto path = store.data_path(id, meta.generation);
          auto bytes = std::filesystem::file_size(path);
          if (bytes < std::uint64_t{meta.physical_slot_count()} * params.block_size) {
            problems.add("segment " + id.hex() + ": data file is truncated");
          } else {
            std::vector<std::uint8_t> file(bytes);
            FILE* f = std::fopen(path.c_str(), "rb");
            if (!f || std::fread(file.data(), 1, file.size(), f) != file.size()) {
              problems.add("segment " + id.hex() + ": data file unreadable");
            } else {
              for (std::uint32_t b = 0; b < meta.blocks.size(); ++b) {
                const BlockRecord& rec = meta.blocks[b];
                if (rec.is_null) continue;
                std::memcpy(whole.data() + std::size_t{b} * params.block_size,
                            file.data() + std::size_t{rec.slot} * params.block_size,
                            params.block_size);
              }
              if (fingerprint(whole) != id) {
                problems.add("segment " + id.hex() + ": content does not match its fingerprint");
              }
            }
            if (f) std::fclose(f);
          }
        }
      } catch (const std::exception& e) {
        problems.add("segment " + id.hex() + ": " + e.what());
      }
    }
  }

  report.orphan_files = store.orphan_files();
  for (auto& p : repo.catalog().orphan_files()) report.orphan_files.push_back(std::move(p));
  return report;
}

}  // namespace revstore
