#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>

#include "revstore/repository.hpp"

namespace revstore {

enum class LocationKind { physical, null };

struct ResolvedLocation {
  LocationKind kind = LocationKind::null;
  SegmentId segment;
  std::uint32_t block = 0;
  std::uint32_t hops = 0;  // indirect references followed

  friend bool operator==(const ResolvedLocation&, const ResolvedLocation&) = default;
};

/// Lazily loaded view of one VM's committed versions for pointer tracing.
/// Callers hold the repository's read lock for the VM.
class VersionChain {
 public:
  VersionChain(const Catalog& catalog, std::string vm);

  std::uint64_t latest() const noexcept { return latest_; }
  const VersionRecipe& version(std::uint64_t version_no);

  /// Follows Indirect pointers until a Direct or Null one. Raises corruption
  /// on a target that is not strictly newer, out of range, or missing.
  ResolvedLocation resolve(std::uint64_t version_no, std::uint64_t ordinal);

 private:
  const Catalog& catalog_;
  std::string vm_;
  std::uint64_t latest_ = 0;
  std::map<std::uint64_t, std::unique_ptr<VersionRecipe>> cache_;
};

ResolvedLocation resolve_block(Repository& repo, const std::string& vm, std::uint64_t version_no,
                               std::uint64_t ordinal);

struct RestoreOptions {
  std::size_t queue_depth = 1024;  // resolved blocks in flight between the stages
  bool prefetch = true;
};

struct RestoreStats {
  std::uint64_t bytes = 0;
  std::uint64_t physical_blocks = 0;
  std::uint64_t null_blocks = 0;
  std::uint64_t chain_hops = 0;
  std::uint64_t read_calls = 0;
};

using RestoreSink = std::function<void(std::span<const std::uint8_t>)>;

/// Streams a version's logical bytes to `sink`. A resolver thread traces
/// pointers into a bounded queue; the calling thread reads and emits data.
/// Throws if anything fails, after which the sink has seen a strict prefix.
RestoreStats restore_stream(Repository& repo, const std::string& vm, std::uint64_t version_no,
                            const RestoreSink& sink, const RestoreOptions& options = {});

struct ReadStats {
  std::uint64_t chain_hops_total = 0;
  std::uint64_t max_chain_length = 0;
  std::uint64_t distinct_segments = 0;
  std::uint64_t null_blocks = 0;
  std::uint64_t physical_blocks = 0;
  // Runs of physically sequential reads in logical order under the modeled
  // placement; each run after the first costs a seek.
  std::uint64_t non_contiguous_reads = 0;
};

/// Pointer and metadata walk only; no segment data is read.
ReadStats read_stats(Repository& repo, const std::string& vm, std::uint64_t version_no);

}  // namespace revstore
