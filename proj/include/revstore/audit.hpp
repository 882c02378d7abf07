#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "revstore/repository.hpp"

namespace revstore {

struct AuditOptions {
  // Re-hash every stored block (and whole segments that are still complete).
  bool verify_data = false;
  // Stop collecting after this many problems.
  std::size_t max_problems = 100;
};

struct AuditReport {
  std::uint64_t vms = 0;
  std::uint64_t versions = 0;
  std::uint64_t segments = 0;
  std::uint64_t non_null_blocks = 0;   // across stored segments
  std::uint64_t checked_refcounts = 0;
  std::uint64_t removed_blocks = 0;
  std::uint64_t removal_applied_segments = 0;
  std::uint64_t indirect_pointers = 0;
  std::vector<std::string> problems;
  // Leftovers from interrupted uploads or submits; harmless to reads.
  std::vector<std::filesystem::path> orphan_files;
  std::vector<SegmentId> unreferenced_segments;

  bool ok() const noexcept { return problems.empty(); }
};

/// Full-store consistency check. Every non-null block's refcount must equal
/// the number of Direct pointers to it over all committed versions; no
/// pointer may reach a null-flagged or removed block; latest versions hold no
/// Indirect pointers; chains only point to strictly newer versions.
/// Takes each VM's read lock in turn, so run it while the store is quiet.
AuditReport audit(Repository& repo, const AuditOptions& options = {});

}  // namespace revstore
