#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "revstore/catalog.hpp"
#include "revstore/file_io.hpp"
#include "revstore/segment_store.hpp"

namespace revstore {

struct RepositoryOptions {
  double rebuild_threshold = 0.2;
  // Governs fsync of segment, metadata, version and catalog files.
  bool sync = true;
  bool allow_punch = true;
  std::function<void(std::string_view)> fault_hook;
};

struct IngestRequest {
  std::string vm_id;
  std::optional<std::uint64_t> version_no;  // empty = next
  std::uint64_t logical_length = 0;
  std::vector<Fingerprint> segments;
};

struct IngestReport {
  std::string vm_id;
  std::uint64_t version_no = 0;
  std::uint64_t segments_total = 0;
  std::uint64_t segments_distinct = 0;
  std::uint64_t segments_placed = 0;  // first committed reference to the segment
  std::uint64_t blocks_redirected = 0;
  std::uint64_t victims = 0;
  std::vector<RemovalReport> removals;
  std::uint64_t removals_skipped = 0;  // segments with victims that already had their removal
  double link_seconds = 0;
  double reverse_seconds = 0;
  double removal_seconds = 0;
  double total_seconds = 0;
};

/// A store: catalog, segment store and the ingest path tying them together.
class Repository {
 public:
  /// Opens the store at `root`, creating it from `create` if it does not exist.
  /// A submit interrupted by a crash is finished if its catalog commit landed
  /// and undone otherwise. One process at a time may hold a store open.
  Repository(std::filesystem::path root, std::optional<StoreConfig> create,
             RepositoryOptions options = {});

  const StoreConfig& config() const noexcept { return catalog_.config(); }
  const RepositoryOptions& options() const noexcept { return options_; }
  const std::filesystem::path& root() const noexcept { return root_; }

  SegmentStore& store() noexcept { return *store_; }
  const SegmentStore& store() const noexcept { return *store_; }
  Catalog& catalog() noexcept { return catalog_; }
  const Catalog& catalog() const noexcept { return catalog_; }

  /// Commits a new version whose segments are already stored. Versions of one
  /// VM are serialized; different VMs ingest concurrently.
  IngestReport ingest(const IngestRequest& request);

  /// Held by readers of a VM's version chain so no ingest rewrites it meanwhile.
  std::shared_lock<std::shared_mutex> read_lock(const std::string& vm);

 private:
  std::shared_mutex& vm_mutex(const std::string& vm);
  void fault(std::string_view point) const;
  // Sets every refcount to the number of committed direct pointers.
  void rebuild_refcounts();
  void pin(const std::vector<SegmentId>& segments, std::span<const BlockPointer> pointers,
           int delta);

  std::filesystem::path root_;
  RepositoryOptions options_;
  Catalog catalog_;
  std::unique_ptr<Fd> lock_;
  std::unique_ptr<SegmentStore> store_;
  std::mutex vm_map_mutex_;
  std::map<std::string, std::unique_ptr<std::shared_mutex>> vm_locks_;
  std::mutex placement_mutex_;
  // Direct blocks of versions whose rewritten pointer table is not published
  // yet. Removals leave them alone even at refcount 0.
  std::mutex removal_mutex_;
  std::map<SegmentId, std::vector<std::uint32_t>> pins_;
};

}  // namespace revstore
