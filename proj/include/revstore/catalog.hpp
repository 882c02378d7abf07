#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "revstore/chunking.hpp"
#include "revstore/version_files.hpp"

namespace revstore {

/// Store-wide settings fixed when the store is created.
struct StoreConfig {
  ChunkParams params;
  bool reverse_dedup = true;

  friend bool operator==(const StoreConfig&, const StoreConfig&) = default;
};

/// VM registry and version chain heads, plus the per-version files.
///
/// `root/catalog` is a small text file rewritten atomically on every commit:
///
///   revstore-catalog 1
///   segment_size <bytes>
///   block_size <bytes>
///   reverse_dedup <0|1>
///   epoch <last placement epoch>
///   vm <id> <latest version>      (one line per VM)
///
/// Versions live in `root/vms/<id>/<n>.recipe` and `<n>.ptr`. Files of a
/// version above the catalog's latest are leftovers of an unfinished submit.
/// `<n>.ptr.next` is a rewritten table for version n that takes effect once
/// version n+1 is committed.
class Catalog {
 public:
  /// Opens an existing catalog, or creates one from `create` if none exists.
  /// When both exist they must agree.
  Catalog(std::filesystem::path root, std::optional<StoreConfig> create, bool sync = true);

  const StoreConfig& config() const noexcept { return config_; }
  const std::filesystem::path& root() const noexcept { return root_; }

  std::optional<std::uint64_t> latest(const std::string& vm) const;
  std::map<std::string, std::uint64_t> vms() const;

  std::uint64_t next_epoch();

  VersionRecipe load(const std::string& vm, std::uint64_t version_no) const;
  std::vector<BlockPointer> load_pointers(const std::string& vm, std::uint64_t version_no) const;

  void write_version(const VersionRecipe& recipe) const;
  void rewrite_pointers(const std::string& vm, std::uint64_t version_no,
                        std::span<const BlockPointer> pointers) const;
  /// Writes `<n>.ptr.next`; publish_staged renames it over `<n>.ptr`.
  void stage_pointers(const std::string& vm, std::uint64_t version_no,
                      std::span<const BlockPointer> pointers) const;
  void publish_staged(const std::string& vm, std::uint64_t version_no) const;
  /// Removes the files of uncommitted `version_no` and the table staged for
  /// its predecessor.
  void discard_version(const std::string& vm, std::uint64_t version_no) const;
  /// Makes `version_no` the VM's latest version.
  void commit(const std::string& vm, std::uint64_t version_no);

  std::filesystem::path recipe_path(const std::string& vm, std::uint64_t version_no) const;
  std::filesystem::path pointer_path(const std::string& vm, std::uint64_t version_no) const;
  std::filesystem::path staged_pointer_path(const std::string& vm, std::uint64_t version_no) const;

  /// Settles what an interrupted submit left behind. A table staged under a
  /// committed successor is published; files of uncommitted versions are
  /// deleted. Returns true if anything was deleted, in which case refcounts
  /// may count references no committed version holds.
  bool recover();

  /// Version files that no committed version accounts for.
  std::vector<std::filesystem::path> orphan_files() const;

  /// VM ids are 1-64 characters of [A-Za-z0-9._-], not starting with '.'.
  static bool valid_vm_id(std::string_view id) noexcept;

 private:
  void save() const;

  std::filesystem::path root_;
  bool sync_;
  StoreConfig config_;
  mutable std::mutex mutex_;
  std::uint64_t epoch_ = 0;
  std::map<std::string, std::uint64_t> latest_;
};

}  // namespace revstore
