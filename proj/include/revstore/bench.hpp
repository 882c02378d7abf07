#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "revstore/readpath.hpp"
#include "revstore/workload.hpp"

namespace revstore {

/// "revdedup" (4 MiB), "revdedup-<n>M", "global-<n>M" (reverse dedup off) or
/// "conventional" (128 KiB segments, reverse dedup off).
struct BenchMode {
  std::string name;
  ChunkParams params;
  bool reverse_dedup = true;

  static BenchMode parse(std::string_view text);
};

struct BenchOptions {
  std::size_t clients = 8;
  std::size_t connections = 4;  // per client
  double rebuild_threshold = 0.2;
  bool sync = false;
  bool allow_punch = true;
  // Drive ingest over loopback HTTP; otherwise call the service in-process.
  bool http = true;
  // Restore and compare every version before reporting.
  bool verify = true;
  // After each round of backups, time a restore of each VM's new version.
  bool read_latest_each_round = false;
};

/// Brute-force count of distinct non-null 4 KiB blocks over every image.
struct OracleResult {
  std::uint64_t logical_bytes = 0;
  std::uint64_t non_null_bytes = 0;
  std::uint64_t unique_blocks = 0;
  std::uint64_t unique_bytes = 0;
};

OracleResult brute_force_oracle(const Workload& workload);

/// Free regions left inside segment files by removals.
struct FreeExtentProxy {
  static constexpr std::uint64_t kSmallExtent = 1 * kMiB;

  std::uint64_t extents = 0;
  std::uint64_t bytes = 0;
  std::uint64_t small_extents = 0;  // strictly below kSmallExtent
  std::uint64_t small_bytes = 0;
  // Extent counts by size class: key k counts sizes in [4 KiB * 2^k, 4 KiB * 2^(k+1)).
  std::map<std::uint32_t, std::uint64_t> histogram;

  void add(std::uint64_t extent);
};

struct RemovalEvent {
  std::string vm;
  std::uint64_t version_no = 0;  // the ingest that triggered it
  RemovalReport report;

  double ratio() const noexcept;
  /// Whether the mechanism matches the strict-< rule (a fallback counts as a punch).
  bool follows_rule() const noexcept;
};

struct VersionRow {
  std::string vm;
  std::uint64_t version_no = 0;
  ReadStats stats;
  std::uint64_t indirect_pointers = 0;
  std::uint64_t segments_uploaded = 0;
  std::uint64_t bytes_sent = 0;
  double backup_seconds = 0;
  double fingerprint_seconds = 0;
  double upload_seconds = 0;
  double ingest_seconds = 0;  // server side, inside the submit call
  std::optional<double> latest_read_seconds;
};

struct BenchReport {
  std::string mode;
  WorkloadSpec spec;
  double rebuild_threshold = 0;

  std::uint64_t logical_bytes = 0;
  std::uint64_t non_null_bytes = 0;
  std::uint64_t oracle_unique_bytes = 0;
  std::uint64_t global_only_bytes = 0;  // non-null bytes of every distinct segment
  std::uint64_t stored_bytes = 0;       // allocated under the store: data + metadata
  std::uint64_t stored_data_bytes = 0;  // allocated by segment data files
  std::uint64_t segments_stored = 0;

  std::uint64_t segments_uploaded = 0;
  std::uint64_t segment_bytes_uploaded = 0;
  std::uint64_t bytes_sent = 0;

  std::uint64_t punches = 0;
  std::uint64_t compactions = 0;
  std::uint64_t fallbacks = 0;
  std::uint64_t removals_skipped = 0;
  double removal_seconds = 0;
  FreeExtentProxy free_extents;
  std::vector<RemovalEvent> removals;

  double backup_seconds = 0;
  double verify_seconds = 0;
  std::vector<VersionRow> versions;

  double saving_oracle() const noexcept;
  double saving_global_only() const noexcept;
  double saving_stored() const noexcept;
  // Small free-extent bytes over stored data bytes.
  double small_extent_proxy() const noexcept;
};

/// Backs up every version of every VM through the client/server path into a
/// fresh store at `store_dir`, then (if enabled) verifies every version. Any
/// restore mismatch or failed audit throws Error(integrity).
BenchReport run_backup_bench(const WorkloadSpec& spec, const BenchMode& mode,
                             const BenchOptions& options, const std::filesystem::path& store_dir,
                             const OracleResult* oracle = nullptr);

enum class ReadOrder { latest_first, after_all };
ReadOrder parse_read_order(std::string_view text);

struct ReadRow {
  std::string vm;
  std::uint64_t version_no = 0;
  std::uint64_t bytes = 0;
  double seconds = 0;
  ReadStats stats;
};

/// Times restores on a populated store. latest_first reads only each VM's
/// newest version; after_all reads every version, oldest first. Page cache
/// for the store is dropped (best effort) before each read.
std::vector<ReadRow> run_read_bench(const std::filesystem::path& store_dir, ReadOrder order);

struct SweepRow {
  double threshold = 0;
  std::uint64_t punches = 0;
  std::uint64_t compactions = 0;
  std::uint64_t fallbacks = 0;
  std::uint64_t segments_with_victims = 0;
  std::uint64_t rule_violations = 0;
  double removal_seconds = 0;
  FreeExtentProxy free_extents;
  double small_extent_proxy = 0;
};

/// Replays the workload once per threshold, each on a clean store under `work_dir`.
std::vector<SweepRow> run_threshold_sweep(const WorkloadSpec& spec, const BenchMode& mode,
                                          const std::vector<double>& thresholds,
                                          BenchOptions options,
                                          const std::filesystem::path& work_dir);

/// report.txt (key value lines), versions.csv and removals.csv.
void write_backup_report(const BenchReport& report, const std::filesystem::path& out_dir);
void write_read_report(const std::vector<ReadRow>& rows, const std::filesystem::path& out_dir);
void write_sweep_report(const std::vector<SweepRow>& rows, const std::filesystem::path& out_dir);

std::string vm_name(std::uint32_t vm);

}  // namespace revstore
