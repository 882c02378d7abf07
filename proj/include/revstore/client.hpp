#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "revstore/image_source.hpp"
#include "revstore/readpath.hpp"
#include "revstore/wire.hpp"

namespace revstore {

class Service;

/// One connection's worth of protocol calls. Rejections raise
/// Error(rejected) carrying the server's message, or MissingSegmentsError on
/// a 409 naming missing segments; transport failures raise Error(network).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual wire::RemoteConfig config() = 0;
  virtual std::vector<bool> query(std::span<const Fingerprint> fps) = 0;
  virtual void upload(const Fingerprint& fp, std::span<const std::uint8_t> segment,
                      std::span<const BlockDescriptor> blocks) = 0;
  virtual IngestReport submit(const std::string& vm, const wire::Submission& s) = 0;
  virtual std::optional<std::uint64_t> latest(const std::string& vm) = 0;
  /// Streams a version into `sink` and returns its length. A transfer that
  /// ends short of the announced length throws.
  virtual std::uint64_t restore(const std::string& vm, std::uint64_t version_no,
                                const RestoreSink& sink) = 0;
  // Body bytes this transport has sent so far.
  virtual std::uint64_t bytes_sent() const = 0;
};

using TransportFactory = std::function<std::unique_ptr<Transport>()>;

/// `url` is http://host:port.
std::unique_ptr<Transport> make_http_transport(const std::string& url);
/// Calls the service handlers directly with the encoded request bodies.
std::unique_ptr<Transport> make_local_transport(Service& service);

/// Block descriptors by segment fingerprint, so unchanged segments are not
/// re-described on every backup. Thread-safe.
class DescriptorCache {
 public:
  using Blocks = std::shared_ptr<const std::vector<BlockDescriptor>>;
  Blocks find(const Fingerprint& fp) const;
  void insert(const Fingerprint& fp, Blocks blocks);

 private:
  mutable std::mutex mu_;
  std::unordered_map<Fingerprint, Blocks, FingerprintHash> map_;
};

struct SegmentPlan {
  Fingerprint fingerprint;
  bool exists = false;
  DescriptorCache::Blocks blocks;
};

struct BackupPlan {
  ChunkParams params;
  std::uint64_t logical_length = 0;
  std::vector<SegmentPlan> segments;
};

/// Fingerprints every segment and block of the image (no network).
BackupPlan plan_backup(const ImageSource& image, const ChunkParams& params,
                       DescriptorCache* cache = nullptr, std::size_t workers = 0);

/// Text form of a plan: one "segment <index> <fp> <non-null blocks>" line each.
std::string format_plan(const BackupPlan& plan);

struct BackupOptions {
  std::string vm_id;
  std::size_t connections = 4;
  std::size_t workers = 0;  // 0 = hardware threads
  DescriptorCache* cache = nullptr;
  std::optional<ChunkParams> expect_params;
  // Test hook: fail with a network error once this many uploads finished.
  std::optional<std::size_t> stop_after_uploads;
};

struct BackupSummary {
  std::uint64_t version_no = 0;
  std::uint64_t segments_total = 0;
  std::uint64_t segments_distinct = 0;
  std::uint64_t segments_uploaded = 0;
  std::uint64_t segment_bytes_uploaded = 0;
  std::uint64_t bytes_sent = 0;  // every request body
  std::uint64_t resubmits = 0;
  IngestReport ingest;
  double fingerprint_seconds = 0;
  double upload_seconds = 0;
  double submit_seconds = 0;
  double total_seconds = 0;
};

BackupSummary backup(const ImageSource& image, const TransportFactory& connect,
                     const BackupOptions& options);

std::string format_summary(const BackupSummary& s);

struct RestoreFileSummary {
  std::uint64_t bytes = 0;
  double seconds = 0;
};

/// Writes `<out>.partial` then renames it. Refuses an existing `out` unless
/// `force`. On any failure the partial file is removed.
RestoreFileSummary restore_to_file(Transport& transport, const std::string& vm,
                                   std::uint64_t version_no, const std::filesystem::path& out,
                                   bool force);

}  // namespace revstore
