#include "revstore/bench.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "revstore/audit.hpp"
#include "revstore/bench_spec.hpp"
#include "revstore/client.hpp"
#include "revstore/error.hpp"
#include "revstore/server.hpp"

namespace revstore {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double ratio_or_zero(double num, double den) { return den > 0 ? num / den : 0.0; }

void drop_cache(const fs::path& root) {
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const int fd = ::open(e.path().c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) continue;
    ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
    ::close(fd);
  }
}

// Compares a restore stream against the generator, chunk by chunk.
class VerifyingSink {
 public:
  VerifyingSink(const Workload& w, std::uint32_t vm, std::uint32_t version)
      : w_(w), vm_(vm), version_(version) {}

  void operator()(std::span<const std::uint8_t> data) {
    if (offset_ + data.size() > w_.spec().image_size) {
      throw Error(Errc::integrity, "correctness gate: " + vm_name(vm_) + " version " +
                                       std::to_string(version_) + " restored past its length");
    }
    expected_.resize(data.size());
    w_.read(vm_, version_, offset_, expected_);
    if (std::memcmp(expected_.data(), data.data(), data.size()) != 0) {
      std::size_t i = 0;
      while (expected_[i] == data[i]) ++i;
      throw Error(Errc::integrity, "correctness gate: " + vm_name(vm_) + " version " +
                                       std::to_string(version_) + " differs at byte " +
                                       std::to_string(offset_ + i));
    }
    offset_ += data.size();
  }

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  const Workload& w_;
  std::uint32_t vm_;
  std::uint32_t version_;
  std::uint64_t offset_ = 0;
  std::vector<std::uint8_t> expected_;
};

struct Served {
  std::unique_ptr<Repository> repo;
  std::unique_ptr<Service> service;
  std::unique_ptr<HttpServer> http;
  TransportFactory connect;
};

Served serve(const fs::path& store_dir, const BenchMode& mode, const BenchOptions& options) {
  if (fs::exists(store_dir) && !fs::is_empty(store_dir)) {
    throw Error(Errc::invalid_argument, "bench store " + store_dir.string() + " is not empty");
  }
  Served s;
  RepositoryOptions ro;
  ro.rebuild_threshold = options.rebuild_threshold;
  ro.sync = options.sync;
  ro.allow_punch = options.allow_punch;
  s.repo = std::make_unique<Repository>(store_dir, StoreConfig{mode.params, mode.reverse_dedup}, ro);
  s.service = std::make_unique<Service>(*s.repo);
  if (options.http) {
    s.http = std::make_unique<HttpServer>(*s.service, options.clients * options.connections + 4);
    const int port = s.http->bind("127.0.0.1", 0);
    s.http->start();
    const std::string url = "http://127.0.0.1:" + std::to_string(port);
    s.connect = [url] { return make_http_transport(url); };
  } else {
    Service* svc = s.service.get();
    s.connect = [svc] { return make_local_transport(*svc); };
  }
  return s;
}

}  // namespace

std::string vm_name(std::uint32_t vm) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "vm%02u", vm);
  return buf;
}

BenchMode BenchMode::parse(std::string_view text) {
  BenchMode m;
  m.name = std::string(text);
  if (text == "conventional") {
    m.params = ChunkParams{128 * kKiB, 4096};
    m.reverse_dedup = false;
    return m;
  }
  if (text == "revdedup") {
    m.params = ChunkParams{4 * kMiB, 4096};
    return m;
  }
  for (std::string_view prefix : {"revdedup-", "global-"}) {
    if (text.starts_with(prefix)) {
      m.params = ChunkParams{parse_size(text.substr(prefix.size())), 4096};
      m.params.validate();
      m.reverse_dedup = prefix == "revdedup-";
      return m;
    }
  }
  throw Error(Errc::invalid_argument, "unknown bench mode '" + std::string(text) + "'");
}

OracleResult brute_force_oracle(const Workload& w) {
  const WorkloadSpec& spec = w.spec();
  OracleResult r;
  std::unordered_set<Fingerprint, FingerprintHash> seen;
  constexpr std::uint64_t kChunk = 4 * kMiB;
  std::vector<std::uint8_t> buf(kChunk);
  for (std::uint32_t vm = 0; vm < spec.vm_count; ++vm) {
    for (std::uint32_t v = 1; v <= spec.versions; ++v) {
      for (std::uint64_t off = 0; off < spec.image_size; off += kChunk) {
        const std::uint64_t len = std::min(kChunk, spec.image_size - off);
        w.read(vm, v, off, std::span(buf).first(len));
        for (std::uint64_t b = 0; b < len; b += kWorkloadBlockSize) {
          const auto block = std::span<const std::uint8_t>(buf).subspan(b, std::min<std::uint64_t>(kWorkloadBlockSize, len - b));
          if (is_zero(block)) continue;
          r.non_null_bytes += block.size();
          seen.insert(fingerprint(block));
        }
      }
      r.logical_bytes += spec.image_size;
    }
  }
  r.unique_blocks = seen.size();
  r.unique_bytes = r.unique_blocks * kWorkloadBlockSize;
  return r;
}

void FreeExtentProxy::add(std::uint64_t extent) {
  ++extents;
  bytes += extent;
  if (extent < kSmallExtent) {
    ++small_extents;
    small_bytes += extent;
  }
  std::uint32_t k = 0;
  for (std::uint64_t s = extent / (4 * kKiB); s > 1; s >>= 1) ++k;
  ++histogram[k];
}

double RemovalEvent::ratio() const noexcept {
  return ratio_or_zero(report.blocks_removed, report.non_null_blocks);
}

bool RemovalEvent::follows_rule() const noexcept {
  const bool punch = ratio() < report.threshold;
  return punch ? report.mechanism != RemovalMechanism::compact
               : report.mechanism == RemovalMechanism::compact;
}

double BenchReport::saving_oracle() const noexcept {
  return 1.0 - ratio_or_zero(static_cast<double>(oracle_unique_bytes), static_cast<double>(non_null_bytes));
}
double BenchReport::saving_global_only() const noexcept {
  return 1.0 - ratio_or_zero(static_cast<double>(global_only_bytes), static_cast<double>(non_null_bytes));
}
double BenchReport::saving_stored() const noexcept {
  return 1.0 - ratio_or_zero(static_cast<double>(stored_bytes), static_cast<double>(non_null_bytes));
}
double BenchReport::small_extent_proxy() const noexcept {
  return ratio_or_zero(static_cast<double>(free_extents.small_bytes), static_cast<double>(stored_data_bytes));
}

BenchReport run_backup_bench(const WorkloadSpec& spec, const BenchMode& mode,
                             const BenchOptions& options, const fs::path& store_dir,
                             const OracleResult* oracle) {
  const Workload workload(spec);
  Served s = serve(store_dir, mode, options);
  Repository& repo = *s.repo;

  BenchReport report;
  report.mode = mode.name;
  report.spec = spec;
  report.rebuild_threshold = options.rebuild_threshold;

  DescriptorCache cache;
  std::map<std::pair<std::uint32_t, std::uint32_t>, BackupSummary> summaries;
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> latest_reads;
  std::mutex mu;
  const std::size_t clients = std::max<std::size_t>(1, std::min<std::size_t>(options.clients, spec.vm_count));

  const auto t0 = Clock::now();
  for (std::uint32_t v = 1; v <= spec.versions; ++v) {
    std::vector<std::thread> pool;
    std::exception_ptr error;
    for (std::size_t c = 0; c < clients; ++c) {
      pool.emplace_back([&, c] {
        try {
          for (std::uint32_t vm = static_cast<std::uint32_t>(c); vm < spec.vm_count;
               vm += static_cast<std::uint32_t>(clients)) {
            auto image = workload.image(vm, v);
            BackupOptions bo;
            bo.vm_id = vm_name(vm);
            bo.connections = options.connections;
            bo.cache = &cache;
            bo.expect_params = mode.params;
            auto summary = backup(*image, s.connect, bo);
            if (summary.version_no != v) {
              throw Error(Errc::invariant_violation, bo.vm_id + " got version " +
                                                         std::to_string(summary.version_no));
            }
            std::lock_guard lock(mu);
            summaries[{vm, v}] = std::move(summary);
          }
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);

    if (options.read_latest_each_round) {
      for (std::uint32_t vm = 0; vm < spec.vm_count; ++vm) {
        drop_cache(store_dir);
        const auto t1 = Clock::now();
        restore_stream(repo, vm_name(vm), v, [](std::span<const std::uint8_t>) {});
        latest_reads[{vm, v}] = since(t1);
      }
    }
  }
  report.backup_seconds = since(t0);
  if (s.http) s.http->stop();
  if (!options.sync) repo.store().sync_all();

  if (options.verify) {
    const auto t1 = Clock::now();
    for (std::uint32_t vm = 0; vm < spec.vm_count; ++vm) {
      for (std::uint32_t v = 1; v <= spec.versions; ++v) {
        VerifyingSink sink(workload, vm, v);
        restore_stream(repo, vm_name(vm), v, [&](std::span<const std::uint8_t> d) { sink(d); });
        if (sink.offset() != spec.image_size) {
          throw Error(Errc::integrity, "correctness gate: " + vm_name(vm) + " version " +
                                           std::to_string(v) + " restored short");
        }
      }
    }
    const AuditReport audit_report = audit(repo);
    if (!audit_report.ok()) {
      throw Error(Errc::integrity, "correctness gate: audit failed: " + audit_report.problems.front());
    }
    report.verify_seconds = since(t1);
  }

  for (const auto& [key, summary] : summaries) {
    const auto [vm, v] = key;
    VersionRow row;
    row.vm = vm_name(vm);
    row.version_no = v;
    row.stats = read_stats(repo, row.vm, v);
    {
      auto lock = repo.read_lock(row.vm);
      row.indirect_pointers = repo.catalog().load(row.vm, v).indirect_count();
    }
    row.segments_uploaded = summary.segments_uploaded;
    row.bytes_sent = summary.bytes_sent;
    row.backup_seconds = summary.total_seconds;
    row.fingerprint_seconds = summary.fingerprint_seconds;
    row.upload_seconds = summary.upload_seconds;
    row.ingest_seconds = summary.ingest.total_seconds;
    if (auto it = latest_reads.find(key); it != latest_reads.end()) {
      row.latest_read_seconds = it->second;
    }
    report.versions.push_back(row);

    report.segments_uploaded += summary.segments_uploaded;
    report.segment_bytes_uploaded += summary.segment_bytes_uploaded;
    report.bytes_sent += summary.bytes_sent;
    report.removals_skipped += summary.ingest.removals_skipped;
    report.removal_seconds += summary.ingest.removal_seconds;
    for (const auto& rm : summary.ingest.removals) {
      report.removals.push_back({row.vm, v, rm});
      switch (rm.mechanism) {
        case RemovalMechanism::punch: ++report.punches; break;
        case RemovalMechanism::compact: ++report.compactions; break;
        case RemovalMechanism::compact_fallback: ++report.fallbacks; break;
      }
      for (auto e : rm.freed_extents) report.free_extents.add(e);
    }
  }

  const std::uint32_t bs = mode.params.block_size;
  for (const auto& id : repo.store().list_segments()) {
    ++report.segments_stored;
    repo.store().with_meta(id, [&](const SegmentMeta& m) {
      report.global_only_bytes += std::uint64_t{m.non_null_count()} * bs;
    });
  }
  report.stored_bytes = allocated_bytes_under(store_dir);
  report.stored_data_bytes = 0;
  for (const auto& e : fs::recursive_directory_iterator(store_dir / "segments")) {
    if (e.is_regular_file() && e.path().extension() == ".seg") {
      struct stat st {};
      if (::stat(e.path().c_str(), &st) == 0) report.stored_data_bytes += std::uint64_t(st.st_blocks) * 512;
    }
  }

  const OracleResult computed = oracle ? *oracle : brute_force_oracle(workload);
  report.logical_bytes = computed.logical_bytes;
  report.non_null_bytes = computed.non_null_bytes;
  report.oracle_unique_bytes = computed.unique_bytes;
  return report;
}

ReadOrder parse_read_order(std::string_view text) {
  if (text == "latest-first") return ReadOrder::latest_first;
  if (text == "after-all") return ReadOrder::after_all;
  throw Error(Errc::invalid_argument, "unknown read order '" + std::string(text) + "'");
}

std::vector<ReadRow> run_read_bench(const fs::path& store_dir, ReadOrder order) {
  RepositoryOptions ro;
  ro.sync = false;
  Repository repo(store_dir, std::nullopt, ro);
  std::vector<ReadRow> rows;
  for (const auto& [vm, latest] : repo.catalog().vms()) {
    const std::uint64_t first = order == ReadOrder::latest_first ? latest : 1;
    for (std::uint64_t v = first; v <= latest; ++v) {
      ReadRow row;
      row.vm = vm;
      row.version_no = v;
      row.stats = read_stats(repo, vm, v);
      drop_cache(store_dir);
      const auto t0 = Clock::now();
      row.bytes = restore_stream(repo, vm, v, [](std::span<const std::uint8_t>) {}).bytes;
      row.seconds = since(t0);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<SweepRow> run_threshold_sweep(const WorkloadSpec& spec, const BenchMode& mode,
                                          const std::vector<double>& thresholds,
                                          BenchOptions options, const fs::path& work_dir) {
  const OracleResult oracle = brute_force_oracle(Workload(spec));
  std::vector<SweepRow> rows;
  for (double t : thresholds) {
    options.rebuild_threshold = t;
    char name[32];
    std::snprintf(name, sizeof(name), "threshold-%.3f", t);
    const fs::path dir = work_dir / name;
    fs::remove_all(dir);
    const BenchReport r = run_backup_bench(spec, mode, options, dir, &oracle);
    SweepRow row;
    row.threshold = t;
    row.punches = r.punches;
    row.compactions = r.compactions;
    row.fallbacks = r.fallbacks;
    row.segments_with_victims = r.removals.size();
    for (const auto& e : r.removals) row.rule_violations += e.follows_rule() ? 0 : 1;
    row.removal_seconds = r.removal_seconds;
    row.free_extents = r.free_extents;
    row.small_extent_proxy = r.small_extent_proxy();
    rows.push_back(row);
    fs::remove_all(dir);
  }
  return rows;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
}

}  // namespace

void write_backup_report(const BenchReport& r, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ostringstream t;
  t.precision(6);
  t << std::fixed;
  t << "mode " << r.mode << '\n'
    << "rebuild_threshold " << r.rebuild_threshold << '\n'
    << "logical_bytes " << r.logical_bytes << '\n'
    << "non_null_bytes " << r.non_null_bytes << '\n'
    << "oracle_unique_bytes " << r.oracle_unique_bytes << '\n'
    << "global_only_bytes " << r.global_only_bytes << '\n'
    << "stored_bytes " << r.stored_bytes << '\n'
    << "stored_data_bytes " << r.stored_data_bytes << '\n'
    << "segments_stored " << r.segments_stored << '\n'
    << "saving_oracle " << r.saving_oracle() << '\n'
    << "saving_global_only " << r.saving_global_only() << '\n'
    << "saving_stored " << r.saving_stored() << '\n'
    << "segments_uploaded " << r.segments_uploaded << '\n'
    << "segment_bytes_uploaded " << r.segment_bytes_uploaded << '\n'
    << "bytes_sent " << r.bytes_sent << '\n'
    << "punches " << r.punches << '\n'
    << "compactions " << r.compactions << '\n'
    << "fallbacks " << r.fallbacks << '\n'
    << "removals_skipped " << r.removals_skipped << '\n'
    << "removal_seconds " << r.removal_seconds << '\n'
    << "free_extents " << r.free_extents.extents << '\n'
    << "free_extent_bytes " << r.free_extents.bytes << '\n'
    << "small_free_extents " << r.free_extents.small_extents << '\n'
    << "small_free_extent_bytes " << r.free_extents.small_bytes << '\n'
    << "small_extent_proxy " << r.small_extent_proxy() << '\n'
    << "backup_seconds " << r.backup_seconds << '\n'
    << "backup_mib_per_second "
    << ratio_or_zero(static_cast<double>(r.logical_bytes) / kMiB, r.backup_seconds) << '\n'
    << "verify_seconds " << r.verify_seconds << '\n';
  for (const auto& [k, n] : r.free_extents.histogram) {
    t << "free_extent_class " << (4 * kKiB << k) << ' ' << n << '\n';
  }
  write_text(out_dir / "report.txt", t.str());
  write_text(out_dir / "spec.txt", format_workload_spec(r.spec));

  std::ostringstream v;
  v << "vm,version,chain_hops_total,max_chain_length,distinct_segments,null_blocks,"
       "physical_blocks,non_contiguous_reads,indirect_pointers,segments_uploaded,bytes_sent,"
       "backup_seconds,fingerprint_seconds,upload_seconds,ingest_seconds,latest_read_seconds\n";
  for (const auto& row : r.versions) {
    v << row.vm << ',' << row.version_no << ',' << row.stats.chain_hops_total << ','
      << row.stats.max_chain_length << ',' << row.stats.distinct_segments << ','
      << row.stats.null_blocks << ',' << row.stats.physical_blocks << ','
      << row.stats.non_contiguous_reads << ',' << row.indirect_pointers << ','
      << row.segments_uploaded << ',' << row.bytes_sent << ',' << row.backup_seconds << ','
      << row.fingerprint_seconds << ',' << row.upload_seconds << ',' << row.ingest_seconds << ',';
    if (row.latest_read_seconds) v << *row.latest_read_seconds;
    v << '\n';
  }
  write_text(out_dir / "versions.csv", v.str());

  std::ostringstream m;
  m << "vm,version,segment,mechanism,blocks_removed,non_null_blocks,threshold,freed_extents\n";
  for (const auto& e : r.removals) {
    m << e.vm << ',' << e.version_no << ',' << e.report.segment.hex() << ','
      << to_string(e.report.mechanism) << ',' << e.report.blocks_removed << ','
      << e.report.non_null_blocks << ',' << e.report.threshold << ','
      << e.report.freed_extents.size() << '\n';
  }
  write_text(out_dir / "removals.csv", m.str());
}

void write_read_report(const std::vector<ReadRow>& rows, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ostringstream out;
  out << "vm,version,bytes,seconds,mib_per_second,chain_hops_total,max_chain_length,"
         "distinct_segments,non_contiguous_reads\n";
  for (const auto& r : rows) {
    out << r.vm << ',' << r.version_no << ',' << r.bytes << ',' << r.seconds << ','
        << ratio_or_zero(static_cast<double>(r.bytes) / kMiB, r.seconds) << ','
        << r.stats.chain_hops_total << ',' << r.stats.max_chain_length << ','
        << r.stats.distinct_segments << ',' << r.stats.non_contiguous_reads << '\n';
  }
  write_text(out_dir / "reads.csv", out.str());
}

void write_sweep_report(const std::vector<SweepRow>& rows, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ostringstream out;
  out << "threshold,punches,compactions,fallbacks,segments_with_victims,rule_violations,"
         "removal_seconds,free_extents,free_extent_bytes,small_free_extents,small_free_extent_bytes,"
         "small_extent_proxy\n";
  for (const auto& r : rows) {
    out << r.threshold << ',' << r.punches << ',' << r.compactions << ',' << r.fallbacks << ','
        << r.segments_with_victims << ',' << r.rule_violations << ',' << r.removal_seconds << ','
        << r.free_extents.extents << ',' << r.free_extents.bytes << ','
        << r.free_extents.small_extents << ',' << r.free_extents.small_bytes << ','
        << r.small_extent_proxy << '\n';
  }
  write_text(out_dir / "sweep.csv", out.str());
}

}  // namespace revstore
