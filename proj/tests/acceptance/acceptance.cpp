// Acceptance suite: one [PASS]/[FAIL] line per criterion, nonzero exit if any fail.
//
//   revstore_acceptance [--work DIR] [--only C1,C3,...] [--keep]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "revstore/audit.hpp"
#include "revstore/bench.hpp"
#include "revstore/client.hpp"
#include "revstore/readpath.hpp"
#include "revstore/server.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace revstore;

namespace {

constexpr std::uint64_t kGiB = 1024 * kMiB;

// Pinned tolerances and sizes.
constexpr std::size_t kC1Cases = 200;
constexpr std::uint64_t kC1CaseBudget = 2 * kGiB;  // restored + ingested bytes per random case
constexpr double kC2OracleGap = 0.015;              // saving points, absolute
constexpr double kC2GlobalLow = 0.75;
constexpr double kC2GlobalHigh = 0.97;
constexpr double kC2Seconds = 600;
constexpr std::uint32_t kC10Versions = 96;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// Observations that span suites: latest-version checks (C4), audits (C7)
// and removal events (C9).
struct Tally {
  std::uint64_t latest_checks = 0;
  std::vector<std::string> latest_failures;

  std::uint64_t audits = 0;
  std::uint64_t audited_blocks = 0;
  std::vector<std::string> audit_failures;

  std::uint64_t removals = 0;
  std::uint64_t removals_skipped = 0;
  std::set<std::pair<std::string, Fingerprint>> removed_segments;
  std::vector<std::string> repeat_removals;

  void removal(const std::string& store, const RemovalReport& r) {
    ++removals;
    if (!removed_segments.emplace(store, r.segment).second) {
      repeat_removals.push_back(store + " " + r.segment.hex());
    }
  }

  void latest(const std::string& where, std::uint64_t indirect, std::uint64_t hops) {
    ++latest_checks;
    if (indirect != 0 || hops != 0) {
      latest_failures.push_back(where + fmt(": %llu indirect pointers, %llu hops",
                                            (unsigned long long)indirect, (unsigned long long)hops));
    }
  }

  void audited(const std::string& where, const AuditReport& r) {
    ++audits;
    audited_blocks += r.non_null_blocks;
    if (!r.ok()) audit_failures.push_back(where + ": " + r.problems.front());
  }
};

Tally tally;

RepositoryOptions quiet_options(double threshold) {
  RepositoryOptions o;
  o.rebuild_threshold = threshold;
  o.sync = false;
  return o;
}

// Compares restored bytes with the generator, chunk by chunk.
class Compare {
 public:
  Compare(const Workload& w, std::uint32_t vm, std::uint32_t version) : w_(w), vm_(vm), version_(version) {}

  void operator()(std::span<const std::uint8_t> data) {
    if (!mismatch_.empty()) return;
    if (offset_ + data.size() > w_.spec().image_size) {
      mismatch_ = "restored past the image length";
      return;
    }
    expected_.resize(data.size());
    w_.read(vm_, version_, offset_, expected_);
    if (std::memcmp(expected_.data(), data.data(), data.size()) != 0) {
      std::size_t i = 0;
      while (expected_[i] == data[i]) ++i;
      mismatch_ = fmt("differs at byte %llu", (unsigned long long)(offset_ + i));
    }
    offset_ += data.size();
  }

  std::string verdict() const {
    if (!mismatch_.empty()) return mismatch_;
    if (offset_ != w_.spec().image_size) return fmt("restored %llu bytes", (unsigned long long)offset_);
    return {};
  }

 private:
  const Workload& w_;
  std::uint32_t vm_;
  std::uint32_t version_;
  std::uint64_t offset_ = 0;
  std::vector<std::uint8_t> expected_;
  std::string mismatch_;
};

// ---------------------------------------------------------------------------
// C1 / C7: randomized round trips with a restore of everything and an audit
// after every ingest.

struct Case {
  WorkloadSpec spec;
  ChunkParams params;
  double threshold = 0;
};

std::uint64_t case_cost(const WorkloadSpec& s) {
  const std::uint64_t ingests = std::uint64_t{s.vm_count} * s.versions;
  return s.image_size * (ingests * (ingests + 1) / 2 + ingests);
}

Case draw_case(std::size_t i, std::mt19937_64& rng) {
  static constexpr double kThresholds[] = {0.0, 0.2, 0.5, 1.0};
  static constexpr std::uint32_t kSegmentMiB[] = {1, 2, 4};
  static constexpr std::uint64_t kUnits[] = {64 * kKiB, 128 * kKiB, 256 * kKiB};
  static constexpr std::uint64_t kRuns[] = {64 * kKiB, 256 * kKiB, 1 * kMiB};
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  Case c;
  c.threshold = kThresholds[i % 4];
  c.params = ChunkParams{kSegmentMiB[pick(3)] * kMiB, 4096};
  WorkloadSpec& s = c.spec;
  s.seed = rng();
  s.vm_count = 1 + static_cast<std::uint32_t>(pick(4));
  s.versions = 1 + static_cast<std::uint32_t>(pick(12));
  s.null_fraction = uni(0.0, 0.6);
  s.null_run = kRuns[pick(3)];
  s.change_unit = kUnits[pick(3)];
  s.change_stride = s.change_unit << (3 + pick(3));
  s.hot_alignment = std::max<std::uint64_t>(s.change_unit, (1 * kMiB) << (2 * pick(3)));
  s.hot_fraction = uni(0.05, 0.5);
  s.change_fraction = uni(0.0, 0.06);
  s.change_jitter = uni(0.0, 0.5);
  if (pick(3) == 0) {
    s.revert_fraction = uni(0.0, 0.3);
    s.duplicate_fraction = uni(0.0, 0.3);
  }
  if (pick(6) == 0) {
    s.spike_version = 1 + static_cast<std::uint32_t>(pick(s.versions));
    s.spike_factor = uni(1.0, 4.0);
  }

  // Fixed corners first, then sizes drawn log-uniformly under the budget.
  switch (i) {
    case 0: s.vm_count = 1; s.versions = 2; s.image_size = 512 * kMiB; return c;
    case 1: s.vm_count = 1; s.versions = 12; s.image_size = 16 * kMiB; return c;
    case 2: s.vm_count = 4; s.versions = 12; s.image_size = 16 * kMiB; return c;
    case 3: s.vm_count = 4; s.versions = 1; s.image_size = 512 * kMiB; return c;
    case 4: s.vm_count = 2; s.versions = 3; s.image_size = 16 * kMiB; s.unique_data = true; return c;
    default: break;
  }
  while (true) {
    s.image_size = 16 * kMiB;
    if (case_cost(s) <= kC1CaseBudget) break;
    if (s.versions > 1) --s.versions;
    else --s.vm_count;
  }
  const double hi = std::log2(std::min<double>(512.0, static_cast<double>(kC1CaseBudget) /
                                                           static_cast<double>(case_cost(s)) * 16.0));
  s.image_size = static_cast<std::uint64_t>(std::exp2(uni(4.0, std::max(4.0, hi))) * kMiB) / 4096 * 4096;
  s.image_size = std::clamp<std::uint64_t>(s.image_size, 16 * kMiB, 512 * kMiB);
  // Every third image ends in a partial block.
  if (i % 3 == 0 && s.image_size > 16 * kMiB) s.image_size -= 1 + rng() % 4095;
  return c;
}

struct C1State {
  std::uint64_t cases = 0;
  std::uint64_t ingests = 0;
  std::uint64_t restores = 0;
  std::uint64_t restored_bytes = 0;
  std::uint64_t removals = 0;
  std::uint64_t punches = 0;
  std::uint64_t partial_images = 0;
  std::set<std::uint32_t> vm_counts, version_counts;
  std::uint64_t min_size = ~0ull, max_size = 0;
  std::vector<std::string> failures;
  double seconds = 0;
};

C1State c1_state;

void run_case(std::size_t index, const Case& c, const fs::path& dir) {
  C1State& st = c1_state;
  const std::string label = fmt("c1/%03zu", index);
  fs::remove_all(dir);
  Repository repo(dir, StoreConfig{c.params, true}, quiet_options(c.threshold));
  Service service(repo);
  const TransportFactory connect = [&] { return make_local_transport(service); };
  const Workload w(c.spec);
  DescriptorCache cache;
  std::mt19937_64 order_rng(c.spec.seed);
  std::map<std::uint32_t, std::uint32_t> latest;

  for (std::uint32_t v = 1; v <= c.spec.versions; ++v) {
    std::vector<std::uint32_t> order(c.spec.vm_count);
    for (std::uint32_t vm = 0; vm < c.spec.vm_count; ++vm) order[vm] = vm;
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::uint32_t vm : order) {
      BackupOptions bo;
      bo.vm_id = vm_name(vm);
      bo.connections = 2;
      bo.cache = &cache;
      bo.expect_params = c.params;
      const auto summary = backup(*w.image(vm, v), connect, bo);
      ++st.ingests;
      const std::string where = label + " after " + bo.vm_id + " v" + std::to_string(v);
      if (summary.version_no != v) {
        st.failures.push_back(where + ": committed as version " + std::to_string(summary.version_no));
        return;
      }
      latest[vm] = v;
      for (const auto& rm : summary.ingest.removals) {
        tally.removal(label, rm);
        ++st.removals;
        if (rm.mechanism == RemovalMechanism::punch) ++st.punches;
      }
      tally.removals_skipped += summary.ingest.removals_skipped;

      tally.audited(where, audit(repo));

      for (const auto& [rvm, rlatest] : latest) {
        for (std::uint32_t rv = 1; rv <= rlatest; ++rv) {
          Compare cmp(w, rvm, rv);
          const auto stats = restore_stream(repo, vm_name(rvm), rv,
                                            [&](std::span<const std::uint8_t> d) { cmp(d); });
          ++st.restores;
          st.restored_bytes += stats.bytes;
          if (auto bad = cmp.verdict(); !bad.empty()) {
            st.failures.push_back(where + ": " + vm_name(rvm) + " v" + std::to_string(rv) + " " + bad);
          }
          if (rv == rlatest) {
            std::uint64_t indirect = 0;
            {
              auto lock = repo.read_lock(vm_name(rvm));
              indirect = repo.catalog().load(vm_name(rvm), rv).indirect_count();
            }
            tally.latest(where + " " + vm_name(rvm), indirect, stats.chain_hops);
          }
        }
      }
    }
  }
}

Outcome c1(const fs::path& work) {
  C1State& st = c1_state;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20131001);
  for (std::size_t i = 0; i < kC1Cases; ++i) {
    const Case c = draw_case(i, rng);
    ++st.cases;
    st.vm_counts.insert(c.spec.vm_count);
    st.version_counts.insert(c.spec.versions);
    st.min_size = std::min(st.min_size, c.spec.image_size);
    st.max_size = std::max(st.max_size, c.spec.image_size);
    if (c.spec.image_size % 4096 != 0) ++st.partial_images;
    try {
      run_case(i, c, work / "c1-store");
    } catch (const std::exception& e) {
      st.failures.push_back(fmt("c1/%03zu: ", i) + e.what());
    }
  }
  fs::remove_all(work / "c1-store");
  st.seconds = since(t0);

  const bool coverage = st.cases >= 200 && st.vm_counts.size() == 4 && st.version_counts.size() == 12 &&
                        st.min_size == 16 * kMiB && st.max_size == 512 * kMiB;
  std::string detail = fmt(
      "%llu cases (vms 1-%u, versions 1-%u, %llu-%llu MiB, %llu partial-block images), %llu ingests, "
      "%llu restores (%.1f GiB), %llu removals (%llu punches), %.0f s",
      (unsigned long long)st.cases, *st.vm_counts.rbegin(), *st.version_counts.rbegin(),
      (unsigned long long)(st.min_size / kMiB), (unsigned long long)(st.max_size / kMiB),
      (unsigned long long)st.partial_images, (unsigned long long)st.ingests,
      (unsigned long long)st.restores, static_cast<double>(st.restored_bytes) / kGiB,
      (unsigned long long)st.removals, (unsigned long long)st.punches, st.seconds);
  if (!coverage) detail += "; case coverage incomplete";
  if (!st.failures.empty()) {
    detail += fmt("; %zu mismatches, first: ", st.failures.size()) + st.failures.front();
  }
  return {coverage && st.failures.empty(), detail};
}

Outcome c7() {
  if (tally.audits == 0) return {false, "no audits ran (C1 skipped)"};
  std::string detail = fmt("%llu full-store audits, %llu non-null block refcounts checked",
                           (unsigned long long)tally.audits, (unsigned long long)tally.audited_blocks);
  if (!tally.audit_failures.empty()) {
    detail += fmt("; %zu failed, first: ", tally.audit_failures.size()) + tally.audit_failures.front();
  }
  return {tally.audit_failures.empty(), detail};
}

// ---------------------------------------------------------------------------
// C2 / C5: the default bench spec.

struct DefaultRuns {
  std::optional<BenchReport> revdedup;
  std::optional<BenchReport> conventional;
  std::string error;
};

DefaultRuns defaults;

void record_bench(const std::string& label, const BenchReport& r) {
  for (const auto& ev : r.removals) tally.removal(label, ev.report);
  tally.removals_skipped += r.removals_skipped;
  std::map<std::string, std::uint64_t> newest;
  for (const auto& row : r.versions) newest[row.vm] = std::max(newest[row.vm], row.version_no);
  for (const auto& row : r.versions) {
    if (row.version_no == newest[row.vm]) {
      tally.latest(label + " " + row.vm + " v" + std::to_string(row.version_no), row.indirect_pointers,
                   row.stats.chain_hops_total);
    }
  }
}

BenchOptions bench_options() {
  BenchOptions o;
  o.clients = 8;
  o.connections = 4;
  o.http = true;
  o.verify = true;
  return o;
}

Outcome c2(const fs::path& work) {
  const auto t0 = Clock::now();
  const WorkloadSpec spec;  // default bench spec
  const OracleResult oracle = brute_force_oracle(Workload(spec));

  fs::remove_all(work / "c2-revdedup");
  defaults.revdedup = run_backup_bench(spec, BenchMode::parse("revdedup"), bench_options(),
                                       work / "c2-revdedup", &oracle);
  record_bench("c2/revdedup", *defaults.revdedup);
  fs::remove_all(work / "c2-revdedup");
  const BenchReport& rev = *defaults.revdedup;

  std::map<std::uint32_t, double> global_only{{4, rev.saving_global_only()}};
  for (std::uint32_t mib : {8u, 16u, 32u}) {
    BenchOptions o = bench_options();
    o.verify = false;  // measurement only; reverse dedup is off
    const fs::path dir = work / fmt("c2-global-%uM", mib);
    fs::remove_all(dir);
    const auto r = run_backup_bench(spec, BenchMode::parse(fmt("global-%uM", mib)), o, dir, &oracle);
    record_bench(fmt("c2/global-%uM", mib), r);
    global_only[mib] = r.saving_global_only();
    fs::remove_all(dir);
  }
  const double seconds = since(t0);

  const double gap = rev.saving_oracle() - rev.saving_stored();
  bool pass = gap <= kC2OracleGap && seconds <= kC2Seconds;
  std::string detail = fmt("oracle saving %.4f, stored (data+metadata) %.4f, gap %.4f (limit %.3f); global-only",
                           rev.saving_oracle(), rev.saving_stored(), gap, kC2OracleGap);
  for (const auto& [mib, saving] : global_only) {
    detail += fmt(" %uM %.4f", mib, saving);
    pass = pass && saving >= kC2GlobalLow && saving <= kC2GlobalHigh;
  }
  detail += fmt(" (band [%.2f, %.2f]); %.0f s (limit %.0f)", kC2GlobalLow, kC2GlobalHigh, seconds, kC2Seconds);
  return {pass, detail};
}

// Per-VM series of the non-contiguous read proxy, oldest version first.
std::map<std::string, std::vector<std::uint64_t>> proxy_series(const BenchReport& r) {
  std::map<std::string, std::vector<std::uint64_t>> out;
  std::vector<VersionRow> rows = r.versions;
  std::sort(rows.begin(), rows.end(), [](const VersionRow& a, const VersionRow& b) {
    return std::tie(a.vm, a.version_no) < std::tie(b.vm, b.version_no);
  });
  for (const auto& row : rows) out[row.vm].push_back(row.stats.non_contiguous_reads);
  return out;
}

std::string series_text(const std::vector<std::uint64_t>& s) {
  std::string out;
  for (auto x : s) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

Outcome c5(const fs::path& work) {
  const WorkloadSpec spec;
  if (!defaults.revdedup) {
    fs::remove_all(work / "c5-revdedup");
    defaults.revdedup = run_backup_bench(spec, BenchMode::parse("revdedup"), bench_options(),
                                         work / "c5-revdedup");
    record_bench("c5/revdedup", *defaults.revdedup);
    fs::remove_all(work / "c5-revdedup");
  }
  fs::remove_all(work / "c5-conventional");
  defaults.conventional = run_backup_bench(spec, BenchMode::parse("conventional"), bench_options(),
                                           work / "c5-conventional");
  record_bench("c5/conventional", *defaults.conventional);
  fs::remove_all(work / "c5-conventional");

  bool pass = true;
  std::string bad;
  for (const auto& [vm, s] : proxy_series(*defaults.revdedup)) {
    if (!std::is_sorted(s.begin(), s.end(), std::greater<>())) {
      pass = false;
      bad += " revdedup " + vm + " [" + series_text(s) + "]";
    }
  }
  for (const auto& [vm, s] : proxy_series(*defaults.conventional)) {
    if (!std::is_sorted(s.begin(), s.end())) {
      pass = false;
      bad += " conventional " + vm + " [" + series_text(s) + "]";
    }
  }
  const auto rev = proxy_series(*defaults.revdedup).begin()->second;
  const auto conv = proxy_series(*defaults.conventional).begin()->second;
  std::string detail = "vm0 revdedup [" + series_text(rev) + "] conventional [" + series_text(conv) + "]";
  if (!pass) detail += "; direction broken:" + bad;
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// C3: worked examples through the public API.

using testing::Letters;
using testing::backup_bytes;
using testing::restore_bytes;

Outcome c3(const fs::path& work) {
  using P = BlockPointer;
  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  // Three versions of an eight-block image, one segment each, so every
  // segment is unique and the chains form purely at block level.
  {
    const fs::path dir = work / "c3-chain";
    fs::remove_all(dir);
    Letters l;
    Repository repo(dir, StoreConfig{ChunkParams{8 * 4096, 4096}, true}, quiet_options(0.2));
    const std::vector<std::vector<std::uint8_t>> images = {
        l.image({"A", "B", "C", "D", "E", "F", "G", "H"}),
        l.image({"A", "B", "C", "D'", "E", "F'", "G", "H"}),
        l.image({"A", "B", "C", "D'", "E'", "F''", "G", "H'"})};
    for (const auto& img : images) backup_bytes(repo, "vm", img);
    expect(repo.catalog().load_pointers("vm", 1) ==
               std::vector<P>{P::indirect(2, 0), P::indirect(2, 1), P::indirect(2, 2), P::direct(0, 3),
                              P::indirect(2, 4), P::direct(0, 5), P::indirect(2, 6), P::indirect(2, 7)},
           "VM1 pointers");
    expect(repo.catalog().load_pointers("vm", 2) ==
               std::vector<P>{P::indirect(3, 0), P::indirect(3, 1), P::indirect(3, 2), P::indirect(3, 3),
                              P::direct(0, 4), P::direct(0, 5), P::indirect(3, 6), P::direct(0, 7)},
           "VM2 pointers");
    expect(repo.catalog().load("vm", 3).indirect_count() == 0, "VM3 has indirect pointers");
    const std::vector<std::uint32_t> hops_v1 = {2, 2, 2, 0, 1, 0, 2, 1};
    for (std::uint64_t o = 0; o < 8; ++o) {
      expect(resolve_block(repo, "vm", 1, o).hops == hops_v1[o], "VM1 block " + std::to_string(o) + " hops");
    }
    for (std::size_t v = 0; v < images.size(); ++v) {
      expect(restore_bytes(repo, "vm", v + 1) == images[v], "VM" + std::to_string(v + 1) + " restore");
    }
    fs::remove_all(dir);
  }

  const std::size_t chain_problems = problems.size();

  // Two VMs sharing segment ABCD, four-block segments, ingested A1 B1 A2 B2.
  std::vector<std::uint32_t> observed;
  std::string removed_in_abcd;
  {
    const fs::path dir = work / "c3-refcount";
    fs::remove_all(dir);
    Letters l;
    Repository repo(dir, StoreConfig{ChunkParams{4 * 4096, 4096}, true}, quiet_options(0.2));
    const auto base = l.image({"A", "B", "C", "D", "E", "F", "G", "H"});
    backup_bytes(repo, "vma", base);
    backup_bytes(repo, "vmb", base);
    backup_bytes(repo, "vma", l.image({"A", "B", "C", "D'", "E", "F'", "G", "H"}));
    const auto rb2 = backup_bytes(repo, "vmb", l.image({"A", "B", "C", "D'", "E'", "F''", "G", "H'"}));
    const Fingerprint abcd = fingerprint(l.image({"A", "B", "C", "D"}));
    const auto meta = repo.store().meta(abcd);
    for (const auto& b : meta.blocks) observed.push_back(b.refcount);
    for (const auto& rm : rb2.removals) {
      if (rm.segment != abcd) continue;
      for (std::size_t i = 0; i < meta.blocks.size(); ++i) {
        if (meta.blocks[i].removed) removed_in_abcd += "ABCD"[i];
      }
    }
    expect(audit(repo).ok(), "audit after the four ingests");
    fs::remove_all(dir);
  }
  const std::vector<std::uint32_t> table = {2, 2, 2, 0};
  const std::string observed_text =
      fmt("A=%u B=%u C=%u D=%u", observed.at(0), observed.at(1), observed.at(2), observed.at(3));
  expect(observed == table, "ABCD refcounts " + observed_text + ", table wants A=2 B=2 C=2 D=0");

  std::string detail;
  if (chain_problems == 0) {
    detail = "three-version chain state matches";
  } else {
    detail = "chain state mismatch:";
    for (std::size_t i = 0; i < chain_problems; ++i) detail += " [" + problems[i] + "]";
  }
  detail += "; ABCD refcounts " + observed_text + " (table: A=2 B=2 C=2 D=0), removed by VMB2 ingest: " +
            (removed_in_abcd.empty() ? std::string("none") : removed_in_abcd);
  for (std::size_t i = chain_problems; i < problems.size(); ++i) {
    if (problems[i].rfind("ABCD refcounts", 0) != 0) detail += " [" + problems[i] + "]";
  }
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// C6: threshold sweep.

Outcome c6(const fs::path& work) {
  WorkloadSpec spec;
  spec.vm_count = 2;
  spec.versions = 6;
  spec.image_size = 128 * kMiB;
  spec.hot_fraction = 0.25;
  spec.hot_alignment = 4 * kMiB;
  spec.change_fraction = 0.04;
  spec.seed = 6;
  const BenchMode mode = BenchMode::parse("revdedup");

  struct Row {
    double threshold;
    std::uint64_t punches = 0, compacts = 0, violations = 0;
    double proxy = 0;
  };
  std::vector<Row> rows;
  for (int i = 0; i <= 10; ++i) {
    BenchOptions o = bench_options();
    o.clients = 2;
    o.rebuild_threshold = i / 10.0;
    const fs::path dir = work / fmt("c6-%02d", i);
    fs::remove_all(dir);
    const auto r = run_backup_bench(spec, mode, o, dir);
    record_bench(fmt("c6/%02d", i), r);
    fs::remove_all(dir);
    Row row{o.rebuild_threshold};
    for (const auto& ev : r.removals) {
      if (!ev.follows_rule()) ++row.violations;
      if (ev.report.mechanism == RemovalMechanism::compact) ++row.compacts;
      else ++row.punches;
    }
    row.proxy = r.small_extent_proxy();
    rows.push_back(row);
  }

  std::uint64_t violations = 0;
  double punch_min = 1e300, compact_max = -1;
  std::size_t punch_heavy = 0, compact_heavy = 0;
  std::string table;
  for (const auto& r : rows) {
    violations += r.violations;
    if (r.punches > r.compacts) {
      ++punch_heavy;
      punch_min = std::min(punch_min, r.proxy);
    } else if (r.compacts > r.punches) {
      ++compact_heavy;
      compact_max = std::max(compact_max, r.proxy);
    }
    table += fmt(" %.1f:%llup/%lluc/%.5f", r.threshold, (unsigned long long)r.punches,
                 (unsigned long long)r.compacts, r.proxy);
  }
  const bool zero_compacts = rows.front().punches == 0 && rows.front().compacts > 0;
  const bool direction = punch_heavy > 0 && compact_heavy > 0 && punch_min > compact_max;
  std::string detail = fmt("%llu rule violations; %zu punch-heavy runs (min proxy %.5f) vs %zu compact-heavy (max %.5f);"
                           " threshold:punch/compact/proxy",
                           (unsigned long long)violations, punch_heavy, punch_heavy ? punch_min : 0.0,
                           compact_heavy, compact_heavy ? compact_max : 0.0) +
                       table;
  if (!zero_compacts) detail += "; threshold 0 did not compact every removal";
  return {violations == 0 && zero_compacts && direction, detail};
}

// ---------------------------------------------------------------------------
// C8: concurrent clients over HTTP.

Outcome c8(const fs::path& work) {
  WorkloadSpec spec;
  spec.vm_count = 8;
  spec.versions = 4;
  spec.image_size = 128 * kMiB;
  spec.change_fraction = 0.02;
  spec.seed = 8;
  BenchOptions o = bench_options();
  o.clients = 8;
  const fs::path dir = work / "c8";
  fs::remove_all(dir);
  // The bench restores and compares every version, then audits; either failure throws.
  const auto r = run_backup_bench(spec, BenchMode::parse("revdedup"), o, dir);
  record_bench("c8", r);

  Repository repo(dir, std::nullopt, quiet_options(0.2));
  AuditOptions ao;
  ao.verify_data = true;
  const AuditReport a = audit(repo);
  const AuditReport deep = audit(repo, ao);
  tally.audited("c8", a);
  fs::remove_all(dir);
  const bool pass = a.ok() && deep.ok() && a.vms == 8 && a.versions == 32;
  std::string detail = fmt("8 clients, %llu VMs x %u versions: every version restored identically; audit ok=%d "
                           "(data re-hashed ok=%d), %llu refcounts, %llu removals",
                           (unsigned long long)a.vms, spec.versions, a.ok(), deep.ok(),
                           (unsigned long long)a.checked_refcounts, (unsigned long long)r.removals.size());
  if (!deep.ok()) detail += "; " + deep.problems.front();
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// C10: a long single-VM chain against a chain walk over generator tags.

// Hops from (version, ordinal) to a direct pointer, derived from tags alone:
// a block of version j moves to j+1 when its segment is not repeated in j+1
// and its tag occurs in one of j+1's segments that is not repeated from j;
// it lands on the lowest such ordinal.
std::vector<std::vector<std::uint32_t>> oracle_hops(const Workload& w, std::uint64_t seg_blocks) {
  const std::uint32_t n = w.spec().versions;
  const std::uint64_t blocks = w.spec().block_count();
  using Seg = std::vector<std::uint64_t>;
  std::vector<std::vector<Seg>> segs(n + 1);
  for (std::uint32_t v = 1; v <= n; ++v) {
    for (std::uint64_t s = 0; s * seg_blocks < blocks; ++s) {
      Seg seg(seg_blocks, 0);
      for (std::uint64_t i = 0; i < seg_blocks && s * seg_blocks + i < blocks; ++i) {
        seg[i] = w.tag(0, v, s * seg_blocks + i);
      }
      segs[v].push_back(std::move(seg));
    }
  }
  std::vector<std::vector<std::uint32_t>> hops(n + 1, std::vector<std::uint32_t>(blocks, 0));
  for (std::uint32_t j = n - 1; j >= 1; --j) {
    const std::set<Seg> prev_set(segs[j].begin(), segs[j].end());
    const std::set<Seg> next_set(segs[j + 1].begin(), segs[j + 1].end());
    std::map<std::uint64_t, std::uint64_t> first;  // tag -> lowest ordinal in j+1
    for (std::uint64_t s = 0; s < segs[j + 1].size(); ++s) {
      if (prev_set.contains(segs[j + 1][s])) continue;
      for (std::uint64_t i = 0; i < seg_blocks; ++i) {
        const std::uint64_t tag = segs[j + 1][s][i];
        if (tag != 0) first.emplace(tag, s * seg_blocks + i);
      }
    }
    for (std::uint64_t s = 0; s < segs[j].size(); ++s) {
      if (next_set.contains(segs[j][s])) continue;
      for (std::uint64_t i = 0; i < seg_blocks; ++i) {
        const std::uint64_t o = s * seg_blocks + i;
        if (o >= blocks || segs[j][s][i] == 0) continue;
        if (auto it = first.find(segs[j][s][i]); it != first.end()) hops[j][o] = 1 + hops[j + 1][it->second];
      }
    }
  }
  return hops;
}

Outcome c10(const fs::path& work) {
  WorkloadSpec spec;
  spec.vm_count = 1;
  spec.versions = kC10Versions;
  spec.image_size = 64 * kMiB;
  spec.hot_fraction = 4.0 / 64.0;
  spec.hot_alignment = 4 * kMiB;
  spec.change_unit = 128 * kKiB;
  spec.change_stride = 4 * kMiB;
  spec.change_fraction = static_cast<double>(128 * kKiB) / static_cast<double>(64 * kMiB);
  spec.change_jitter = 0;
  spec.seed = 10;
  const Workload w(spec);
  const ChunkParams params{4 * kMiB, 4096};

  const fs::path dir = work / "c10";
  fs::remove_all(dir);
  Repository repo(dir, StoreConfig{params, true}, quiet_options(0.2));
  Service service(repo);
  const TransportFactory connect = [&] { return make_local_transport(service); };
  DescriptorCache cache;
  std::vector<std::string> problems;
  for (std::uint32_t v = 1; v <= spec.versions; ++v) {
    BackupOptions bo;
    bo.vm_id = vm_name(0);
    bo.cache = &cache;
    const auto s = backup(*w.image(0, v), connect, bo);
    for (const auto& rm : s.ingest.removals) tally.removal("c10", rm);
    tally.removals_skipped += s.ingest.removals_skipped;
    Compare cmp(w, 0, v);
    const auto rs = restore_stream(repo, bo.vm_id, v, [&](std::span<const std::uint8_t> d) { cmp(d); });
    if (auto bad = cmp.verdict(); !bad.empty()) problems.push_back(fmt("v%u latest restore ", v) + bad);
    std::uint64_t indirect = 0;
    {
      auto lock = repo.read_lock(bo.vm_id);
      indirect = repo.catalog().load(bo.vm_id, v).indirect_count();
    }
    tally.latest(fmt("c10 v%u", v), indirect, rs.chain_hops);
  }

  const auto expected = oracle_hops(w, params.segment_size / params.block_size);
  std::uint64_t version_mismatch = 0, block_mismatch = 0;
  std::uint32_t v1_max = 0;
  {
    auto lock = repo.read_lock(vm_name(0));
    VersionChain chain(repo.catalog(), vm_name(0));
    for (std::uint32_t v = 1; v <= spec.versions; ++v) {
      std::uint32_t want = 0;
      for (std::uint64_t o = 0; o < spec.block_count(); ++o) {
        want = std::max(want, expected[v][o]);
        if (chain.resolve(v, o).hops != expected[v][o]) ++block_mismatch;
      }
      if (v == 1) v1_max = want;
      lock.unlock();
      const auto rs = read_stats(repo, vm_name(0), v);
      lock.lock();
      if (rs.max_chain_length != want) {
        ++version_mismatch;
        problems.push_back(fmt("v%u max chain %llu, oracle %u", v, (unsigned long long)rs.max_chain_length, want));
      }
    }
  }
  Compare cmp(w, 0, 1);
  const auto rs1 = restore_stream(repo, vm_name(0), 1, [&](std::span<const std::uint8_t> d) { cmp(d); });
  if (auto bad = cmp.verdict(); !bad.empty()) problems.push_back("v1 restore " + bad);
  fs::remove_all(dir);

  std::string detail = fmt("%u versions: max chain length matches the oracle for %llu/%u versions, "
                           "per-block hops differ for %llu blocks; version 1 resolves with up to %u hops "
                           "(%llu hops total) and restores identically",
                           spec.versions, (unsigned long long)(spec.versions - version_mismatch), spec.versions,
                           (unsigned long long)block_mismatch, v1_max, (unsigned long long)rs1.chain_hops);
  if (!problems.empty()) detail += "; first problem: " + problems.front();
  return {problems.empty() && block_mismatch == 0 && v1_max == kC10Versions - 1, detail};
}

// ---------------------------------------------------------------------------

Outcome c4() {
  if (tally.latest_checks == 0) return {false, "no latest-version checks ran"};
  std::string detail = fmt("%llu latest-version checks across suites", (unsigned long long)tally.latest_checks);
  if (!tally.latest_failures.empty()) {
    detail += fmt("; %zu failed, first: ", tally.latest_failures.size()) + tally.latest_failures.front();
  }
  return {tally.latest_failures.empty(), detail};
}

Outcome c9() {
  if (tally.removals == 0) return {false, "no removals observed"};
  std::string detail = fmt("%llu removals on %zu distinct segments; %llu re-ingest hits on already-removed segments "
                           "skipped",
                           (unsigned long long)tally.removals, tally.removed_segments.size(),
                           (unsigned long long)tally.removals_skipped);
  if (!tally.repeat_removals.empty()) {
    detail += fmt("; %zu repeated, first: ", tally.repeat_removals.size()) + tally.repeat_removals.front();
  }
  return {tally.repeat_removals.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"revstore acceptance suite"};
  fs::path work = "acceptance-work";
  std::string only;
  bool keep = false;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "comma-separated criteria to run, e.g. C1,C7");
  app.add_flag("--keep", keep, "keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> selected;
  {
    std::stringstream ss(only);
    for (std::string item; std::getline(ss, item, ',');) {
      if (!item.empty()) selected.insert(item);
    }
  }
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.contains(id); };
  fs::create_directories(work);

  struct Criterion {
    std::string id;
    std::string title;
    std::function<Outcome()> run;
  };
  // Order matters: C4, C7 and C9 summarize observations from the suites before them.
  const std::vector<Criterion> criteria = {
      {"C1", "round-trip fidelity", [&] { return c1(work); }},
      {"C3", "worked-example goldens", [&] { return c3(work); }},
      {"C2", "dedup ratio vs oracle", [&] { return c2(work); }},
      {"C5", "fragmentation direction", [&] { return c5(work); }},
      {"C6", "threshold mechanism selection", [&] { return c6(work); }},
      {"C8", "concurrent-ingest safety", [&] { return c8(work); }},
      {"C10", "tracing-overhead shape", [&] { return c10(work); }},
      {"C7", "refcount audit", [] { return c7(); }},
      {"C4", "latest-version sequentiality", [] { return c4(); }},
      {"C9", "at-most-once removal", [] { return c9(); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    Outcome out;
    const auto t0 = Clock::now();
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    if (!out.pass) ++failed;
    std::printf("[%s] %s %s: %s (%.0f s)\n", out.pass ? "PASS" : "FAIL", c.id.c_str(), c.title.c_str(),
                out.detail.c_str(), since(t0));
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(work);
  std::printf("acceptance: %d failed\n", failed);
  return failed == 0 ? 0 : 1;
}
