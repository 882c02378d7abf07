// revstore: server, client and bench front end.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include "revstore/audit.hpp"
#include "revstore/bench.hpp"
#include "revstore/bench_spec.hpp"
#include "revstore/client.hpp"
#include "revstore/error.hpp"
#include "revstore/server.hpp"

using namespace revstore;
namespace fs = std::filesystem;

namespace {

// Client exit codes.
constexpr int kExitValidation = 2;
constexpr int kExitNetwork = 3;
constexpr int kExitRejected = 4;

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::invalid_argument:
    case Errc::io:
    case Errc::not_found:
      return kExitValidation;
    case Errc::network:
      return kExitNetwork;
    case Errc::rejected:
    case Errc::missing_segments:
    case Errc::out_of_order:
    case Errc::integrity:
      return kExitRejected;
    default:
      return 1;
  }
}

std::uint64_t size_option(const std::string& text) { return parse_size(text); }

int serve(const ServerConfig& cfg) {
  RepositoryOptions ro;
  ro.rebuild_threshold = cfg.rebuild_threshold;
  ro.sync = cfg.sync;
  Repository repo(cfg.store_root, StoreConfig{cfg.params, cfg.reverse_dedup}, ro);
  Service service(repo, cfg.pipeline_depth);
  HttpServer http(service, cfg.threads);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  const int port = http.bind(cfg.host, cfg.port);
  http.start();
  std::printf("listening %s:%d\n", cfg.host.c_str(), port);
  std::fflush(stdout);
  int sig = 0;
  sigwait(&set, &sig);
  http.stop();
  if (!cfg.sync) repo.store().sync_all();
  std::printf("stopped\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deduplicating backup store for versioned VM images"};
  app.require_subcommand(1);

  // serve
  ServerConfig scfg;
  std::string seg_size = "4MiB", blk_size = "4KiB";
  bool no_reverse = false, no_sync = false;
  auto* serve_cmd = app.add_subcommand("serve", "Run the backup server");
  serve_cmd->add_option("--store", scfg.store_root, "Store directory")->required()->envname("REVSTORE_STORE");
  serve_cmd->add_option("--host", scfg.host, "Listen address")->capture_default_str();
  serve_cmd->add_option("--port", scfg.port, "Listen port (0 picks one)")->capture_default_str()->envname("REVSTORE_PORT");
  serve_cmd->add_option("--segment-size", seg_size, "Segment size for a new store")->capture_default_str();
  serve_cmd->add_option("--block-size", blk_size, "Block size for a new store")->capture_default_str();
  serve_cmd->add_flag("--no-reverse-dedup", no_reverse, "Create the store with reverse dedup off");
  serve_cmd->add_option("--rebuild-threshold", scfg.rebuild_threshold, "Punch below, compact at or above")
      ->check(CLI::Range(0.0, 1.0))->capture_default_str();
  serve_cmd->add_option("--pipeline-depth", scfg.pipeline_depth, "Restore queue depth in blocks")->capture_default_str();
  serve_cmd->add_option("--threads", scfg.threads, "Request threads")->capture_default_str();
  serve_cmd->add_flag("--no-sync", no_sync, "Skip per-write fsync (flushes on shutdown)");

  // backup
  std::string vm, image, server_url = "http://127.0.0.1:8080";
  std::optional<std::string> b_seg, b_blk;
  std::size_t connections = 4;
  bool fingerprint_only = false;
  auto* backup_cmd = app.add_subcommand("backup", "Back up an image as the VM's next version");
  backup_cmd->add_option("--vm", vm, "VM id")->required();
  backup_cmd->add_option("--image", image, "Image file")->required();
  backup_cmd->add_option("--server", server_url, "Server URL")->envname("REVSTORE_SERVER")->capture_default_str();
  backup_cmd->add_option("--segment-size", b_seg, "Expected server segment size");
  backup_cmd->add_option("--block-size", b_blk, "Expected server block size");
  backup_cmd->add_option("--connections", connections, "Parallel uploads")->capture_default_str();
  backup_cmd->add_flag("--fingerprint-only", fingerprint_only, "Print the fingerprint plan and exit");

  // restore
  std::string version = "latest", out;
  bool force = false;
  auto* restore_cmd = app.add_subcommand("restore", "Restore a stored version to a file");
  restore_cmd->add_option("--vm", vm, "VM id")->required();
  restore_cmd->add_option("--version", version, "Version number or 'latest'")->capture_default_str();
  restore_cmd->add_option("--out", out, "Output file")->required();
  restore_cmd->add_option("--server", server_url, "Server URL")->envname("REVSTORE_SERVER")->capture_default_str();
  restore_cmd->add_flag("--force", force, "Overwrite an existing output file");

  // fsck
  fs::path fsck_store;
  bool verify_data = false;
  auto* fsck_cmd = app.add_subcommand("fsck", "Audit refcounts, pointers and (optionally) data");
  fsck_cmd->add_option("--store", fsck_store, "Store directory")->required()->envname("REVSTORE_STORE");
  fsck_cmd->add_flag("--verify-data", verify_data, "Re-hash every stored block");

  // generate
  fs::path spec_path;
  std::uint32_t gen_vm = 0, gen_version = 1;
  auto* gen_cmd = app.add_subcommand("generate", "Write one synthetic image");
  gen_cmd->add_option("--spec", spec_path, "Workload spec file")->required();
  gen_cmd->add_option("--vm", gen_vm, "VM index")->capture_default_str();
  gen_cmd->add_option("--version", gen_version, "Version (1-based)")->capture_default_str();
  gen_cmd->add_option("--out", out, "Output file")->required();

  // bench
  std::string mode = "revdedup", order = "after-all";
  fs::path out_dir, bench_store;
  BenchOptions bopt;
  std::vector<double> thresholds{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  bool in_process = false;
  auto* bench_cmd = app.add_subcommand("bench", "Synthetic workload benchmarks");
  bench_cmd->require_subcommand(1);
  auto add_common = [&](CLI::App* c) {
    c->add_option("--spec", spec_path, "Workload spec file (key = value)");
    c->add_option("--mode", mode, "revdedup, revdedup-<n>M, global-<n>M or conventional")->capture_default_str();
    c->add_option("--out", out_dir, "Report directory")->required();
    c->add_option("--clients", bopt.clients, "Concurrent clients")->capture_default_str();
    c->add_option("--connections", bopt.connections, "Uploads per client")->capture_default_str();
    c->add_flag("--in-process", in_process, "Skip HTTP and call the service directly");
    c->add_flag("--sync", bopt.sync, "fsync every write");
  };
  auto* bb = bench_cmd->add_subcommand("backup", "Back up every version, verify, report savings and layout");
  add_common(bb);
  bb->add_option("--threshold", bopt.rebuild_threshold, "Rebuild threshold")->capture_default_str();
  bb->add_flag("--read-latest", bopt.read_latest_each_round, "Time a restore of each new version");
  auto* br = bench_cmd->add_subcommand("read", "Time restores from a populated store");
  br->add_option("--store", bench_store, "Store directory")->required();
  br->add_option("--order", order, "latest-first or after-all")->capture_default_str();
  br->add_option("--out", out_dir, "Report directory")->required();
  auto* bs = bench_cmd->add_subcommand("sweep", "Replay the workload once per rebuild threshold");
  add_common(bs);
  bs->add_option("--thresholds", thresholds, "Thresholds to try")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*serve_cmd) {
      scfg.params = ChunkParams{size_option(seg_size), static_cast<std::uint32_t>(size_option(blk_size))};
      scfg.params.validate();
      scfg.reverse_dedup = !no_reverse;
      scfg.sync = !no_sync;
      return serve(scfg);
    }
    if (*backup_cmd) {
      FileImageSource source(image);
      if (fingerprint_only) {
        ChunkParams params{b_seg ? size_option(*b_seg) : 4 * kMiB,
                           static_cast<std::uint32_t>(b_blk ? size_option(*b_blk) : 4096)};
        std::cout << format_plan(plan_backup(source, params));
        return 0;
      }
      BackupOptions bo;
      bo.vm_id = vm;
      bo.connections = connections;
      if (b_seg || b_blk) {
        bo.expect_params = ChunkParams{b_seg ? size_option(*b_seg) : 4 * kMiB,
                                       static_cast<std::uint32_t>(b_blk ? size_option(*b_blk) : 4096)};
      }
      const auto summary = backup(source, [&] { return make_http_transport(server_url); }, bo);
      std::cout << format_summary(summary);
      return 0;
    }
    if (*restore_cmd) {
      auto transport = make_http_transport(server_url);
      std::uint64_t v = 0;
      if (version == "latest") {
        auto latest = transport->latest(vm);
        if (!latest) throw Error(Errc::rejected, "server has no versions of " + vm);
        v = *latest;
      } else {
        try {
          v = std::stoull(version);
        } catch (const std::exception&) {
          throw Error(Errc::invalid_argument, "bad version '" + version + "'");
        }
      }
      const auto r = restore_to_file(*transport, vm, v, out, force);
      std::cout << "version " << v << "\nbytes " << r.bytes << "\nseconds " << r.seconds << '\n';
      return 0;
    }
    if (*fsck_cmd) {
      Repository repo(fsck_store, std::nullopt, RepositoryOptions{});
      AuditOptions ao;
      ao.verify_data = verify_data;
      const AuditReport r = audit(repo, ao);
      std::cout << "vms " << r.vms << "\nversions " << r.versions << "\nsegments " << r.segments
                << "\nnon_null_blocks " << r.non_null_blocks << "\nremoved_blocks " << r.removed_blocks
                << "\nremoval_applied_segments " << r.removal_applied_segments
                << "\nindirect_pointers " << r.indirect_pointers << "\norphan_files " << r.orphan_files.size()
                << "\nunreferenced_segments " << r.unreferenced_segments.size()
                << "\nproblems " << r.problems.size() << '\n';
      for (const auto& p : r.problems) std::cout << "problem " << p << '\n';
      for (const auto& p : r.orphan_files) std::cout << "orphan " << p.string() << '\n';
      return r.ok() ? 0 : 1;
    }
    if (*gen_cmd) {
      const Workload w(load_workload_spec(spec_path));
      auto img = w.image(gen_vm, gen_version);
      FILE* f = std::fopen(out.c_str(), "wb");
      if (!f) throw_errno("create " + out);
      std::vector<std::uint8_t> buf(4 * kMiB);
      for (std::uint64_t off = 0; off < img->size(); off += buf.size()) {
        const auto n = std::min<std::uint64_t>(buf.size(), img->size() - off);
        img->read(off, std::span(buf).first(n));
        if (std::fwrite(buf.data(), 1, n, f) != n) {
          std::fclose(f);
          throw_errno("write " + out);
        }
      }
      std::fclose(f);
      return 0;
    }
    if (*bench_cmd) {
      bopt.http = !in_process;
      if (*br) {
        const auto rows = run_read_bench(bench_store, parse_read_order(order));
        write_read_report(rows, out_dir);
        std::cout << "wrote " << (out_dir / "reads.csv").string() << '\n';
        return 0;
      }
      const WorkloadSpec spec = spec_path.empty() ? WorkloadSpec{} : load_workload_spec(spec_path);
      const BenchMode m = BenchMode::parse(mode);
      if (*bb) {
        const auto report = run_backup_bench(spec, m, bopt, out_dir / "store");
        write_backup_report(report, out_dir);
        std::cout << "saving_oracle " << report.saving_oracle() << "\nsaving_global_only "
                  << report.saving_global_only() << "\nsaving_stored " << report.saving_stored()
                  << "\nwrote " << (out_dir / "report.txt").string() << '\n';
        return 0;
      }
      const auto rows = run_threshold_sweep(spec, m, thresholds, bopt, out_dir / "work");
      write_sweep_report(rows, out_dir);
      std::cout << "wrote " << (out_dir / "sweep.csv").string() << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
