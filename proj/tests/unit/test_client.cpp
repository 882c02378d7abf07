#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>

#include "revstore/audit.hpp"
#include "revstore/client.hpp"
#include "revstore/server.hpp"
#include "test_support.hpp"

namespace revstore {
namespace {

using testing::TempDir;
using testing::fast_options;
using testing::restore_bytes;

// 16 MiB images, 1 MiB segments: small enough for tests, large enough that a
// weekly change touches only a few segments.
WorkloadSpec small_spec() {
  WorkloadSpec s;
  s.vm_count = 2;
  s.versions = 3;
  s.image_size = 16 * kMiB;
  s.null_run = 64 * kKiB;
  s.change_fraction = 0.02;
  s.hot_fraction = 0.25;
  s.hot_alignment = 1 * kMiB;
  s.change_unit = 64 * kKiB;
  s.change_stride = 1 * kMiB;
  return s;
}

const ChunkParams kParams{1 * kMiB, 4096};

struct Fixture {
  TempDir dir;
  Repository repo{dir.path() / "store", StoreConfig{kParams, true}, fast_options()};
  Service svc{repo};
  TransportFactory local = [this] { return make_local_transport(svc); };
};

BackupOptions opts(const std::string& vm) {
  BackupOptions o;
  o.vm_id = vm;
  o.connections = 3;
  o.workers = 2;
  return o;
}

TEST(Client, SecondBackupOfTheSameImageUploadsNothing) {
  Fixture f;
  const Workload w(small_spec());
  const auto img = w.image(0, 1);
  const auto first = backup(*img, f.local, opts("vm"));
  EXPECT_EQ(first.version_no, 1u);
  EXPECT_EQ(first.segments_total, 16u);
  EXPECT_EQ(first.segments_uploaded, first.segments_distinct);
  const auto second = backup(*img, f.local, opts("vm"));
  EXPECT_EQ(second.version_no, 2u);
  EXPECT_EQ(second.segments_uploaded, 0u);
  EXPECT_LT(second.bytes_sent, kMiB / 4);  // query bitmap and block list only
  // The other VM shares the master image: only its private region differs.
  const auto other = backup(*w.image(1, 1), f.local, opts("other"));
  EXPECT_LT(other.segments_uploaded, other.segments_distinct);
}

TEST(Client, WeeklyChangeUploadsFewSegments) {
  Fixture f;
  WorkloadSpec spec = small_spec();
  spec.change_fraction = 0.01;
  spec.change_jitter = 0;
  const Workload w(spec);
  backup(*w.image(0, 1), f.local, opts("vm"));
  const auto s = backup(*w.image(0, 2), f.local, opts("vm"));
  EXPECT_GT(s.segments_uploaded, 0u);
  EXPECT_LE(static_cast<double>(s.segments_uploaded), 0.2 * s.segments_total);
}

TEST(Client, InterruptedBackupResumesToTheSameStore) {
  const Workload w(small_spec());
  const auto img = w.image(0, 1);
  Fixture clean;
  backup(*img, clean.local, opts("vm"));

  Fixture f;
  BackupOptions o = opts("vm");
  o.connections = 1;
  o.stop_after_uploads = 3;
  try {
    backup(*img, f.local, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::network);
  }
  EXPECT_FALSE(f.repo.catalog().latest("vm").has_value());
  const auto resumed = backup(*img, f.local, opts("vm"));
  EXPECT_EQ(resumed.segments_uploaded, resumed.segments_distinct - 3);
  EXPECT_EQ(f.repo.store().list_segments(), clean.repo.store().list_segments());
  EXPECT_EQ(restore_bytes(f.repo, "vm", 1), restore_bytes(clean.repo, "vm", 1));
  EXPECT_TRUE(audit(f.repo).ok());
}

// Claims every segment is already stored, as if a removal raced the query.
class StaleQueryTransport final : public Transport {
 public:
  explicit StaleQueryTransport(std::unique_ptr<Transport> inner) : inner_(std::move(inner)) {}
  wire::RemoteConfig config() override { return inner_->config(); }
  std::vector<bool> query(std::span<const Fingerprint> fps) override {
    return std::vector<bool>(fps.size(), true);
  }
  void upload(const Fingerprint& fp, std::span<const std::uint8_t> s,
              std::span<const BlockDescriptor> b) override {
    inner_->upload(fp, s, b);
  }
  IngestReport submit(const std::string& vm, const wire::Submission& s) override {
    return inner_->submit(vm, s);
  }
  std::optional<std::uint64_t> latest(const std::string& vm) override { return inner_->latest(vm); }
  std::uint64_t restore(const std::string& vm, std::uint64_t v, const RestoreSink& sink) override {
    return inner_->restore(vm, v, sink);
  }
  std::uint64_t bytes_sent() const override { return inner_->bytes_sent(); }

 private:
  std::unique_ptr<Transport> inner_;
};

TEST(Client, MissingSegmentsTriggerOneResubmit) {
  Fixture f;
  const Workload w(small_spec());
  const auto img = w.image(0, 1);
  const auto s = backup(*img, [&] { return std::make_unique<StaleQueryTransport>(make_local_transport(f.svc)); },
                        opts("vm"));
  EXPECT_EQ(s.resubmits, 1u);
  EXPECT_EQ(s.segments_uploaded, s.segments_distinct);
  std::vector<std::uint8_t> want(img->size());
  img->read(0, want);
  EXPECT_EQ(restore_bytes(f.repo, "vm", 1), want);
}

TEST(Client, ParamsMismatchIsRefused) {
  Fixture f;
  const Workload w(small_spec());
  BackupOptions o = opts("vm");
  o.expect_params = ChunkParams{4 * kMiB, 4096};
  try {
    backup(*w.image(0, 1), f.local, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_argument);
  }
  o = opts("bad id");
  EXPECT_THROW(backup(*w.image(0, 1), f.local, o), Error);
}

TEST(Client, DescriptorCacheIsReused) {
  const Workload w(small_spec());
  DescriptorCache cache;
  const auto a = plan_backup(*w.image(0, 1), kParams, &cache, 2);
  const auto b = plan_backup(*w.image(0, 2), kParams, &cache, 2);
  std::size_t shared = 0;
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    if (a.segments[i].fingerprint == b.segments[i].fingerprint) {
      EXPECT_EQ(a.segments[i].blocks.get(), b.segments[i].blocks.get());
      ++shared;
    }
  }
  EXPECT_GT(shared, 0u);
  const std::string text = format_plan(a);
  EXPECT_NE(text.find("segment 0 " + a.segments[0].fingerprint.hex()), std::string::npos);
}

class HttpClient : public ::testing::Test {
 protected:
  void SetUp() override {
    port = server.bind("127.0.0.1", 0);
    server.start();
    url = "http://127.0.0.1:" + std::to_string(port);
  }
  void TearDown() override { server.stop(); }

  Fixture f;
  HttpServer server{f.svc, 4};
  int port = 0;
  std::string url;
};

TEST_F(HttpClient, BackupAndRestoreOverHttp) {
  const Workload w(small_spec());
  for (std::uint32_t v = 1; v <= 3; ++v) {
    const auto s = backup(*w.image(0, v), [&] { return make_http_transport(url); }, opts("vm"));
    EXPECT_EQ(s.version_no, v);
    EXPECT_GT(s.bytes_sent, 0u);
  }
  auto t = make_http_transport(url);
  EXPECT_EQ(t->latest("vm"), 3u);
  EXPECT_FALSE(t->latest("nobody").has_value());
  for (std::uint32_t v = 1; v <= 3; ++v) {
    const auto out = f.dir / ("v" + std::to_string(v));
    const auto r = restore_to_file(*t, "vm", v, out, false);
    EXPECT_EQ(r.bytes, 16 * kMiB);
    std::vector<std::uint8_t> want(16 * kMiB);
    w.read(0, v, 0, want);
    std::ifstream in(out, std::ios::binary);
    std::vector<std::uint8_t> got((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(got, want);
  }
  try {
    restore_to_file(*t, "vm", 1, f.dir / "v1", false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_argument);
  }
  EXPECT_NO_THROW(restore_to_file(*t, "vm", 1, f.dir / "v1", true));
  try {
    restore_to_file(*t, "vm", 9, f.dir / "v9", false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::rejected);
  }
  EXPECT_FALSE(std::filesystem::exists(f.dir / "v9.partial"));
}

TEST_F(HttpClient, TruncatedRestoreLeavesNoFile) {
  const Workload w(small_spec());
  backup(*w.image(0, 1), [&] { return make_http_transport(url); }, opts("vm"));
  backup(*w.image(0, 2), [&] { return make_http_transport(url); }, opts("vm"));
  // Break a pointer near the end of version 1 so the stream fails midway.
  auto ptrs = f.repo.catalog().load_pointers("vm", 1);
  std::size_t victim = ptrs.size();
  for (std::size_t i = ptrs.size() / 2; i < ptrs.size(); ++i) {
    if (ptrs[i].kind != PointerKind::null) {
      victim = i;
      break;
    }
  }
  ASSERT_LT(victim, ptrs.size());
  ptrs[victim] = BlockPointer::indirect(7, 0);
  f.repo.catalog().rewrite_pointers("vm", 1, ptrs);

  auto t = make_http_transport(url);
  const auto out = f.dir / "broken";
  try {
    restore_to_file(*t, "vm", 1, out, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::network);
  }
  EXPECT_FALSE(std::filesystem::exists(out));
  EXPECT_FALSE(std::filesystem::exists(out.string() + ".partial"));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(REVSTORE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(HttpClient, CliExitCodes) {
  const Workload w(small_spec());
  const auto image = f.dir / "img";
  {
    std::vector<std::uint8_t> bytes(16 * kMiB);
    w.read(0, 1, 0, bytes);
    std::ofstream(image, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                  static_cast<std::streamsize>(bytes.size()));
  }
  const std::string img = image.string();
  EXPECT_EQ(run_cli("backup --vm vm --image " + img + " --server " + url), 0);
  EXPECT_EQ(run_cli("backup --vm vm --image " + img + " --server " + url + " --segment-size 4M"), 2);
  EXPECT_EQ(run_cli("backup --vm vm --image " + (f.dir / "nope").string() + " --server " + url), 2);
  EXPECT_EQ(run_cli("backup --vm vm --image " + img + " --server http://127.0.0.1:1"), 3);
  EXPECT_EQ(run_cli("backup --bogus-flag"), 2);
  EXPECT_EQ(run_cli("restore --vm vm --version latest --out " + (f.dir / "r").string() + " --server " + url), 0);
  EXPECT_EQ(run_cli("restore --vm vm --version 5 --out " + (f.dir / "r5").string() + " --server " + url), 4);
  EXPECT_EQ(run_cli("restore --vm vm --version 1 --out " + (f.dir / "r").string() + " --server " + url), 2);
  EXPECT_EQ(run_cli("backup --vm vm --image " + img + " --fingerprint-only --segment-size 1M"), 0);
  EXPECT_EQ(std::filesystem::file_size(f.dir / "r"), 16 * kMiB);
  server.stop();
  // The fixture still holds the store open.
  EXPECT_EQ(run_cli("fsck --store " + (f.dir / "store").string()), 2);
  std::filesystem::copy(f.dir / "store", f.dir / "copy", std::filesystem::copy_options::recursive);
  EXPECT_EQ(run_cli("fsck --store " + (f.dir / "copy").string() + " --verify-data"), 0);
}

}  // namespace
}  // namespace revstore
