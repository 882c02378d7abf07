#include "revstore/client.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "revstore/error.hpp"
#include "revstore/server.hpp"

namespace revstore {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

[[noreturn]] void raise_rejection(int status, const std::string& error_code, const std::string& body) {
  if (status == 409 && error_code == to_string(Errc::missing_segments)) {
    throw MissingSegmentsError(wire::decode_missing(body));
  }
  std::string msg = body;
  while (!msg.empty() && msg.back() == '\n') msg.pop_back();
  throw Error(Errc::rejected, "server rejected request (" + std::to_string(status) + "): " + msg);
}

// Runs fn(i) for i in [0, n) on up to `threads` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const std::string& url) : client_(url) {
    if (!client_.is_valid()) throw Error(Errc::invalid_argument, "bad server url " + url);
    client_.set_connection_timeout(10, 0);
    client_.set_read_timeout(600, 0);
    client_.set_write_timeout(600, 0);
    client_.set_keep_alive(true);
  }

  wire::RemoteConfig config() override {
    return wire::decode_config(checked(client_.Get("/v1/config")).body);
  }

  std::vector<bool> query(std::span<const Fingerprint> fps) override {
    const std::string body = wire::encode_fingerprints(fps);
    sent_ += body.size();
    auto res = checked(client_.Post("/v1/segments/query", body, "application/octet-stream"));
    return wire::decode_bitmap(res.body, fps.size());
  }

  void upload(const Fingerprint& fp, std::span<const std::uint8_t> segment,
              std::span<const BlockDescriptor> blocks) override {
    const std::string sidecar = wire::encode_sidecar(blocks);
    std::string body(segment.size() + sidecar.size(), '\0');
    std::memcpy(body.data(), segment.data(), segment.size());
    std::memcpy(body.data() + segment.size(), sidecar.data(), sidecar.size());
    httplib::Headers headers{{std::string(wire::kSidecarHeader), std::to_string(sidecar.size())}};
    sent_ += body.size();
    checked(client_.Put("/v1/segments/" + fp.hex(), headers, body, "application/octet-stream"));
  }

  IngestReport submit(const std::string& vm, const wire::Submission& s) override {
    const std::string body = wire::encode_submission(s);
    sent_ += body.size();
    auto res = checked(client_.Post("/v1/vms/" + vm + "/versions", body, "text/plain"));
    return wire::decode_ingest_report(res.body);
  }

  std::optional<std::uint64_t> latest(const std::string& vm) override {
    auto res = client_.Get("/v1/vms/" + vm);
    if (!res) throw Error(Errc::network, "request failed: " + httplib::to_string(res.error()));
    if (res->status == 404) return std::nullopt;
    const std::string body = checked(std::move(res)).body;
    return std::stoull(body.substr(body.find(' ') + 1));
  }

  std::uint64_t restore(const std::string& vm, std::uint64_t version_no,
                        const RestoreSink& sink) override {
    int status = 0;
    std::string error_code, error_body;
    std::optional<std::uint64_t> announced;
    std::uint64_t received = 0;
    auto res = client_.Get(
        "/v1/vms/" + vm + "/versions/" + std::to_string(version_no),
        [&](const httplib::Response& r) {
          status = r.status;
          error_code = r.get_header_value(std::string(wire::kErrorHeader));
          if (r.has_header("Content-Length")) {
            announced = std::stoull(r.get_header_value("Content-Length"));
          }
          return true;
        },
        [&](const char* data, std::size_t len) {
          if (status != 200) {
            error_body.append(data, len);
          } else {
            sink(std::span(reinterpret_cast<const std::uint8_t*>(data), len));
            received += len;
          }
          return true;
        });
    if (status != 0 && status != 200) raise_rejection(status, error_code, error_body);
    if (!res) {
      throw Error(Errc::network, "restore transfer failed after " + std::to_string(received) +
                                     " bytes: " + httplib::to_string(res.error()));
    }
    if (!announced || received != *announced) {
      throw Error(Errc::network, "restore transfer truncated at " + std::to_string(received) + " bytes");
    }
    return received;
  }

  std::uint64_t bytes_sent() const override { return sent_; }

 private:
  httplib::Response checked(httplib::Result res) {
    if (!res) throw Error(Errc::network, "request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      raise_rejection(res->status, res->get_header_value(std::string(wire::kErrorHeader)), res->body);
    }
    return *res;
  }

  httplib::Client client_;
  std::uint64_t sent_ = 0;
};

class LocalTransport final : public Transport {
 public:
  explicit LocalTransport(Service& s) : svc_(s) {}

  wire::RemoteConfig config() override { return wire::decode_config(checked(svc_.config())); }

  std::vector<bool> query(std::span<const Fingerprint> fps) override {
    const std::string body = wire::encode_fingerprints(fps);
    sent_ += body.size();
    return wire::decode_bitmap(checked(svc_.query(body)), fps.size());
  }

  void upload(const Fingerprint& fp, std::span<const std::uint8_t> segment,
              std::span<const BlockDescriptor> blocks) override {
    const std::string sidecar = wire::encode_sidecar(blocks);
    std::string body(segment.size() + sidecar.size(), '\0');
    std::memcpy(body.data(), segment.data(), segment.size());
    std::memcpy(body.data() + segment.size(), sidecar.data(), sidecar.size());
    sent_ += body.size();
    const std::string len = std::to_string(sidecar.size());
    checked(svc_.upload(fp.hex(), body, std::string_view(len)));
  }

  IngestReport submit(const std::string& vm, const wire::Submission& s) override {
    const std::string body = wire::encode_submission(s);
    sent_ += body.size();
    return wire::decode_ingest_report(checked(svc_.submit(vm, body)));
  }

  std::optional<std::uint64_t> latest(const std::string& vm) override {
    auto r = svc_.vm_info(vm);
    if (r.status == 404) return std::nullopt;
    const std::string body = checked(std::move(r));
    return std::stoull(body.substr(body.find(' ') + 1));
  }

  std::uint64_t restore(const std::string& vm, std::uint64_t version_no,
                        const RestoreSink& sink) override {
    auto plan = svc_.plan_restore(vm, std::to_string(version_no));
    if (plan.error.status != 200) checked(std::move(plan.error));
    return svc_.stream_restore(plan, sink).bytes;
  }

  std::uint64_t bytes_sent() const override { return sent_; }

 private:
  static std::string checked(Service::Response r) {
    if (r.status != 200) raise_rejection(r.status, r.error_code, r.body);
    return std::move(r.body);
  }

  Service& svc_;
  std::uint64_t sent_ = 0;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& url) {
  return std::make_unique<HttpTransport>(url);
}

std::unique_ptr<Transport> make_local_transport(Service& service) {
  return std::make_unique<LocalTransport>(service);
}

DescriptorCache::Blocks DescriptorCache::find(const Fingerprint& fp) const {
  std::lock_guard lock(mu_);
  auto it = map_.find(fp);
  return it == map_.end() ? nullptr : it->second;
}

void DescriptorCache::insert(const Fingerprint& fp, Blocks blocks) {
  std::lock_guard lock(mu_);
  map_.emplace(fp, std::move(blocks));
}

BackupPlan plan_backup(const ImageSource& image, const ChunkParams& params, DescriptorCache* cache,
                       std::size_t workers) {
  params.validate();
  if (image.size() == 0) throw Error(Errc::invalid_argument, "image is empty");
  BackupPlan plan;
  plan.params = params;
  plan.logical_length = image.size();
  plan.segments.resize(params.segment_count(image.size()));
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  parallel_for(plan.segments.size(), workers, [&](std::size_t i) {
    thread_local std::vector<std::uint8_t> buf;
    buf.resize(params.segment_size);
    read_segment(image, i, params, buf);
    SegmentPlan& sp = plan.segments[i];
    sp.fingerprint = fingerprint(buf);
    if (cache) sp.blocks = cache->find(sp.fingerprint);
    if (!sp.blocks) {
      sp.blocks = std::make_shared<const std::vector<BlockDescriptor>>(describe_blocks(buf, params));
      if (cache) cache->insert(sp.fingerprint, sp.blocks);
    }
  });
  return plan;
}

std::string format_plan(const BackupPlan& plan) {
  std::ostringstream out;
  out << "logical_length " << plan.logical_length << '\n'
      << "segment_size " << plan.params.segment_size << '\n'
      << "block_size " << plan.params.block_size << '\n';
  for (std::size_t i = 0; i < plan.segments.size(); ++i) {
    const auto& s = plan.segments[i];
    std::size_t non_null = 0;
    for (const auto& b : *s.blocks) non_null += b.is_null ? 0 : 1;
    out << "segment " << i << ' ' << s.fingerprint.hex() << ' ' << non_null << '\n';
  }
  return out.str();
}

BackupSummary backup(const ImageSource& image, const TransportFactory& connect,
                     const BackupOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!Catalog::valid_vm_id(options.vm_id)) {
    throw Error(Errc::invalid_argument, "invalid vm id '" + options.vm_id + "'");
  }
  auto control = connect();
  const wire::RemoteConfig remote = control->config();
  if (options.expect_params && !(*options.expect_params == remote.params)) {
    throw Error(Errc::invalid_argument,
                "server uses segment size " + std::to_string(remote.params.segment_size) +
                    " and block size " + std::to_string(remote.params.block_size) +
                    ", which differ from the requested ones");
  }

  BackupSummary summary;
  BackupPlan plan = plan_backup(image, remote.params, options.cache, options.workers);
  summary.fingerprint_seconds = seconds_since(t0);
  summary.segments_total = plan.segments.size();

  // First occurrence of each distinct segment, in image order.
  std::map<Fingerprint, std::size_t> first;
  for (std::size_t i = 0; i < plan.segments.size(); ++i) first.emplace(plan.segments[i].fingerprint, i);
  std::vector<std::size_t> distinct;
  for (std::size_t i = 0; i < plan.segments.size(); ++i) {
    if (first[plan.segments[i].fingerprint] == i) distinct.push_back(i);
  }
  summary.segments_distinct = distinct.size();

  const auto t1 = std::chrono::steady_clock::now();
  std::vector<Fingerprint> fps;
  for (std::size_t i : distinct) fps.push_back(plan.segments[i].fingerprint);
  const auto exists = control->query(fps);
  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < distinct.size(); ++k) {
    plan.segments[distinct[k]].exists = exists[k];
    if (!exists[k]) todo.push_back(distinct[k]);
  }

  std::atomic<std::uint64_t> uploaded{0}, upload_bytes{0}, sent{0};
  auto upload_all = [&](const std::vector<std::size_t>& which) {
    const std::size_t conns = std::max<std::size_t>(1, std::min(options.connections, which.size()));
    std::vector<std::size_t> done(conns, 0);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t c = 0; c < conns; ++c) {
      pool.emplace_back([&] {
        try {
          auto t = connect();
          std::vector<std::uint8_t> buf(remote.params.segment_size);
          for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= which.size() || error) break;
            if (options.stop_after_uploads && uploaded.load() >= *options.stop_after_uploads) {
              throw Error(Errc::network, "upload interrupted (test hook)");
            }
            const SegmentPlan& sp = plan.segments[which[k]];
            read_segment(image, which[k], remote.params, buf);
            t->upload(sp.fingerprint, buf, *sp.blocks);
            uploaded.fetch_add(1);
            upload_bytes.fetch_add(buf.size());
          }
          sent.fetch_add(t->bytes_sent());
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  };
  if (!todo.empty()) upload_all(todo);
  summary.upload_seconds = seconds_since(t1);

  const auto t2 = std::chrono::steady_clock::now();
  wire::Submission sub;
  sub.logical_length = plan.logical_length;
  for (const auto& sp : plan.segments) {
    sub.segments.push_back(sp.fingerprint);
    sub.blocks.push_back(*sp.blocks);
  }
  try {
    summary.ingest = control->submit(options.vm_id, sub);
  } catch (const MissingSegmentsError& e) {
    // A concurrent removal can drop blocks from a segment we skipped; send
    // the named ones in full and try once more.
    std::vector<std::size_t> again;
    for (const auto& fp : e.missing()) {
      auto it = first.find(fp);
      if (it == first.end()) throw;
      again.push_back(it->second);
    }
    upload_all(again);
    ++summary.resubmits;
    summary.ingest = control->submit(options.vm_id, sub);
  }
  summary.submit_seconds = seconds_since(t2);
  summary.version_no = summary.ingest.version_no;
  summary.segments_uploaded = uploaded.load();
  summary.segment_bytes_uploaded = upload_bytes.load();
  summary.bytes_sent = sent.load() + control->bytes_sent();
  summary.total_seconds = seconds_since(t0);
  return summary;
}

std::string format_summary(const BackupSummary& s) {
  std::ostringstream out;
  out << "version " << s.version_no << '\n'
      << "segments_total " << s.segments_total << '\n'
      << "segments_distinct " << s.segments_distinct << '\n'
      << "segments_uploaded " << s.segments_uploaded << '\n'
      << "segment_bytes_uploaded " << s.segment_bytes_uploaded << '\n'
      << "bytes_sent " << s.bytes_sent << '\n'
      << "resubmits " << s.resubmits << '\n'
      << "blocks_redirected " << s.ingest.blocks_redirected << '\n'
      << "victims " << s.ingest.victims << '\n'
      << "removals " << s.ingest.removals.size() << '\n'
      << "fingerprint_seconds " << s.fingerprint_seconds << '\n'
      << "upload_seconds " << s.upload_seconds << '\n'
      << "submit_seconds " << s.submit_seconds << '\n'
      << "total_seconds " << s.total_seconds << '\n';
  return out.str();
}

RestoreFileSummary restore_to_file(Transport& transport, const std::string& vm,
                                   std::uint64_t version_no, const std::filesystem::path& out,
                                   bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(out) && !force) {
    throw Error(Errc::invalid_argument, out.string() + " exists; pass --force to overwrite");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path partial = out.string() + ".partial";
  FILE* f = std::fopen(partial.c_str(), "wb");
  if (!f) throw_errno("create " + partial.string());
  RestoreFileSummary summary;
  try {
    summary.bytes = transport.restore(vm, version_no, [&](std::span<const std::uint8_t> data) {
      if (std::fwrite(data.data(), 1, data.size(), f) != data.size()) throw_errno("write " + partial.string());
    });
    if (std::fflush(f) != 0 || ::fsync(fileno(f)) != 0) throw_errno("flush " + partial.string());
    std::fclose(f);
    f = nullptr;
    fs::rename(partial, out);
  } catch (...) {
    if (f) std::fclose(f);
    std::error_code ec;
    fs::remove(partial, ec);
    throw;
  }
  summary.seconds = seconds_since(t0);
  return summary;
}

}  // namespace revstore
