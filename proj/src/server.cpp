#include "revstore/server.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <sstream>

#include "revstore/error.hpp"
#include "revstore/file_io.hpp"

namespace revstore {

namespace {

Service::Response text(int status, std::string body) { return {status, std::move(body), {}}; }

int status_for(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return 400;
    case Errc::integrity: return 422;
    case Errc::missing_segments:
    case Errc::out_of_order: return 409;
    case Errc::not_found: return 404;
    default: return 500;
  }
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

Service::Service(Repository& repo, std::size_t pipeline_depth)
    : repo_(repo), pipeline_depth_(pipeline_depth) {}

Service::Response Service::error_response(const std::exception& e) {
  if (const auto* m = dynamic_cast<const MissingSegmentsError*>(&e)) {
    return {409, wire::encode_missing(m->missing()), std::string(to_string(m->code()))};
  }
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    return {status_for(err->code()), "error " + std::string(to_string(err->code())) + ": " + err->what() + "\n",
            std::string(to_string(err->code()))};
  }
  return {500, std::string("error internal: ") + e.what() + "\n", "internal"};
}

Service::Response Service::query(std::string_view body) {
  try {
    const auto fps = wire::decode_fingerprints(body);
    return text(200, wire::encode_bitmap(repo_.store().query_exists(fps)));
  } catch (const std::exception& e) {
    return error_response(e);
  }
}

Service::Response Service::upload(std::string_view hex, std::string_view body,
                                  std::optional<std::string_view> sidecar_length) {
  try {
    auto fp = Fingerprint::from_hex(hex);
    if (!fp) throw Error(Errc::invalid_argument, "bad segment fingerprint in path");
    const ChunkParams& params = repo_.config().params;
    const std::uint64_t expected_sidecar = std::uint64_t{params.blocks_per_segment()} * wire::kSidecarRecordSize;
    if (!sidecar_length) throw Error(Errc::invalid_argument, "missing X-Sidecar-Length header");
    auto side = parse_u64(*sidecar_length);
    if (!side || *side != expected_sidecar) {
      throw Error(Errc::invalid_argument, "sidecar length must be " + std::to_string(expected_sidecar));
    }
    if (body.size() != params.segment_size + *side) {
      throw Error(Errc::invalid_argument, "upload body must be segment_size plus the sidecar (" +
                                              std::to_string(params.segment_size + *side) + " bytes)");
    }
    const auto blocks = wire::decode_sidecar(body.substr(params.segment_size));
    const auto* data = reinterpret_cast<const std::uint8_t*>(body.data());
    repo_.store().put_segment(*fp, std::span(data, params.segment_size), blocks);
    return text(200, "stored " + fp->hex() + "\n");
  } catch (const std::exception& e) {
    return error_response(e);
  }
}

Service::Response Service::submit(std::string_view vm, std::string_view body) {
  try {
    if (!Catalog::valid_vm_id(vm)) throw Error(Errc::invalid_argument, "invalid vm id");
    const wire::Submission s = wire::decode_submission(body);
    const ChunkParams& params = repo_.config().params;
    if (s.logical_length == 0 || s.segments.size() != params.segment_count(s.logical_length)) {
      throw Error(Errc::invalid_argument, "segment count does not match the logical length");
    }
    // Block lists are optional, but when present they must agree with what
    // the server derived from the uploaded bytes.
    const auto present = repo_.store().query_exists(s.segments);
    std::vector<Fingerprint> missing;
    for (std::size_t i = 0; i < s.segments.size(); ++i) {
      if (!present[i]) missing.push_back(s.segments[i]);
    }
    if (!missing.empty()) {
      std::sort(missing.begin(), missing.end());
      missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
      throw MissingSegmentsError(std::move(missing));
    }
    if (!s.blocks.empty()) {
      if (s.blocks.size() != s.segments.size()) {
        throw Error(Errc::invalid_argument, "block lists do not cover every segment");
      }
      for (std::size_t i = 0; i < s.segments.size(); ++i) {
        if (s.blocks[i].size() != params.blocks_per_segment()) {
          throw Error(Errc::invalid_argument, "block list of segment " + std::to_string(i) +
                                                  " has the wrong length");
        }
        repo_.store().with_meta(s.segments[i], [&](const SegmentMeta& m) {
          for (std::size_t b = 0; b < m.blocks.size(); ++b) {
            const BlockDescriptor& d = s.blocks[i][b];
            if (d.is_null != m.blocks[b].is_null ||
                (!d.is_null && d.fingerprint != m.blocks[b].fingerprint)) {
              throw Error(Errc::integrity, "block " + std::to_string(b) + " of segment " +
                                               s.segments[i].hex() + " disagrees with the stored copy");
            }
          }
        });
      }
    }
    IngestRequest req;
    req.vm_id = std::string(vm);
    req.version_no = s.version_no;
    req.logical_length = s.logical_length;
    req.segments = s.segments;
    return text(200, wire::encode_ingest_report(repo_.ingest(req)));
  } catch (const std::exception& e) {
    return error_response(e);
  }
}

Service::Response Service::config() const {
  wire::RemoteConfig c;
  c.params = repo_.config().params;
  c.reverse_dedup = repo_.config().reverse_dedup;
  c.rebuild_threshold = repo_.options().rebuild_threshold;
  c.pipeline_depth = pipeline_depth_;
  return text(200, wire::encode_config(c));
}

Service::Response Service::stats() {
  try {
    std::uint64_t versions = 0;
    const auto vms = repo_.catalog().vms();
    for (const auto& [vm, n] : vms) versions += n;
    const auto io = repo_.store().io_counters();
    std::ostringstream out;
    out << "vms " << vms.size() << '\n'
        << "versions " << versions << '\n'
        << "segments " << repo_.store().list_segments().size() << '\n'
        << "allocated_bytes " << allocated_bytes_under(repo_.root()) << '\n'
        << "read_calls " << io.read_calls << '\n'
        << "bytes_read " << io.bytes_read << '\n';
    return text(200, out.str());
  } catch (const std::exception& e) {
    return error_response(e);
  }
}

Service::Response Service::vm_info(std::string_view vm) {
  auto latest = repo_.catalog().latest(std::string(vm));
  if (!latest) return error_response(Error(Errc::not_found, "unknown vm"));
  return text(200, "latest " + std::to_string(*latest) + "\n");
}

Service::RestorePlan Service::plan_restore(std::string_view vm, std::string_view version) {
  RestorePlan plan;
  plan.vm = std::string(vm);
  try {
    auto n = parse_u64(version);
    if (!n) throw Error(Errc::invalid_argument, "bad version number");
    auto latest = repo_.catalog().latest(plan.vm);
    if (!latest || *n == 0 || *n > *latest) {
      throw Error(Errc::not_found, "no version " + std::string(version) + " of vm " + plan.vm);
    }
    VersionRecipe r;
    decode_recipe(read_file(repo_.catalog().recipe_path(plan.vm, *n)), r);
    plan.version_no = *n;
    plan.length = r.logical_length;
  } catch (const std::exception& e) {
    plan.error = error_response(e);
  }
  return plan;
}

RestoreStats Service::stream_restore(const RestorePlan& plan, const RestoreSink& sink) {
  RestoreOptions opts;
  opts.queue_depth = pipeline_depth_;
  return restore_stream(repo_, plan.vm, plan.version_no, sink, opts);
}

struct HttpServer::Impl {
  Service& service;
  httplib::Server http;
  explicit Impl(Service& s) : service(s) {}
};

namespace {

void reply(httplib::Response& res, const Service::Response& r) {
  res.status = r.status;
  if (!r.error_code.empty()) res.set_header(std::string(wire::kErrorHeader), r.error_code);
  res.set_content(r.body, r.status == 200 ? "application/octet-stream" : "text/plain");
}

}  // namespace

HttpServer::HttpServer(Service& service, std::size_t threads) : impl_(std::make_unique<Impl>(service)) {
  auto& http = impl_->http;
  Service& svc = impl_->service;
  const std::size_t n = std::max<std::size_t>(threads, 1);
  http.new_task_queue = [n] { return new httplib::ThreadPool(n); };
  const ChunkParams& params = svc.repository().config().params;
  // Largest legal request is one segment upload plus its sidecar; version
  // submissions carry 41 bytes of text per block.
  http.set_payload_max_length(std::max<std::size_t>(
      params.segment_size + params.blocks_per_segment() * wire::kSidecarRecordSize + 4096,
      std::size_t{1} << 30));
  http.set_read_timeout(300, 0);
  http.set_write_timeout(300, 0);

  http.Post("/v1/segments/query", [&svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.query(req.body));
  });
  http.Put(R"(/v1/segments/([0-9a-fA-F]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string_view> side;
    const std::string header(wire::kSidecarHeader);
    if (req.has_header(header)) side = req.get_header_value(header);
    std::string side_copy = side ? std::string(*side) : std::string();
    reply(res, svc.upload(req.matches[1].str(), req.body,
                          side ? std::optional<std::string_view>(side_copy) : std::nullopt));
  });
  http.Post(R"(/v1/vms/([^/]+)/versions)", [&svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.submit(req.matches[1].str(), req.body));
  });
  http.Get(R"(/v1/vms/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.vm_info(req.matches[1].str()));
  });
  http.Get(R"(/v1/vms/([^/]+)/versions/([^/]+))",
           [&svc](const httplib::Request& req, httplib::Response& res) {
             auto plan = std::make_shared<Service::RestorePlan>(
                 svc.plan_restore(req.matches[1].str(), req.matches[2].str()));
             if (plan->error.status != 200) {
               reply(res, plan->error);
               return;
             }
             res.status = 200;
             if (plan->length == 0) return;
             res.set_content_provider(
                 plan->length, "application/octet-stream",
                 [&svc, plan](std::size_t offset, std::size_t, httplib::DataSink& sink) {
                   if (offset != 0) return false;
                   try {
                     svc.stream_restore(*plan, [&](std::span<const std::uint8_t> data) {
                       if (!sink.write(reinterpret_cast<const char*>(data.data()), data.size())) {
                         throw Error(Errc::network, "client went away");
                       }
                     });
                   } catch (const std::exception&) {
                     // Returning false drops the connection short of
                     // Content-Length, which is how the client sees failure.
                     return false;
                   }
                   return true;
                 });
           });
  http.Get("/v1/config", [&svc](const httplib::Request&, httplib::Response& res) {
    reply(res, svc.config());
  });
  http.Get("/v1/stats", [&svc](const httplib::Request&, httplib::Response& res) {
    reply(res, svc.stats());
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->http.bind_to_any_port(host);
    if (p < 0) throw Error(Errc::network, "cannot bind " + host);
    return p;
  }
  if (!impl_->http.bind_to_port(host, port)) {
    throw Error(Errc::network, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::start() {
  thread_ = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

void HttpServer::run() { impl_->http.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->http.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace revstore
