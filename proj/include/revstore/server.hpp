#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "revstore/readpath.hpp"
#include "revstore/repository.hpp"
#include "revstore/wire.hpp"

namespace revstore {

struct ServerConfig {
  std::filesystem::path store_root;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  ChunkParams params;
  bool reverse_dedup = true;
  double rebuild_threshold = 0.2;
  std::size_t pipeline_depth = 1024;
  bool sync = true;
  std::size_t threads = 16;
};

/// Protocol handlers, independent of the HTTP layer so tests can drive them
/// in-process with the exact request bodies the client sends.
class Service {
 public:
  struct Response {
    int status = 200;
    std::string body;
    std::string error_code;  // empty on success; sent as X-Revstore-Error
  };

  Service(Repository& repo, std::size_t pipeline_depth = 1024);

  Response query(std::string_view body);
  Response upload(std::string_view hex, std::string_view body,
                  std::optional<std::string_view> sidecar_length);
  Response submit(std::string_view vm, std::string_view body);
  Response config() const;
  Response stats();
  Response vm_info(std::string_view vm);

  struct RestorePlan {
    Response error;  // status != 200 means refuse
    std::string vm;
    std::uint64_t version_no = 0;
    std::uint64_t length = 0;
  };
  RestorePlan plan_restore(std::string_view vm, std::string_view version);
  RestoreStats stream_restore(const RestorePlan& plan, const RestoreSink& sink);

  Repository& repository() noexcept { return repo_; }

  static Response error_response(const std::exception& e);

 private:
  Repository& repo_;
  std::size_t pipeline_depth_;
};

/// HTTP/1.1 front end over a Service.
class HttpServer {
 public:
  HttpServer(Service& service, std::size_t threads = 16);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves on a background thread.
  void start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace revstore
