#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "revstore/chunking.hpp"
#include "revstore/fingerprint.hpp"
#include "revstore/repository.hpp"

namespace revstore::wire {

// Byte-level encodings shared by server and client. docs/PROTOCOL.md has the
// request/response table.

inline constexpr std::string_view kSidecarHeader = "X-Sidecar-Length";
inline constexpr std::string_view kErrorHeader = "X-Revstore-Error";
inline constexpr std::size_t kSidecarRecordSize = 1 + kFingerprintSize;

// Query: request is concatenated 20-byte fingerprints, response a bitmap
// with bit i (LSB-first within each byte) set iff fps[i] is stored.
std::string encode_fingerprints(std::span<const Fingerprint> fps);
std::vector<Fingerprint> decode_fingerprints(std::string_view body);
std::string encode_bitmap(const std::vector<bool>& bits);
std::vector<bool> decode_bitmap(std::string_view body, std::size_t count);

// Upload sidecar: one 21-byte record per block, u8 null flag then the
// fingerprint (zero for null blocks).
std::string encode_sidecar(std::span<const BlockDescriptor> blocks);
std::vector<BlockDescriptor> decode_sidecar(std::string_view sidecar);

// Version submission, text:
//   revstore-version 1
//   version next|<n>
//   logical_length <bytes>
//   segment <hex fp> <block>...     one line per segment in order; each
//                                   block is a hex fp or "-" for null
struct Submission {
  std::optional<std::uint64_t> version_no;
  std::uint64_t logical_length = 0;
  std::vector<Fingerprint> segments;
  std::vector<std::vector<BlockDescriptor>> blocks;
};
std::string encode_submission(const Submission& s);
Submission decode_submission(std::string_view body);

// Submission response: "key value" lines, plus one
//   removal <segment> <mechanism> <blocks removed> <non-null blocks>
// line per removal.
std::string encode_ingest_report(const IngestReport& r);
IngestReport decode_ingest_report(std::string_view body);

// 409 body for missing segments: "missing <hex fp>" per line.
std::string encode_missing(std::span<const Fingerprint> fps);
std::vector<Fingerprint> decode_missing(std::string_view body);

struct RemoteConfig {
  ChunkParams params;
  bool reverse_dedup = true;
  double rebuild_threshold = 0.2;
  std::size_t pipeline_depth = 1024;
};
std::string encode_config(const RemoteConfig& c);
RemoteConfig decode_config(std::string_view body);

}  // namespace revstore::wire
