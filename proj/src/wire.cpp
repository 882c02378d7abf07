#include "revstore/wire.hpp"

#include <charconv>
#include <cstring>
#include <sstream>

#include "revstore/error.hpp"

namespace revstore::wire {

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(Errc::invalid_argument, "malformed request: " + what);
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return out;
}

std::vector<std::string_view> split_words(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::uint64_t parse_u64(std::string_view s, const char* what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) malformed(std::string("bad ") + what);
  return v;
}

double parse_double(std::string_view s, const char* what) {
  try {
    std::size_t used = 0;
    const std::string str(s);
    const double v = std::stod(str, &used);
    if (used != str.size()) malformed(std::string("bad ") + what);
    return v;
  } catch (const std::logic_error&) {
    malformed(std::string("bad ") + what);
  }
}

Fingerprint parse_fp(std::string_view s) {
  auto fp = Fingerprint::from_hex(s);
  if (!fp) malformed("bad fingerprint '" + std::string(s) + "'");
  return *fp;
}

}  // namespace

std::string encode_fingerprints(std::span<const Fingerprint> fps) {
  std::string out(fps.size() * kFingerprintSize, '\0');
  for (std::size_t i = 0; i < fps.size(); ++i) {
    std::memcpy(out.data() + i * kFingerprintSize, fps[i].bytes.data(), kFingerprintSize);
  }
  return out;
}

std::vector<Fingerprint> decode_fingerprints(std::string_view body) {
  if (body.size() % kFingerprintSize != 0) malformed("query body is not a whole number of fingerprints");
  std::vector<Fingerprint> out(body.size() / kFingerprintSize);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = Fingerprint::from_bytes(reinterpret_cast<const std::uint8_t*>(body.data()) +
                                     i * kFingerprintSize);
  }
  return out;
}

std::string encode_bitmap(const std::vector<bool>& bits) {
  std::string out((bits.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out[i / 8] = static_cast<char>(out[i / 8] | (1u << (i % 8)));
  }
  return out;
}

std::vector<bool> decode_bitmap(std::string_view body, std::size_t count) {
  if (body.size() != (count + 7) / 8) {
    throw Error(Errc::network, "query response has the wrong length");
  }
  std::vector<bool> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = (static_cast<std::uint8_t>(body[i / 8]) >> (i % 8)) & 1u;
  }
  return out;
}

std::string encode_sidecar(std::span<const BlockDescriptor> blocks) {
  std::string out(blocks.size() * kSidecarRecordSize, '\0');
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    char* rec = out.data() + i * kSidecarRecordSize;
    rec[0] = blocks[i].is_null ? 1 : 0;
    if (!blocks[i].is_null) std::memcpy(rec + 1, blocks[i].fingerprint.bytes.data(), kFingerprintSize);
  }
  return out;
}

std::vector<BlockDescriptor> decode_sidecar(std::string_view sidecar) {
  if (sidecar.size() % kSidecarRecordSize != 0) malformed("sidecar is not a whole number of records");
  std::vector<BlockDescriptor> out(sidecar.size() / kSidecarRecordSize);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* rec = reinterpret_cast<const std::uint8_t*>(sidecar.data()) + i * kSidecarRecordSize;
    if (rec[0] > 1) malformed("bad sidecar null flag");
    out[i].is_null = rec[0] == 1;
    if (!out[i].is_null) out[i].fingerprint = Fingerprint::from_bytes(rec + 1);
  }
  return out;
}

std::string encode_submission(const Submission& s) {
  std::string out = "revstore-version 1\nversion ";
  out += s.version_no ? std::to_string(*s.version_no) : "next";
  out += "\nlogical_length " + std::to_string(s.logical_length) + "\n";
  out.reserve(out.size() + s.segments.size() * (49 + 41 * (s.blocks.empty() ? 0 : s.blocks[0].size())));
  for (std::size_t i = 0; i < s.segments.size(); ++i) {
    out += "segment ";
    out += s.segments[i].hex();
    if (i < s.blocks.size()) {
      for (const auto& b : s.blocks[i]) {
        out += ' ';
        out += b.is_null ? std::string("-") : b.fingerprint.hex();
      }
    }
    out += '\n';
  }
  return out;
}

Submission decode_submission(std::string_view body) {
  const auto lines = split_lines(body);
  if (lines.empty() || lines[0] != "revstore-version 1") malformed("unknown submission format");
  Submission s;
  bool have_version = false, have_length = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto w = split_words(lines[i]);
    if (w[0] == "version" && w.size() == 2) {
      have_version = true;
      if (w[1] != "next") s.version_no = parse_u64(w[1], "version");
    } else if (w[0] == "logical_length" && w.size() == 2) {
      have_length = true;
      s.logical_length = parse_u64(w[1], "logical length");
    } else if (w[0] == "segment" && w.size() >= 2) {
      s.segments.push_back(parse_fp(w[1]));
      std::vector<BlockDescriptor> blocks(w.size() - 2);
      for (std::size_t k = 2; k < w.size(); ++k) {
        if (w[k] == "-") {
          blocks[k - 2].is_null = true;
        } else {
          blocks[k - 2].fingerprint = parse_fp(w[k]);
        }
      }
      s.blocks.push_back(std::move(blocks));
    } else {
      malformed("unexpected line '" + std::string(lines[i].substr(0, 64)) + "'");
    }
  }
  if (!have_version || !have_length) malformed("submission lacks version or logical_length");
  return s;
}

std::string encode_ingest_report(const IngestReport& r) {
  std::ostringstream out;
  out << "vm " << r.vm_id << '\n'
      << "version " << r.version_no << '\n'
      << "segments_total " << r.segments_total << '\n'
      << "segments_distinct " << r.segments_distinct << '\n'
      << "segments_placed " << r.segments_placed << '\n'
      << "blocks_redirected " << r.blocks_redirected << '\n'
      << "victims " << r.victims << '\n'
      << "removals " << r.removals.size() << '\n'
      << "removals_skipped " << r.removals_skipped << '\n'
      << "link_seconds " << r.link_seconds << '\n'
      << "reverse_seconds " << r.reverse_seconds << '\n'
      << "removal_seconds " << r.removal_seconds << '\n'
      << "total_seconds " << r.total_seconds << '\n';
  for (const auto& rm : r.removals) {
    out << "removal " << rm.segment.hex() << ' ' << to_string(rm.mechanism) << ' '
        << rm.blocks_removed << ' ' << rm.non_null_blocks << ' ' << rm.threshold << ' ';
    if (rm.freed_extents.empty()) out << '-';
    for (std::size_t i = 0; i < rm.freed_extents.size(); ++i) {
      out << (i ? "," : "") << rm.freed_extents[i];
    }
    out << '\n';
  }
  return out.str();
}

IngestReport decode_ingest_report(std::string_view body) {
  IngestReport r;
  for (auto line : split_lines(body)) {
    const auto w = split_words(line);
    if (w.empty()) continue;
    if (w[0] == "removal" && (w.size() == 5 || w.size() == 7)) {
      RemovalReport rm;
      rm.segment = parse_fp(w[1]);
      if (w[2] == "punch") {
        rm.mechanism = RemovalMechanism::punch;
      } else if (w[2] == "compact") {
        rm.mechanism = RemovalMechanism::compact;
      } else {
        rm.mechanism = RemovalMechanism::compact_fallback;
      }
      rm.blocks_removed = static_cast<std::uint32_t>(parse_u64(w[3], "removed count"));
      rm.non_null_blocks = static_cast<std::uint32_t>(parse_u64(w[4], "non-null count"));
      if (w.size() == 7) {
        rm.threshold = parse_double(w[5], "threshold");
        for (std::string_view rest = w[6]; rest != "-" && !rest.empty();) {
          const auto comma = rest.find(',');
          rm.freed_extents.push_back(parse_u64(rest.substr(0, comma), "extent size"));
          rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
      }
      r.removals.push_back(rm);
      continue;
    }
    if (w.size() != 2) continue;
    const auto k = w[0];
    if (k == "vm") r.vm_id = std::string(w[1]);
    else if (k == "version") r.version_no = parse_u64(w[1], "version");
    else if (k == "segments_total") r.segments_total = parse_u64(w[1], "segments_total");
    else if (k == "segments_distinct") r.segments_distinct = parse_u64(w[1], "segments_distinct");
    else if (k == "segments_placed") r.segments_placed = parse_u64(w[1], "segments_placed");
    else if (k == "blocks_redirected") r.blocks_redirected = parse_u64(w[1], "blocks_redirected");
    else if (k == "victims") r.victims = parse_u64(w[1], "victims");
    else if (k == "removals_skipped") r.removals_skipped = parse_u64(w[1], "removals_skipped");
    else if (k == "link_seconds") r.link_seconds = parse_double(w[1], "seconds");
    else if (k == "reverse_seconds") r.reverse_seconds = parse_double(w[1], "seconds");
    else if (k == "removal_seconds") r.removal_seconds = parse_double(w[1], "seconds");
    else if (k == "total_seconds") r.total_seconds = parse_double(w[1], "seconds");
  }
  return r;
}

std::string encode_missing(std::span<const Fingerprint> fps) {
  std::string out;
  for (const auto& fp : fps) out += "missing " + fp.hex() + "\n";
  return out;
}

std::vector<Fingerprint> decode_missing(std::string_view body) {
  std::vector<Fingerprint> out;
  for (auto line : split_lines(body)) {
    const auto w = split_words(line);
    if (w.size() == 2 && w[0] == "missing") out.push_back(parse_fp(w[1]));
  }
  return out;
}

std::string encode_config(const RemoteConfig& c) {
  std::ostringstream out;
  out << "segment_size " << c.params.segment_size << '\n'
      << "block_size " << c.params.block_size << '\n'
      << "reverse_dedup " << (c.reverse_dedup ? 1 : 0) << '\n'
      << "rebuild_threshold " << c.rebuild_threshold << '\n'
      << "pipeline_depth " << c.pipeline_depth << '\n';
  return out.str();
}

RemoteConfig decode_config(std::string_view body) {
  RemoteConfig c;
  for (auto line : split_lines(body)) {
    const auto w = split_words(line);
    if (w.size() != 2) continue;
    if (w[0] == "segment_size") c.params.segment_size = parse_u64(w[1], "segment_size");
    else if (w[0] == "block_size") c.params.block_size = static_cast<std::uint32_t>(parse_u64(w[1], "block_size"));
    else if (w[0] == "reverse_dedup") c.reverse_dedup = w[1] != "0";
    else if (w[0] == "rebuild_threshold") c.rebuild_threshold = parse_double(w[1], "rebuild_threshold");
    else if (w[0] == "pipeline_depth") c.pipeline_depth = parse_u64(w[1], "pipeline_depth");
  }
  return c;
}

}  // namespace revstore::wire
