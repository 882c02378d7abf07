#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "revstore/workload.hpp"

namespace revstore {

/// Parses `key = value` lines into a WorkloadSpec; unspecified keys keep
/// their defaults. Blank lines and `#` comments are ignored. Sizes accept
/// K/M/G and KiB/MiB/GiB suffixes (powers of 1024).
WorkloadSpec parse_workload_spec(std::string_view text);
WorkloadSpec load_workload_spec(const std::filesystem::path& path);

/// Canonical text form; parse_workload_spec(format_workload_spec(s)) == s.
std::string format_workload_spec(const WorkloadSpec& spec);

/// "512MiB" -> 536870912.
std::uint64_t parse_size(std::string_view text);

}  // namespace revstore
