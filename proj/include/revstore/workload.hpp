#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "revstore/image_source.hpp"

namespace revstore {

/// Shape of a synthetic backup dataset: `vm_count` VMs, each backed up
/// `versions` times. Every VM starts from one shared master image; a
/// VM-private "hot" region receives all of the weekly changes.
struct WorkloadSpec {
  std::uint64_t seed = 1;
  std::uint32_t vm_count = 4;
  std::uint32_t versions = 12;
  std::uint64_t image_size = 512 * kMiB;
  double null_fraction = 0.4;
  // Null blocks come in runs of this many bytes (aligned).
  std::uint64_t null_run = 256 * kKiB;
  // Mean changed bytes per version, as a fraction of the image.
  double change_fraction = 0.01;
  // Each version's change volume is scaled by a factor drawn uniformly
  // from [1 - jitter, 1 + jitter].
  double change_jitter = 0.25;
  // One version (0 = none) gets `spike_factor` times the usual change.
  std::uint32_t spike_version = 0;
  double spike_factor = 3.0;
  // Changes land inside a contiguous region this fraction of the image.
  double hot_fraction = 0.10;
  std::uint64_t hot_alignment = 32 * kMiB;
  // Changes rewrite the data blocks of whole units (null blocks stay null).
  // The hot region is cut into strides and every stride receives its share
  // of each version's units; units changed together are never adjacent.
  std::uint64_t change_unit = 128 * kKiB;
  std::uint64_t change_stride = 4 * kMiB;
  // Share of changed units that take back their content of two versions ago,
  // or copy another unit of the same image.
  double revert_fraction = 0.0;
  double duplicate_fraction = 0.0;
  // Every block of every image is fresh random data (no nulls, no sharing).
  bool unique_data = false;

  /// Throws Error(invalid_argument) on inconsistent values.
  void validate() const;

  std::uint64_t block_count() const noexcept;
};

inline constexpr std::uint32_t kWorkloadBlockSize = 4096;

/// Deterministic generator. Images are random access: version k of a VM is
/// described by per-block content tags, and block bytes are expanded from the
/// tag on demand. Tag 0 is the all-zero block.
class Workload {
 public:
  explicit Workload(WorkloadSpec spec);

  const WorkloadSpec& spec() const noexcept { return spec_; }

  /// Tag of every block of the image (vm in [0, vm_count), version in [1, versions]).
  std::uint64_t tag(std::uint32_t vm, std::uint32_t version, std::uint64_t block) const;

  /// Bytes in [offset, offset + out.size()) of the image.
  void read(std::uint32_t vm, std::uint32_t version, std::uint64_t offset,
            std::span<std::uint8_t> out) const;

  std::unique_ptr<ImageSource> image(std::uint32_t vm, std::uint32_t version) const;

  /// Units changed when producing `version` from `version - 1` (empty for 1).
  const std::vector<std::uint64_t>& changed_units(std::uint32_t vm, std::uint32_t version) const;

  std::uint64_t hot_begin(std::uint32_t vm) const;
  std::uint64_t hot_end(std::uint32_t vm) const;

 private:
  struct VmState {
    std::uint64_t hot_first_block = 0;
    std::uint64_t hot_blocks = 0;
    // hot_tags[v - 1][i]: tag of hot block i in version v.
    std::vector<std::vector<std::uint64_t>> hot_tags;
    std::vector<std::vector<std::uint64_t>> changed;
  };

  std::uint64_t master_tag(std::uint64_t block) const noexcept;
  void build_vm(std::uint32_t vm);

  WorkloadSpec spec_;
  std::vector<VmState> vms_;
};

/// Expands a tag into one block of content.
void fill_block(std::uint64_t tag, std::span<std::uint8_t> out) noexcept;

}  // namespace revstore
