#include "revstore/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "revstore/endian.hpp"
#include "revstore/error.hpp"

namespace revstore {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <typename... Ts>
std::uint64_t hash_of(std::uint64_t seed, Ts... values) noexcept {
  std::uint64_t h = mix64(seed + kGolden);
  ((h = mix64(h ^ (static_cast<std::uint64_t>(values) + kGolden))), ...);
  return h;
}

std::uint64_t nonzero(std::uint64_t t) noexcept { return t == 0 ? 1 : t; }

double unit_interval(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

// Domain separators for the tag families.
enum : std::uint64_t { kNullRun = 1, kMaster, kHot, kFresh, kUnique };

}  // namespace

void fill_block(std::uint64_t tag, std::span<std::uint8_t> out) noexcept {
  if (tag == 0) {
    std::memset(out.data(), 0, out.size());
    return;
  }
  // Four interleaved 64-bit LCGs with an xorshift output step: cheap, and
  // distinct tags give unrelated blocks.
  std::uint64_t lane[4];
  lane[0] = mix64(tag);
  for (int k = 1; k < 4; ++k) lane[k] = mix64(lane[k - 1]);
  std::size_t i = 0;
  for (; i + 32 <= out.size(); i += 32) {
    for (int k = 0; k < 4; ++k) {
      lane[k] = lane[k] * 6364136223846793005ull + 1442695040888963407ull;
      const std::uint64_t v = lane[k] ^ (lane[k] >> 33);
      std::memcpy(out.data() + i + 8 * k, &v, 8);
    }
  }
  for (int k = 0; i < out.size(); ++k) {
    const std::uint64_t v = mix64(lane[k % 4] + static_cast<std::uint64_t>(k));
    const std::size_t n = std::min<std::size_t>(8, out.size() - i);
    std::memcpy(out.data() + i, &v, n);
    i += n;
  }
}

std::uint64_t WorkloadSpec::block_count() const noexcept {
  return (image_size + kWorkloadBlockSize - 1) / kWorkloadBlockSize;
}

void WorkloadSpec::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::invalid_argument, "workload: " + what); };
  if (vm_count == 0) bad("vm_count must be positive");
  if (versions == 0) bad("versions must be positive");
  if (change_unit == 0 || change_unit % kWorkloadBlockSize != 0) {
    bad("change_unit must be a positive multiple of 4096");
  }
  if (image_size < change_unit) bad("image_size must hold at least one change unit");
  if (null_run == 0 || null_run % kWorkloadBlockSize != 0) bad("null_run must be a multiple of 4096");
  if (change_stride < change_unit || change_stride % change_unit != 0) {
    bad("change_stride must be a multiple of change_unit");
  }
  if (hot_alignment == 0 || hot_alignment % change_unit != 0) {
    bad("hot_alignment must be a multiple of change_unit");
  }
  auto fraction = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) bad(std::string(name) + " must lie in [0, 1]");
  };
  fraction(null_fraction, "null_fraction");
  fraction(change_fraction, "change_fraction");
  fraction(change_jitter, "change_jitter");
  fraction(revert_fraction, "revert_fraction");
  fraction(duplicate_fraction, "duplicate_fraction");
  if (!(hot_fraction > 0.0 && hot_fraction <= 1.0)) bad("hot_fraction must lie in (0, 1]");
  if (!(spike_factor >= 0.0)) bad("spike_factor must be non-negative");
  if (revert_fraction + duplicate_fraction > 1.0) bad("revert_fraction + duplicate_fraction exceeds 1");
}

Workload::Workload(WorkloadSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  vms_.resize(spec_.vm_count);
  if (!spec_.unique_data) {
    for (std::uint32_t vm = 0; vm < spec_.vm_count; ++vm) build_vm(vm);
  }
}

std::uint64_t Workload::master_tag(std::uint64_t block) const noexcept {
  const std::uint64_t run = block * kWorkloadBlockSize / spec_.null_run;
  if (unit_interval(hash_of(spec_.seed, kNullRun, run)) < spec_.null_fraction) return 0;
  return nonzero(hash_of(spec_.seed, kMaster, block));
}

void Workload::build_vm(std::uint32_t vm) {
  VmState& st = vms_[vm];
  const std::uint64_t unit_blocks = spec_.change_unit / kWorkloadBlockSize;
  const std::uint64_t total_units = spec_.image_size / spec_.change_unit;
  const auto wanted = static_cast<std::uint64_t>(
      std::ceil(spec_.hot_fraction * static_cast<double>(spec_.image_size) /
                static_cast<double>(spec_.change_unit)));
  const std::uint64_t hot_units = std::clamp<std::uint64_t>(wanted, 1, total_units);
  const std::uint64_t hot_bytes = hot_units * spec_.change_unit;

  std::mt19937_64 rng(hash_of(spec_.seed, vm));
  std::uint64_t align = spec_.hot_alignment;
  // Small images have no room to move the region on a coarse boundary.
  if (spec_.image_size - hot_bytes < align) align = spec_.change_unit;
  const std::uint64_t positions = (spec_.image_size - hot_bytes) / align + 1;
  const std::uint64_t start = std::uniform_int_distribution<std::uint64_t>(0, positions - 1)(rng) * align;
  st.hot_first_block = start / kWorkloadBlockSize;
  st.hot_blocks = hot_units * unit_blocks;

  st.hot_tags.assign(spec_.versions, {});
  st.changed.assign(spec_.versions, {});
  auto& first = st.hot_tags[0];
  first.resize(st.hot_blocks);
  for (std::uint64_t i = 0; i < st.hot_blocks; ++i) {
    const std::uint64_t b = st.hot_first_block + i;
    first[i] = master_tag(b) == 0 ? 0 : nonzero(hash_of(spec_.seed, kHot, vm, b));
  }

  std::vector<bool> unit_null(hot_units);
  for (std::uint64_t u = 0; u < hot_units; ++u) {
    unit_null[u] = std::all_of(first.begin() + static_cast<std::ptrdiff_t>(u * unit_blocks),
                               first.begin() + static_cast<std::ptrdiff_t>((u + 1) * unit_blocks),
                               [](std::uint64_t t) { return t == 0; });
  }

  std::vector<std::uint64_t> data_units;
  for (std::uint64_t u = 0; u < hot_units; ++u) {
    if (!unit_null[u]) data_units.push_back(u);
  }

  const std::uint64_t stride_units = std::min(spec_.change_stride / spec_.change_unit, hot_units);
  const std::uint64_t strata = (hot_units + stride_units - 1) / stride_units;
  const double base = spec_.change_fraction * static_cast<double>(spec_.image_size) /
                      static_cast<double>(spec_.change_unit);

  for (std::uint32_t v = 2; v <= spec_.versions; ++v) {
    std::uniform_real_distribution<double> jitter(1.0 - spec_.change_jitter, 1.0 + spec_.change_jitter);
    double factor = jitter(rng);
    if (v == spec_.spike_version) factor *= spec_.spike_factor;
    auto n = static_cast<std::uint64_t>(std::llround(base * factor));

    // Spread n units over the strata, then pick non-adjacent units holding
    // data inside each stratum. The last unit of a stratum is left out
    // (except in the final one) so neighbours never touch across a boundary.
    std::vector<std::uint64_t> units;
    const std::uint64_t rotate = rng() % strata;
    for (std::uint64_t s = 0; s < strata; ++s) {
      const std::uint64_t lo = s * stride_units;
      const std::uint64_t hi = std::min(hot_units, lo + stride_units);
      const std::uint64_t end = hi - (s + 1 < strata && hi - lo > 1 ? 1 : 0);
      const std::uint64_t k = n / strata + (((s + strata - rotate) % strata) < n % strata ? 1 : 0);
      std::vector<std::uint64_t> pool;
      for (std::uint64_t u = lo; u < end; ++u) {
        if (!unit_null[u]) pool.push_back(u);
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      std::vector<std::uint64_t> picked;
      for (std::uint64_t u : pool) {
        if (picked.size() == k) break;
        const bool touches = std::any_of(picked.begin(), picked.end(), [u](std::uint64_t p) {
          return p + 1 == u || u + 1 == p;
        });
        if (!touches) picked.push_back(u);
      }
      std::sort(picked.begin(), picked.end());
      units.insert(units.end(), picked.begin(), picked.end());
    }

    // Changes rewrite data in place: null blocks stay null.
    const auto& prev = st.hot_tags[v - 2];
    auto curr = prev;
    for (std::uint64_t u : units) {
      const double pick = unit_interval(rng());
      const std::uint64_t off = u * unit_blocks;
      const std::vector<std::uint64_t>* source = nullptr;
      std::uint64_t source_off = off;
      if (pick < spec_.revert_fraction && v >= 3) {
        source = &st.hot_tags[v - 3];
      } else if (pick < spec_.revert_fraction + spec_.duplicate_fraction && data_units.size() > 1) {
        // Another unit holding data; u itself is one of them.
        std::uint64_t other = data_units[rng() % (data_units.size() - 1)];
        if (other == u) other = data_units.back();
        source = &prev;
        source_off = other * unit_blocks;
      }
      for (std::uint64_t i = 0; i < unit_blocks; ++i) {
        if (prev[off + i] == 0) continue;
        const std::uint64_t copied = source ? (*source)[source_off + i] : 0;
        curr[off + i] = copied != 0 ? copied
                                    : nonzero(hash_of(spec_.seed, kFresh, vm, v, st.hot_first_block + off + i));
      }
    }
    st.changed[v - 1] = std::move(units);
    st.hot_tags[v - 1] = std::move(curr);
  }
}

std::uint64_t Workload::tag(std::uint32_t vm, std::uint32_t version, std::uint64_t block) const {
  if (vm >= spec_.vm_count || version == 0 || version > spec_.versions || block >= spec_.block_count()) {
    throw Error(Errc::invalid_argument, "workload: block out of range");
  }
  if (spec_.unique_data) return nonzero(hash_of(spec_.seed, kUnique, vm, version, block));
  const VmState& st = vms_[vm];
  if (block >= st.hot_first_block && block < st.hot_first_block + st.hot_blocks) {
    return st.hot_tags[version - 1][block - st.hot_first_block];
  }
  return master_tag(block);
}

void Workload::read(std::uint32_t vm, std::uint32_t version, std::uint64_t offset,
                    std::span<std::uint8_t> out) const {
  if (offset + out.size() > spec_.image_size) {
    throw Error(Errc::invalid_argument, "workload: read past end of image");
  }
  std::uint8_t scratch[kWorkloadBlockSize];
  std::size_t done = 0;
  while (done < out.size()) {
    const std::uint64_t pos = offset + done;
    const std::uint64_t block = pos / kWorkloadBlockSize;
    const std::size_t in_block = pos % kWorkloadBlockSize;
    const std::size_t n = std::min<std::size_t>(kWorkloadBlockSize - in_block, out.size() - done);
    const std::uint64_t t = tag(vm, version, block);
    if (in_block == 0 && n == kWorkloadBlockSize) {
      fill_block(t, out.subspan(done, n));
    } else {
      fill_block(t, scratch);
      std::memcpy(out.data() + done, scratch + in_block, n);
    }
    done += n;
  }
}

namespace {

class WorkloadImage final : public ImageSource {
 public:
  WorkloadImage(const Workload& w, std::uint32_t vm, std::uint32_t version)
      : w_(w), vm_(vm), version_(version) {}
  std::uint64_t size() const override { return w_.spec().image_size; }
  void read(std::uint64_t offset, std::span<std::uint8_t> out) const override {
    w_.read(vm_, version_, offset, out);
  }

 private:
  const Workload& w_;
  std::uint32_t vm_;
  std::uint32_t version_;
};

}  // namespace

std::unique_ptr<ImageSource> Workload::image(std::uint32_t vm, std::uint32_t version) const {
  if (vm >= spec_.vm_count || version == 0 || version > spec_.versions) {
    throw Error(Errc::invalid_argument, "workload: no such image");
  }
  return std::make_unique<WorkloadImage>(*this, vm, version);
}

const std::vector<std::uint64_t>& Workload::changed_units(std::uint32_t vm, std::uint32_t version) const {
  static const std::vector<std::uint64_t> none;
  if (spec_.unique_data || version < 2) return none;
  return vms_.at(vm).changed.at(version - 1);
}

std::uint64_t Workload::hot_begin(std::uint32_t vm) const {
  return vms_.at(vm).hot_first_block * kWorkloadBlockSize;
}

std::uint64_t Workload::hot_end(std::uint32_t vm) const {
  const auto& st = vms_.at(vm);
  return (st.hot_first_block + st.hot_blocks) * kWorkloadBlockSize;
}

}  // namespace revstore
