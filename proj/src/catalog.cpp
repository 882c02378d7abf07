#include "revstore/catalog.hpp"

#include <algorithm>
#include <sstream>

#include "revstore/error.hpp"
#include "revstore/file_io.hpp"

namespace revstore {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kCatalogHeader = "revstore-catalog 1";

}  // namespace

bool Catalog::valid_vm_id(std::string_view id) noexcept {
  if (id.empty() || id.size() > 64 || id.front() == '.') return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

Catalog::Catalog(fs::path root, std::optional<StoreConfig> create, bool sync)
    : root_(std::move(root)), sync_(sync) {
  const fs::path file = root_ / "catalog";
  if (!fs::exists(file)) {
    if (!create) throw Error(Errc::not_found, "no store at " + root_.string());
    create->params.validate();
    config_ = *create;
    fs::create_directories(root_ / "vms");
    save();
    return;
  }

  const auto bytes = read_file(file);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  if (!std::getline(in, line) || line != kCatalogHeader) {
    throw Error(Errc::corruption, "catalog: unrecognized header");
  }
  bool have_segment = false, have_block = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "segment_size") {
      have_segment = static_cast<bool>(ls >> config_.params.segment_size);
    } else if (key == "block_size") {
      have_block = static_cast<bool>(ls >> config_.params.block_size);
    } else if (key == "reverse_dedup") {
      int v = 1;
      ls >> v;
      config_.reverse_dedup = v != 0;
    } else if (key == "epoch") {
      ls >> epoch_;
    } else if (key == "vm") {
      std::string id;
      std::uint64_t n = 0;
      if (!(ls >> id >> n) || !valid_vm_id(id)) throw Error(Errc::corruption, "catalog: bad vm line");
      latest_[id] = n;
    } else {
      throw Error(Errc::corruption, "catalog: unknown key " + key);
    }
  }
  if (!have_segment || !have_block) throw Error(Errc::corruption, "catalog: missing chunk params");
  config_.params.validate();
  if (create && !(*create == config_)) {
    throw Error(Errc::invalid_argument,
                "store was created with segment size " + std::to_string(config_.params.segment_size) +
                    ", block size " + std::to_string(config_.params.block_size) +
                    ", reverse dedup " + (config_.reverse_dedup ? "on" : "off") +
                    "; the requested configuration differs");
  }
}

void Catalog::save() const {
  std::ostringstream out;
  out << kCatalogHeader << '\n'
      << "segment_size " << config_.params.segment_size << '\n'
      << "block_size " << config_.params.block_size << '\n'
      << "reverse_dedup " << (config_.reverse_dedup ? 1 : 0) << '\n'
      << "epoch " << epoch_ << '\n';
  for (const auto& [id, n] : latest_) out << "vm " << id << ' ' << n << '\n';
  const std::string text = out.str();
  write_file_atomic(root_ / "catalog",
                    std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()),
                    sync_);
}

std::optional<std::uint64_t> Catalog::latest(const std::string& vm) const {
  std::lock_guard lock(mutex_);
  auto it = latest_.find(vm);
  if (it == latest_.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, std::uint64_t> Catalog::vms() const {
  std::lock_guard lock(mutex_);
  return latest_;
}

std::uint64_t Catalog::next_epoch() {
  std::lock_guard lock(mutex_);
  return ++epoch_;
}

fs::path Catalog::recipe_path(const std::string& vm, std::uint64_t version_no) const {
  return root_ / "vms" / vm / (std::to_string(version_no) + ".recipe");
}

fs::path Catalog::pointer_path(const std::string& vm, std::uint64_t version_no) const {
  return root_ / "vms" / vm / (std::to_string(version_no) + ".ptr");
}

fs::path Catalog::staged_pointer_path(const std::string& vm, std::uint64_t version_no) const {
  return root_ / "vms" / vm / (std::to_string(version_no) + ".ptr.next");
}

VersionRecipe Catalog::load(const std::string& vm, std::uint64_t version_no) const {
  auto head = latest(vm);
  if (!head || version_no == 0 || version_no > *head) {
    throw Error(Errc::not_found, "no version " + std::to_string(version_no) + " of vm " + vm);
  }
  VersionRecipe r;
  r.vm_id = vm;
  decode_recipe(read_file(recipe_path(vm, version_no)), r);
  if (r.version_no != version_no) throw Error(Errc::corruption, "recipe version number mismatch");
  r.pointers = load_pointers(vm, version_no);
  return r;
}

std::vector<BlockPointer> Catalog::load_pointers(const std::string& vm,
                                                 std::uint64_t version_no) const {
  return decode_pointers(read_file(pointer_path(vm, version_no)), version_no);
}

void Catalog::write_version(const VersionRecipe& recipe) const {
  fs::create_directories(root_ / "vms" / recipe.vm_id);
  write_file_atomic(recipe_path(recipe.vm_id, recipe.version_no), encode_recipe(recipe), sync_);
  write_file_atomic(pointer_path(recipe.vm_id, recipe.version_no),
                    encode_pointers(recipe.version_no, recipe.pointers), sync_);
}

void Catalog::rewrite_pointers(const std::string& vm, std::uint64_t version_no,
                               std::span<const BlockPointer> pointers) const {
  write_file_atomic(pointer_path(vm, version_no), encode_pointers(version_no, pointers), sync_);
}

void Catalog::stage_pointers(const std::string& vm, std::uint64_t version_no,
                            std::span<const BlockPointer> pointers) const {
  write_file_atomic(staged_pointer_path(vm, version_no), encode_pointers(version_no, pointers),
                    sync_);
}

void Catalog::publish_staged(const std::string& vm, std::uint64_t version_no) const {
  fs::rename(staged_pointer_path(vm, version_no), pointer_path(vm, version_no));
  if (sync_) fsync_dir(root_ / "vms" / vm);
}

void Catalog::discard_version(const std::string& vm, std::uint64_t version_no) const {
  std::error_code ec;
  fs::remove(recipe_path(vm, version_no), ec);
  fs::remove(pointer_path(vm, version_no), ec);
  if (version_no > 1) fs::remove(staged_pointer_path(vm, version_no - 1), ec);
  if (sync_) fsync_dir(root_ / "vms" / vm);
}

bool Catalog::recover() {
  const fs::path dir = root_ / "vms";
  if (!fs::exists(dir)) return false;
  bool discarded = false;
  for (const auto& d : fs::directory_iterator(dir)) {
    if (!d.is_directory()) continue;
    const std::string vm = d.path().filename().string();
    if (!valid_vm_id(vm)) continue;
    const std::uint64_t head = latest(vm).value_or(0);
    std::vector<fs::path> doomed;
    for (const auto& e : fs::directory_iterator(d.path())) {
      const std::string name = e.path().filename().string();
      std::size_t used = 0;
      std::uint64_t n = 0;
      try {
        n = std::stoull(name, &used);
      } catch (const std::exception&) {
        continue;
      }
      const std::string rest = name.substr(used);
      if (rest == ".ptr.next") {
        if (n + 1 == head) {
          publish_staged(vm, n);
        } else if (n >= head) {
          doomed.push_back(e.path());
        }
      } else if ((rest == ".recipe" || rest == ".ptr") && n > head) {
        doomed.push_back(e.path());
      }
    }
    for (const auto& p : doomed) fs::remove(p);
    if (!doomed.empty()) {
      discarded = true;
      if (sync_) fsync_dir(d.path());
    }
  }
  return discarded;
}

void Catalog::commit(const std::string& vm, std::uint64_t version_no) {
  std::lock_guard lock(mutex_);
  latest_[vm] = version_no;
  save();
}

std::vector<fs::path> Catalog::orphan_files() const {
  std::vector<fs::path> out;
  const fs::path dir = root_ / "vms";
  if (!fs::exists(dir)) return out;
  const auto heads = vms();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path& p = e.path();
    const std::string vm = p.parent_path().filename().string();
    const std::string ext = p.extension().string();
    bool known = false;
    auto it = heads.find(vm);
    if (it != heads.end() && p.parent_path().parent_path() == dir && (ext == ".recipe" || ext == ".ptr")) {
      const std::string stem = p.stem().string();
      try {
        std::size_t used = 0;
        const auto n = std::stoull(stem, &used);
        known = used == stem.size() && n >= 1 && n <= it->second;
      } catch (const std::exception&) {
      }
    }
    if (!known) out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace revstore
