#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace revstore {

/// Owning file descriptor; throws Error(io) when open fails.
class Fd {
 public:
  Fd(const std::filesystem::path& path, int flags, unsigned mode = 0644);
  ~Fd();
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const noexcept { return fd_; }

 private:
  int fd_ = -1;
};

void pwrite_all(int fd, const std::uint8_t* data, std::size_t len, std::uint64_t offset);
// A short read is reported as corruption: callers only read ranges that must exist.
void pread_all(int fd, std::uint8_t* data, std::size_t len, std::uint64_t offset);
void fsync_fd(int fd);
void fsync_dir(const std::filesystem::path& dir);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Unique sibling name for write-then-rename.
std::filesystem::path temp_name(const std::filesystem::path& target);

/// Writes to a temp sibling and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes,
                       bool sync);

}  // namespace revstore
