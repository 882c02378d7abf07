#include "revstore/file_io.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <system_error>

#include "revstore/error.hpp"

namespace revstore {

namespace fs = std::filesystem;

Fd::Fd(const fs::path& path, int flags, unsigned mode) {
  fd_ = ::open(path.c_str(), flags | O_CLOEXEC, static_cast<mode_t>(mode));
  if (fd_ < 0) throw_errno("open " + path.string());
}

Fd::~Fd() {
  if (fd_ >= 0) ::close(fd_);
}

void pwrite_all(int fd, const std::uint8_t* data, std::size_t len, std::uint64_t offset) {
  while (len > 0) {
    const ssize_t n = ::pwrite(fd, data, len, static_cast<off_t>(offset));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write");
    }
    data += n;
    len -= static_cast<std::size_t>(n);
    offset += static_cast<std::uint64_t>(n);
  }
}

void pread_all(int fd, std::uint8_t* data, std::size_t len, std::uint64_t offset) {
  while (len > 0) {
    const ssize_t n = ::pread(fd, data, len, static_cast<off_t>(offset));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("read");
    }
    if (n == 0) throw Error(Errc::corruption, "file is shorter than its metadata says");
    data += n;
    len -= static_cast<std::size_t>(n);
    offset += static_cast<std::uint64_t>(n);
  }
}

void fsync_fd(int fd) {
  if (::fsync(fd) != 0) throw_errno("fsync");
}

void fsync_dir(const fs::path& dir) {
  Fd d(dir, O_RDONLY | O_DIRECTORY);
  fsync_fd(d.get());
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  Fd f(path, O_RDONLY);
  struct stat st {};
  if (::fstat(f.get(), &st) != 0) throw_errno("stat " + path.string());
  std::vector<std::uint8_t> out(static_cast<std::size_t>(st.st_size));
  pread_all(f.get(), out.data(), out.size(), 0);
  return out;
}

fs::path temp_name(const fs::path& target) {
  static std::atomic<std::uint64_t> counter{0};
  return fs::path(target.string() + ".tmp." + std::to_string(::getpid()) + "." +
                  std::to_string(counter.fetch_add(1)));
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes, bool sync) {
  const fs::path tmp = temp_name(path);
  try {
    Fd f(tmp, O_WRONLY | O_CREAT | O_TRUNC);
    pwrite_all(f.get(), bytes.data(), bytes.size(), 0);
    if (sync) fsync_fd(f.get());
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  fs::rename(tmp, path);
  if (sync) fsync_dir(path.parent_path());
}

}  // namespace revstore
