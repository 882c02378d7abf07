#include "revstore/image_source.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>

#include "revstore/error.hpp"

namespace revstore {

void read_segment(const ImageSource& image, std::uint64_t index, const ChunkParams& params,
                  std::span<std::uint8_t> out) {
  const std::uint64_t begin = index * params.segment_size;
  if (out.size() != params.segment_size || begin >= image.size()) {
    throw Error(Errc::invalid_argument, "segment index out of range");
  }
  const std::uint64_t len = std::min<std::uint64_t>(params.segment_size, image.size() - begin);
  image.read(begin, out.first(len));
  if (len < out.size()) {
    std::memset(out.data() + len, 0, out.size() - len);
  }
}

FileImageSource::FileImageSource(const std::filesystem::path& path) {
  fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd_ < 0) throw_errno("open " + path.string());
  struct stat st {};
  if (::fstat(fd_, &st) != 0) {
    ::close(fd_);
    throw_errno("stat " + path.string());
  }
  size_ = static_cast<std::uint64_t>(st.st_size);
}

FileImageSource::~FileImageSource() {
  if (fd_ >= 0) ::close(fd_);
}

void FileImageSource::read(std::uint64_t offset, std::span<std::uint8_t> out) const {
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::pread(fd_, out.data() + done, out.size() - done,
                              static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("read image");
    }
    if (n == 0) throw Error(Errc::io, "image shrank while reading");
    done += static_cast<std::size_t>(n);
  }
}

void MemoryImageSource::read(std::uint64_t offset, std::span<std::uint8_t> out) const {
  if (offset + out.size() > bytes_.size()) {
    throw Error(Errc::invalid_argument, "read past end of image");
  }
  std::memcpy(out.data(), bytes_.data() + offset, out.size());
}

}  // namespace revstore
