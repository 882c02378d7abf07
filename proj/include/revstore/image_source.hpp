#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "revstore/chunking.hpp"

namespace revstore {

/// Random-access, thread-safe view over a disk image.
class ImageSource {
 public:
  virtual ~ImageSource() = default;

  virtual std::uint64_t size() const = 0;

  // Reads out.size() bytes at offset; the range must lie inside the image.
  virtual void read(std::uint64_t offset, std::span<std::uint8_t> out) const = 0;
};

/// Fills `out` (segment_size bytes) with segment `index`, zero-padding past the end.
void read_segment(const ImageSource& image, std::uint64_t index, const ChunkParams& params,
                  std::span<std::uint8_t> out);

class FileImageSource final : public ImageSource {
 public:
  explicit FileImageSource(const std::filesystem::path& path);
  ~FileImageSource() override;
  FileImageSource(const FileImageSource&) = delete;
  FileImageSource& operator=(const FileImageSource&) = delete;

  std::uint64_t size() const override { return size_; }
  void read(std::uint64_t offset, std::span<std::uint8_t> out) const override;

 private:
  int fd_ = -1;
  std::uint64_t size_ = 0;
};

class MemoryImageSource final : public ImageSource {
 public:
  explicit MemoryImageSource(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t size() const override { return bytes_.size(); }
  void read(std::uint64_t offset, std::span<std::uint8_t> out) const override;

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

}  // namespace revstore
