#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dshift {

/// 8-bit, 3-channel, row-major interleaved RGB image.
class RgbImage {
 public:
  RgbImage() = default;
  /// Throws DegenerateImage unless width, height >= 1 and
  /// data.size() == width * height * 3.
  RgbImage(std::size_t width, std::size_t height, std::vector<std::uint8_t> data);
  /// Image filled with a single colour.
  RgbImage(std::size_t width, std::size_t height, std::uint8_t r, std::uint8_t g, std::uint8_t b);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return width_ * height_; }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const noexcept {
    return data_[(y * width_ + x) * 3 + c];
  }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) noexcept {
    return data_[(y * width_ + x) * 3 + c];
  }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> data_;
};

RgbImage resize_nearest(const RgbImage& img, std::size_t width, std::size_t height);

/// PNG and JPEG decoding (by file signature) and PNG encoding.
RgbImage read_image(const std::filesystem::path& path);
void write_png(const RgbImage& img, const std::filesystem::path& path);

}  // namespace dshift
