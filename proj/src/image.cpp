#include "dshift/image.hpp"

#include "dshift/error.hpp"

namespace dshift {

RgbImage::RgbImage(std::size_t width, std::size_t height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width_ == 0 || height_ == 0) {
    throw Error(ErrorKind::DegenerateImage, "image width and height must be at least 1");
  }
  if (data_.size() != width_ * height_ * 3) {
    throw Error(ErrorKind::DegenerateImage, "pixel buffer size does not match width*height*3");
  }
}

RgbImage::RgbImage(std::size_t width, std::size_t height, std::uint8_t r, std::uint8_t g,
                   std::uint8_t b)
    : RgbImage(width, height, std::vector<std::uint8_t>(width * height * 3)) {
  for (std::size_t i = 0; i < pixel_count(); ++i) {
    data_[3 * i] = r;
    data_[3 * i + 1] = g;
    data_[3 * i + 2] = b;
  }
}

RgbImage resize_nearest(const RgbImage& img, std::size_t width, std::size_t height) {
  if (width == img.width() && height == img.height()) return img;
  std::vector<std::uint8_t> out(width * height * 3);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = y * img.height() / height;
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = x * img.width() / width;
      for (std::size_t c = 0; c < 3; ++c) out[(y * width + x) * 3 + c] = img.at(sx, sy, c);
    }
  }
  return RgbImage(width, height, std::move(out));
}

}  // namespace dshift
