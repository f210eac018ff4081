// SPDX-License-Identifier: Apache-2.0

#include "steve/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace steve {

namespace {

[[noreturn]] void png_fail(const std::string& path, const png_image& image) {
  throw std::runtime_error("png: " + path + ": " + image.message);
}

}  // namespace

Tensor<float> read_png_rgb(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) png_fail(path, image);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    png_fail(path, image);
  }
  const int h = static_cast<int>(image.height);
  const int w = static_cast<int>(image.width);
  Tensor<float> out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out[(static_cast<std::int64_t>(c) * h + y) * w + x] =
            static_cast<float>(buf[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
  return out;
}

void write_png_rgb(const std::string& path, const Tensor<float>& img) {
  check(img.rank() == 3 && img.dim(0) == 3, "write_png_rgb: expected [3,H,W]");
  const int h = img.dim(1), w = img.dim(2);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = img[(static_cast<std::int64_t>(c) * h + y) * w + x];
        const float q = std::clamp(v, 0.0f, 1.0f) * 255.0f;
        buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(q));
      }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    png_fail(path, image);
}

Tensor<std::uint8_t> read_png_gray(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) png_fail(path, image);
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    png_fail(path, image);
  }
  const int h = static_cast<int>(image.height);
  const int w = static_cast<int>(image.width);
  Tensor<std::uint8_t> out({h, w});
  std::copy(buf.begin(), buf.end(), out.data());
  return out;
}

void write_png_gray(const std::string& path, const Tensor<std::uint8_t>& img) {
  check(img.rank() == 2, "write_png_gray: expected [H,W]");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.dim(1));
  image.height = static_cast<png_uint_32>(img.dim(0));
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data(), 0, nullptr))
    png_fail(path, image);
}

}  // namespace steve
