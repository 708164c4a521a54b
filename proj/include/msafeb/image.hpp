#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace msafeb {

/// 8-bit RGB image, row-major with interleaved channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

/// Binary PPM ("P6", maxval 255). Comments in the header are skipped.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

/// Bilinear resampling with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& src, std::size_t width, std::size_t height);
Image crop(const Image& src, std::size_t x0, std::size_t y0, std::size_t width, std::size_t height);
Image flip_horizontal(const Image& src);
/// Luma (BT.601 weights), one value per pixel.
std::vector<float> to_gray(const Image& src);

}  // namespace msafeb
