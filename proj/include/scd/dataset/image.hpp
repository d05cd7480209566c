#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scd/alignment/pointmap.hpp"

namespace scd {

// RGB image, channel-major (3 x H x W), values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), data(3 * h * w, 0.f) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
};

// Decodes any PNG libpng understands (palette, gray, alpha and 16-bit are
// reduced to 8-bit RGB). Throws LoadError.
Image read_png(const std::filesystem::path& path);
// 8-bit RGB; values are clamped to [0, 1] and rounded to k/255.
void write_png(const std::filesystem::path& path, const Image& image);

// Half-pixel-centred bilinear resampling. Same-size input is copied exactly.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

// Nearest-neighbour resampling of points and mask; never blends points.
// Same-size input is copied exactly.
PointMap resize_nearest(const PointMap& pm, std::size_t height, std::size_t width);

// Interleaved 8-bit RGB, H*W*3.
std::vector<std::uint8_t> to_rgb8(const Image& image);

}  // namespace scd
