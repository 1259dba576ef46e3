#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadfit {

/// Row-major interleaved image, origin at the top-left.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c = 1, T fill = T{}) : width(w), height(h), channels(c) {
    if (w < 0 || h < 0 || c < 1) throw std::invalid_argument("Image: bad dimensions");
    data.assign(static_cast<std::size_t>(w) * h * c, fill);
  }

  T& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  const T& at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_size(int w, int h) const { return width == w && height == h; }
  bool operator==(const Image&) const = default;
};

using Mask = Image<std::uint8_t>;      // 0 or 1
using DepthMap = Image<float>;         // camera-space z, +inf for background
using RgbImage = Image<std::uint8_t>;  // 3 channels

/// 8-bit grayscale, 0/255.
void write_mask_png(const Mask& mask, const std::string& path);
/// Any PNG; a pixel is foreground when its luminance is >= 128.
Mask read_mask_png(const std::string& path);

void write_rgb_png(const RgbImage& image, const std::string& path);
/// Any PNG, converted to 8-bit RGB.
RgbImage read_rgb_png(const std::string& path);

/// Single-channel little-endian PFM. Rows are stored bottom to top as the
/// format requires; +inf is written as 3.4e38 and read back as +inf.
void write_depth_pfm(const DepthMap& depth, const std::string& path);
DepthMap read_depth_pfm(const std::string& path);

inline constexpr float kPfmInfinity = 3.4e38f;

/// Masked pixels from the foreground, the rest from the background.
/// Throws std::invalid_argument on any size mismatch.
RgbImage composite_background(const RgbImage& foreground, const Mask& mask, const RgbImage& background);

}  // namespace quadfit
