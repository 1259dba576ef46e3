#include "quadfit/image.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "quadfit/error.hpp"

namespace quadfit {

namespace {

std::vector<std::uint8_t> read_png(const std::string& path, std::uint32_t format, int& width, int& height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    const std::string msg = img.message;
    png_image_free(&img);
    // libpng reports missing files and corrupt data alike; tell them apart.
    if (!std::ifstream(path)) throw IoError("cannot open " + path);
    throw ParseError(path + ": " + msg);
  }
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ParseError(path + ": " + msg);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return buf;
}

void write_png(const std::string& path, const std::uint8_t* data, int width, int height, std::uint32_t format) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write " + path + ": " + msg);
  }
}

float swap_bytes(float v) {
  auto u = std::bit_cast<std::uint32_t>(v);
  u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
  return std::bit_cast<float>(u);
}

}  // namespace

void write_mask_png(const Mask& mask, const std::string& path) {
  if (mask.channels != 1) throw std::invalid_argument("write_mask_png: mask must have one channel");
  std::vector<std::uint8_t> out(mask.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.data[i] ? 255 : 0;
  write_png(path, out.data(), mask.width, mask.height, PNG_FORMAT_GRAY);
}

Mask read_mask_png(const std::string& path) {
  int w = 0, h = 0;
  const auto buf = read_png(path, PNG_FORMAT_GRAY, w, h);
  Mask m(w, h);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = buf[i] >= 128 ? 1 : 0;
  return m;
}

void write_rgb_png(const RgbImage& image, const std::string& path) {
  if (image.channels != 3) throw std::invalid_argument("write_rgb_png: image must have three channels");
  write_png(path, image.data.data(), image.width, image.height, PNG_FORMAT_RGB);
}

RgbImage read_rgb_png(const std::string& path) {
  int w = 0, h = 0;
  auto buf = read_png(path, PNG_FORMAT_RGB, w, h);
  RgbImage img(w, h, 3);
  img.data = std::move(buf);
  return img;
}

void write_depth_pfm(const DepthMap& depth, const std::string& path) {
  if (depth.channels != 1) throw std::invalid_argument("write_depth_pfm: depth must have one channel");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "Pf\n" << depth.width << ' ' << depth.height << "\n-1.0\n";
  std::vector<float> row(depth.width);
  for (int y = depth.height - 1; y >= 0; --y) {
    for (int x = 0; x < depth.width; ++x) {
      const float v = depth.at(x, y);
      row[x] = std::isinf(v) && v > 0 ? kPfmInfinity : v;
    }
    if constexpr (std::endian::native == std::endian::big)
      for (auto& v : row) v = swap_bytes(v);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!os) throw IoError("failed writing " + path);
}

DepthMap read_depth_pfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  is >> magic >> w >> h >> scale;
  if (!is || magic != "Pf" || w <= 0 || h <= 0 || scale == 0.0) throw ParseError(path + ": bad PFM header");
  is.get();  // single whitespace before the raster
  const bool little = scale < 0.0;
  DepthMap d(w, h);
  std::vector<float> row(w);
  for (int y = h - 1; y >= 0; --y) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!is) throw ParseError(path + ": truncated PFM raster");
    const bool swap = little != (std::endian::native == std::endian::little);
    for (int x = 0; x < w; ++x) {
      float v = row[x];
      if (swap) v = swap_bytes(v);
      d.at(x, y) = v >= kPfmInfinity ? std::numeric_limits<float>::infinity() : v;
    }
  }
  return d;
}

RgbImage composite_background(const RgbImage& fg, const Mask& mask, const RgbImage& bg) {
  if (fg.channels != 3 || bg.channels != 3 || mask.channels != 1)
    throw std::invalid_argument("composite_background: expected RGB images and a single-channel mask");
  if (!fg.same_size(mask.width, mask.height) || !bg.same_size(mask.width, mask.height))
    throw std::invalid_argument("composite_background: size mismatch");
  RgbImage out = bg;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y))
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = fg.at(x, y, c);
  return out;
}

}  // namespace quadfit
