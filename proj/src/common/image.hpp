#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace e2eve {

/// Axis-aligned rectangle in pixel coordinates.
struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const { return top + height; }
  int right() const { return left + width; }
  long area() const { return static_cast<long>(height) * width; }
  bool contains(const Rect& o) const {
    return o.top >= top && o.left >= left && o.bottom() <= bottom() && o.right() <= right();
  }
  bool operator==(const Rect&) const = default;
};

/// Planar float image, channels x height x width, values nominally in [0,1].
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  std::string id;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(static_cast<size_t>(c) * h * w, fill) {}

  size_t plane() const { return static_cast<size_t>(height) * width; }
  size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }

  float& at(int c, int y, int x) { return pixels[(static_cast<size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return pixels[(static_cast<size_t>(c) * height + y) * width + x]; }

  float* row(int c, int y) { return pixels.data() + (static_cast<size_t>(c) * height + y) * width; }
  const float* row(int c, int y) const { return pixels.data() + (static_cast<size_t>(c) * height + y) * width; }

  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool in_unit_range() const;
};

/// Binary H x W mask; nonzero means inside.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), bits(static_cast<size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x]; }
  long count() const;
  bool operator==(const Mask&) const = default;
};

Image crop(const Image& img, const Rect& r);

/// Area-averaging resize; exact box integration for both shrinking and enlarging.
Image resize_area(const Image& img, int out_h, int out_w);

/// Writes `patch` into `dst` at `r` (patch must be r.height x r.width).
void paste(Image& dst, const Image& patch, const Rect& r);

/// (1 - mask) * img, broadcast over channels.
Image apply_hole(const Image& img, const Mask& mask);

/// Quantize to the 8-bit grid, i.e. what a PNG round trip produces.
Image quantize_8bit(const Image& img);

// PNG codec (8-bit). Gray PNGs load as 1 channel unless `force_rgb`.
Image read_png(const std::filesystem::path& path, bool force_rgb = true);
Image decode_png(std::span<const std::uint8_t> bytes, bool force_rgb = true);
void write_png(const std::filesystem::path& path, const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);

Mask read_mask_png(const std::filesystem::path& path);
Mask decode_mask_png(std::span<const std::uint8_t> bytes);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
std::vector<std::uint8_t> encode_mask_png(const Mask& mask);

}  // namespace e2eve
