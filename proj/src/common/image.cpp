#include "common/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "common/error.hpp"

namespace e2eve {

bool Image::in_unit_range() const {
  return std::all_of(pixels.begin(), pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

long Mask::count() const {
  return static_cast<long>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Image crop(const Image& img, const Rect& r) {
  require(r.top >= 0 && r.left >= 0 && r.height > 0 && r.width > 0 && r.bottom() <= img.height &&
              r.right() <= img.width,
          ErrorCode::ShapeError, "crop rect outside image");
  Image out(img.channels, r.height, r.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < r.height; ++y)
      std::memcpy(out.row(c, y), img.row(c, r.top + y) + r.left, sizeof(float) * r.width);
  out.id = img.id;
  return out;
}

namespace {

// weights[o] = list of (input index, weight) for box integration over [o*s, (o+1)*s).
std::vector<std::vector<std::pair<int, double>>> box_weights(int in, int out) {
  std::vector<std::vector<std::pair<int, double>>> w(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double a = o * scale;
    const double b = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(a)); i < std::min(in, static_cast<int>(std::ceil(b))); ++i) {
      const double overlap = std::min<double>(b, i + 1) - std::max<double>(a, i);
      if (overlap > 1e-12) w[o].emplace_back(i, overlap / scale);
    }
  }
  return w;
}

}  // namespace

Image resize_area(const Image& img, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0 && img.height > 0 && img.width > 0, ErrorCode::ShapeError,
          "resize to or from an empty image");
  if (out_h == img.height && out_w == img.width) return img;
  const auto wy = box_weights(img.height, out_h);
  const auto wx = box_weights(img.width, out_w);
  Image tmp(img.channels, img.height, out_w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (auto [i, w] : wx[x]) acc += w * img.at(c, y, i);
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
  Image out(img.channels, out_h, out_w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (auto [i, w] : wy[y]) acc += w * tmp.at(c, i, x);
        out.at(c, y, x) = std::clamp(static_cast<float>(acc), 0.0f, 1.0f);
      }
  out.id = img.id;
  return out;
}

void paste(Image& dst, const Image& patch, const Rect& r) {
  require(patch.height == r.height && patch.width == r.width && patch.channels == dst.channels,
          ErrorCode::ShapeError, "paste patch does not match rect");
  require(r.top >= 0 && r.left >= 0 && r.bottom() <= dst.height && r.right() <= dst.width,
          ErrorCode::ShapeError, "paste rect outside image");
  for (int c = 0; c < dst.channels; ++c)
    for (int y = 0; y < r.height; ++y)
      std::memcpy(dst.row(c, r.top + y) + r.left, patch.row(c, y), sizeof(float) * r.width);
}

Image apply_hole(const Image& img, const Mask& mask) {
  require(mask.height == img.height && mask.width == img.width, ErrorCode::MaskShapeMismatch,
          "mask does not match image size");
  Image out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (mask.at(y, x)) out.at(c, y, x) = 0.0f;
  return out;
}

static std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

Image quantize_8bit(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels) v = to_byte(v) / 255.0f;
  return out;
}

namespace {

Image from_interleaved(const std::vector<std::uint8_t>& buf, int channels, int h, int w) {
  Image out(channels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(c, y, x) = buf[(static_cast<size_t>(y) * w + x) * channels + c] / 255.0f;
  return out;
}

Image finish_read(png_image& pimg, const std::vector<std::uint8_t>& buf, bool force_rgb) {
  const int channels = (pimg.format == PNG_FORMAT_RGB) ? 3 : 1;
  Image out = from_interleaved(buf, channels, static_cast<int>(pimg.height), static_cast<int>(pimg.width));
  if (force_rgb && channels == 1) {
    Image rgb(3, out.height, out.width);
    for (int c = 0; c < 3; ++c)
      std::copy(out.pixels.begin(), out.pixels.end(), rgb.pixels.begin() + static_cast<long>(c * out.plane()));
    return rgb;
  }
  return out;
}

// Gray files decode as gray (expanded later when RGB is requested); the rest as RGB.
void pick_format(png_image& pimg) {
  const bool gray = (pimg.format & PNG_FORMAT_FLAG_COLOR) == 0;
  pimg.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
}

}  // namespace

Image read_png(const std::filesystem::path& path, bool force_rgb) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IOFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Image img = decode_png(bytes, force_rgb);
  img.id = path.stem().string();
  return img;
}

Image decode_png(std::span<const std::uint8_t> bytes, bool force_rgb) {
  png_image pimg;
  std::memset(&pimg, 0, sizeof(pimg));
  pimg.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pimg, bytes.data(), bytes.size()))
    fail(ErrorCode::FormatError, std::string("png decode: ") + pimg.message);
  pick_format(pimg);
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(pimg));
  if (!png_image_finish_read(&pimg, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&pimg);
    fail(ErrorCode::FormatError, std::string("png decode: ") + pimg.message);
  }
  return finish_read(pimg, buf, force_rgb);
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  require(img.channels == 3 || img.channels == 1, ErrorCode::ShapeError, "png needs 1 or 3 channels");
  std::vector<std::uint8_t> buf(img.pixels.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        buf[(static_cast<size_t>(y) * img.width + x) * img.channels + c] = to_byte(img.at(c, y, x));
  png_image pimg;
  std::memset(&pimg, 0, sizeof(pimg));
  pimg.version = PNG_IMAGE_VERSION;
  pimg.width = static_cast<png_uint_32>(img.width);
  pimg.height = static_cast<png_uint_32>(img.height);
  pimg.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pimg, nullptr, &size, 0, buf.data(), 0, nullptr))
    fail(ErrorCode::FormatError, std::string("png encode: ") + pimg.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pimg, out.data(), &size, 0, buf.data(), 0, nullptr))
    fail(ErrorCode::FormatError, std::string("png encode: ") + pimg.message);
  out.resize(size);
  return out;
}

static void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IOFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IOFailure, "short write to " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& img) { write_bytes(path, encode_png(img)); }

Mask decode_mask_png(std::span<const std::uint8_t> bytes) {
  png_image pimg;
  std::memset(&pimg, 0, sizeof(pimg));
  pimg.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pimg, bytes.data(), bytes.size()))
    fail(ErrorCode::FormatError, std::string("mask decode: ") + pimg.message);
  // Read every channel so that "nonzero" means any channel nonzero.
  pimg.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(pimg));
  if (!png_image_finish_read(&pimg, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&pimg);
    fail(ErrorCode::FormatError, std::string("mask decode: ") + pimg.message);
  }
  Mask m(static_cast<int>(pimg.height), static_cast<int>(pimg.width));
  for (size_t i = 0; i < m.bits.size(); ++i)
    m.bits[i] = (buf[4 * i] | buf[4 * i + 1] | buf[4 * i + 2]) != 0 ? 1 : 0;
  return m;
}

Mask read_mask_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IOFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_mask_png(bytes);
}

std::vector<std::uint8_t> encode_mask_png(const Mask& mask) {
  Image g(1, mask.height, mask.width);
  for (size_t i = 0; i < mask.bits.size(); ++i) g.pixels[i] = mask.bits[i] ? 1.0f : 0.0f;
  return encode_png(g);
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  write_bytes(path, encode_mask_png(mask));
}

}  // namespace e2eve
