#include <cmath>
#include <random>

#include "common/archive.hpp"
#include "common/error.hpp"
#include "common/image.hpp"
#include "common/region.hpp"
#include "common/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace e2eve;

namespace {

Image random_image(int c, int h, int w, std::uint32_t seed) {
  std::mt19937 g(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(c, h, w);
  for (auto& p : img.pixels) p = u(g);
  return img;
}

// Exact box-filter reference: each output pixel integrates the input over its footprint.
float area_reference(const Image& img, int c, int oy, int ox, int oh, int ow) {
  const double sy = static_cast<double>(img.height) / oh, sx = static_cast<double>(img.width) / ow;
  const double y0 = oy * sy, y1 = (oy + 1) * sy, x0 = ox * sx, x1 = (ox + 1) * sx;
  double acc = 0.0;
  for (int y = 0; y < img.height; ++y) {
    const double wy = std::max(0.0, std::min<double>(y + 1, y1) - std::max<double>(y, y0));
    if (wy <= 0) continue;
    for (int x = 0; x < img.width; ++x) {
      const double wx = std::max(0.0, std::min<double>(x + 1, x1) - std::max<double>(x, x0));
      acc += wy * wx * img.at(c, y, x);
    }
  }
  return static_cast<float>(acc / (sy * sx));
}

}  // namespace

TEST_CASE("area resize matches the box-filter integral") {
  const Image img = random_image(3, 13, 17, 1);
  for (auto [oh, ow] : {std::pair{5, 7}, std::pair{13, 17}, std::pair{26, 9}, std::pair{1, 1}}) {
    const Image r = resize_area(img, oh, ow);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) CHECK(std::abs(r.at(c, y, x) - area_reference(img, c, y, x, oh, ow)) < 1e-5f);
  }
  CHECK(resize_area(img, 13, 17).pixels == img.pixels);
}

TEST_CASE("crop, paste and hole") {
  const Image img = random_image(3, 8, 8, 2);
  const Rect r{2, 3, 4, 2};
  const Image c = crop(img, r);
  CHECK(c.height == 4);
  CHECK(c.width == 2);
  CHECK(c.at(1, 0, 0) == img.at(1, 2, 3));
  Image blank(3, 8, 8, 0.0f);
  paste(blank, c, r);
  CHECK(blank.at(2, 5, 4) == img.at(2, 5, 4));
  CHECK(blank.at(2, 0, 0) == 0.0f);
  const EditRegion reg = make_block_region(8, 8, r);
  const Image holed = apply_hole(img, reg.mask);
  CHECK(holed.at(0, 3, 3) == 0.0f);
  CHECK(holed.at(0, 0, 0) == img.at(0, 0, 0));
  CHECK_THROWS_AS(crop(img, Rect{6, 6, 4, 4}), Error);
}

TEST_CASE("png round trip is exact after 8-bit quantization") {
  const Image img = quantize_8bit(random_image(3, 9, 11, 3));
  const auto bytes = encode_png(img);
  const Image back = decode_png(bytes);
  CHECK(back.pixels == img.pixels);
  CHECK(encode_png(back) == bytes);

  Mask m(5, 6);
  m.at(1, 2) = 1;
  m.at(4, 5) = 1;
  CHECK(decode_mask_png(encode_mask_png(m)) == m);
  try {
    decode_png(std::vector<std::uint8_t>{1, 2, 3});
    FAIL("expected FormatError");
  } catch (const Error& e) {
    CHECK((e.code() == ErrorCode::FormatError || e.code() == ErrorCode::IOFailure));
  }
}

TEST_CASE("regions") {
  Mask m(10, 10);
  CHECK_THROWS_AS(make_region_from_mask(m, RegionKind::Freeform), Error);
  m.at(2, 3) = 1;
  m.at(7, 5) = 1;
  const auto r = make_region_from_mask(m, RegionKind::Freeform);
  CHECK(r.bbox == Rect{2, 3, 6, 3});
  CHECK(r.area() == 2);
  const auto b = make_block_region(10, 10, Rect{1, 1, 3, 4});
  CHECK(b.area() == 12);
  CHECK_NOTHROW(validate_region(b));
}

TEST_CASE("archive round trip and hashing") {
  Archive a;
  a.meta = {{"kind", "test"}, {"x", 3}};
  a.tensors["w"] = NamedTensor{{2, 3}, {1, 2, 3, 4, 5, 6}};
  a.blobs["b"] = {9, 8, 7};
  const auto bytes = a.serialize();
  const Archive b = Archive::deserialize(bytes);
  CHECK(b.meta == a.meta);
  CHECK(b.tensors.at("w").data == a.tensors.at("w").data);
  CHECK(b.tensors.at("w").shape == a.tensors.at("w").shape);
  CHECK(b.blobs.at("b") == a.blobs.at("b"));
  CHECK(b.serialize() == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Archive::deserialize(bad), Error);
  bad = bytes;
  bad.resize(bad.size() - 5);
  CHECK_THROWS_AS(Archive::deserialize(bad), Error);

  CHECK(sha256_hex(std::vector<std::uint8_t>{'a', 'b', 'c'}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto dir = testutil::scratch("archive");
  a.save(dir / "a.bin");
  CHECK(sha256_file(dir / "a.bin") == sha256_hex(bytes));
}

TEST_CASE("rng streams") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.uniform_int(3, 7);
    CHECK((v >= 3 && v <= 7));
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
  }
  r.normal();  // leaves a spare Box-Muller value behind
  const std::string s = r.state();
  const double a = r.normal(), b = r.uniform();
  Rng q(0);
  q.set_state(s);
  CHECK(q.normal() == a);
  CHECK(q.uniform() == b);
}
