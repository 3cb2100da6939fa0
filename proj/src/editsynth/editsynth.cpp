#include "editsynth/editsynth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "common/archive.hpp"
#include "common/error.hpp"

namespace e2eve::editsynth {

namespace fs = std::filesystem;

void TransformConfig::validate() const {
  require(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max <= 1.0, ErrorCode::InvalidArgument,
          "need 0 < alpha_min <= alpha_max <= 1");
  require(size_aug || alpha_min == alpha_max, ErrorCode::InvalidArgument,
          "alpha_min must equal alpha_max when size_aug is off");
  require(driver_height > 0 && driver_width > 0, ErrorCode::InvalidArgument, "driver size must be positive");
}

nlohmann::json to_json(const RegionSamplerConfig& c) {
  return {{"area", {c.area_min, c.area_max}}, {"aspect", {c.aspect_min, c.aspect_max}}};
}

nlohmann::json to_json(const TransformConfig& c) {
  return {{"alpha", {c.alpha_min, c.alpha_max}},
          {"pos_aug", c.pos_aug},
          {"size_aug", c.size_aug},
          {"driver_size", {c.driver_height, c.driver_width}}};
}

RegionSamplerConfig region_sampler_from_json(const nlohmann::json& j) {
  RegionSamplerConfig c;
  c.area_min = j.at("area").at(0).get<double>();
  c.area_max = j.at("area").at(1).get<double>();
  c.aspect_min = j.at("aspect").at(0).get<double>();
  c.aspect_max = j.at("aspect").at(1).get<double>();
  return c;
}

TransformConfig transform_from_json(const nlohmann::json& j) {
  TransformConfig c;
  c.alpha_min = j.at("alpha").at(0).get<double>();
  c.alpha_max = j.at("alpha").at(1).get<double>();
  c.pos_aug = j.at("pos_aug").get<bool>();
  c.size_aug = j.at("size_aug").get<bool>();
  c.driver_height = j.at("driver_size").at(0).get<int>();
  c.driver_width = j.at("driver_size").at(1).get<int>();
  return c;
}

namespace {

std::pair<int, int> block_dims(double area_frac, double aspect, int height, int width) {
  const double area = area_frac * height * width;
  const int h = static_cast<int>(std::lround(std::sqrt(area * aspect)));
  const int w = static_cast<int>(std::lround(std::sqrt(area / aspect)));
  return {std::max(h, 1), std::max(w, 1)};
}

bool fits(std::pair<int, int> d, int height, int width) { return d.first <= height && d.second <= width; }

}  // namespace

EditRegion sample_block_region(int height, int width, std::pair<double, double> area_range,
                               std::pair<double, double> aspect_range, Rng& rng) {
  auto [a_lo, a_hi] = area_range;
  auto [r_lo, r_hi] = aspect_range;
  require(a_lo > 0.0 && a_lo <= a_hi && a_hi <= 1.0, ErrorCode::InvalidArgument, "area range must lie in (0,1]");
  require(r_lo > 0.0 && r_lo <= r_hi, ErrorCode::InvalidArgument, "aspect range must be positive");

  // The smallest area fits iff some aspect r in range has sqrt(A r) <= H and sqrt(A / r) <= W.
  {
    const double amin = a_lo * height * width;
    const double r_needed_lo = amin / (static_cast<double>(width) * width);
    const double r_needed_hi = static_cast<double>(height) * height / amin;
    const double lo = std::max(r_lo, r_needed_lo), hi = std::min(r_hi, r_needed_hi);
    require(lo <= hi + 1e-12, ErrorCode::InfeasibleRegion, "smallest region cannot fit at any allowed aspect");
  }

  std::pair<int, int> dims{0, 0};
  bool found = false;
  for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
    const double a = a_lo == a_hi ? a_lo : rng.uniform(a_lo, a_hi);
    const double r = r_lo == r_hi ? r_lo : rng.uniform(r_lo, r_hi);
    dims = block_dims(a, r, height, width);
    found = fits(dims, height, width);
  }
  if (!found) {
    // Clamp the last draw into the image; the feasibility check above guarantees a valid box exists.
    dims.first = std::min(dims.first, height);
    dims.second = std::min(dims.second, width);
  }
  const int top = static_cast<int>(rng.uniform_int(0, height - dims.first));
  const int left = static_cast<int>(rng.uniform_int(0, width - dims.second));
  return make_block_region(height, width, Rect{top, left, dims.first, dims.second});
}

EditRegion sample_block_region(int height, int width, const RegionSamplerConfig& cfg, Rng& rng) {
  return sample_block_region(height, width, {cfg.area_min, cfg.area_max}, {cfg.aspect_min, cfg.aspect_max}, rng);
}

namespace {

double draw_alpha(const TransformConfig& cfg, Rng& rng) {
  if (!cfg.size_aug || cfg.alpha_min == cfg.alpha_max) return cfg.alpha_min;
  return rng.uniform(cfg.alpha_min, cfg.alpha_max);
}

// Integral image of the mask for O(1) "square fully inside" queries.
struct MaskIntegral {
  int h, w;
  std::vector<long> s;
  explicit MaskIntegral(const Mask& m) : h(m.height), w(m.width), s(static_cast<size_t>(h + 1) * (w + 1), 0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) at(y + 1, x + 1) = (m.at(y, x) ? 1 : 0) + at(y, x + 1) + at(y + 1, x) - at(y, x);
  }
  long& at(int y, int x) { return s[static_cast<size_t>(y) * (w + 1) + x]; }
  long at(int y, int x) const { return s[static_cast<size_t>(y) * (w + 1) + x]; }
  long sum(const Rect& r) const {
    return at(r.bottom(), r.right()) - at(r.top, r.right()) - at(r.bottom(), r.left) + at(r.top, r.left);
  }
};

Rect centered_in(const Rect& bbox, int h, int w) {
  return Rect{bbox.top + (bbox.height - h) / 2, bbox.left + (bbox.width - w) / 2, h, w};
}

Rect place(const Rect& bbox, int h, int w, bool pos_aug, Rng& rng) {
  if (!pos_aug) return centered_in(bbox, h, w);
  const int top = static_cast<int>(rng.uniform_int(bbox.top, bbox.bottom() - h));
  const int left = static_cast<int>(rng.uniform_int(bbox.left, bbox.right() - w));
  return Rect{top, left, h, w};
}

int square_side(double alpha, const Rect& bbox) {
  const int side = static_cast<int>(std::lround(alpha * bbox.width));
  return std::clamp(side, 1, bbox.height);
}

}  // namespace

DriverCrop sample_subcrop(const EditRegion& region, const TransformConfig& cfg, Rng& rng) {
  cfg.validate();
  const Rect& bb = region.bbox;
  const double alpha = draw_alpha(cfg, rng);

  if (region.kind == RegionKind::Block) {
    const int h = std::clamp(static_cast<int>(std::lround(alpha * bb.height)), 1, bb.height);
    const int w = std::clamp(static_cast<int>(std::lround(alpha * bb.width)), 1, bb.width);
    return DriverCrop{place(bb, h, w, cfg.pos_aug, rng), alpha};
  }

  const MaskIntegral integral(region.mask);
  const int s0 = square_side(alpha, bb);
  const int s_min = std::min(s0, square_side(cfg.alpha_min, bb));
  for (int s = s0; s >= s_min; --s) {
    const double a = (s == s0) ? alpha : std::max(cfg.alpha_min, static_cast<double>(s) / bb.width);
    std::vector<Rect> feasible;
    const long full = static_cast<long>(s) * s;
    for (int top = bb.top; top + s <= bb.bottom(); ++top)
      for (int left = bb.left; left + s <= bb.right(); ++left) {
        const Rect r{top, left, s, s};
        if (integral.sum(r) == full) feasible.push_back(r);
      }
    if (feasible.empty()) continue;
    if (cfg.pos_aug) {
      const auto k = rng.uniform_int(0, static_cast<std::int64_t>(feasible.size()) - 1);
      return DriverCrop{feasible[static_cast<size_t>(k)], a};
    }
    // Closest feasible placement to the centered one (row-major tie-break).
    const Rect c = centered_in(bb, s, s);
    const Rect* best = &feasible.front();
    long best_d = -1;
    for (const auto& r : feasible) {
      const long d = static_cast<long>(r.top - c.top) * (r.top - c.top) + static_cast<long>(r.left - c.left) * (r.left - c.left);
      if (best_d < 0 || d < best_d) {
        best_d = d;
        best = &r;
      }
    }
    return DriverCrop{*best, a};
  }
  fail(ErrorCode::InfeasibleCrop, "no square sub-crop of the allowed size fits inside the mask");
}

DriverCrop centered_subcrop(const EditRegion& region, double alpha) {
  TransformConfig cfg;
  cfg.alpha_min = cfg.alpha_max = alpha;
  cfg.pos_aug = cfg.size_aug = false;
  Rng unused(0);
  return sample_subcrop(region, cfg, unused);
}

EditQuadruplet make_quadruplet(const Image& target, const EditRegion& region, const TransformConfig& cfg, Rng& rng) {
  require(region.height() == target.height && region.width() == target.width, ErrorCode::MaskShapeMismatch,
          "region does not match target size");
  EditQuadruplet q;
  q.crop = sample_subcrop(region, cfg, rng);
  q.target = target;
  q.source = apply_hole(target, region.mask);
  // R_T lies inside R, so cropping x^ there equals cropping R * x^.
  q.driver = resize_area(crop(target, q.crop.rect), cfg.driver_height, cfg.driver_width);
  q.driver.id = target.id;
  q.region = region;
  q.source_image_id = target.id;
  return q;
}

Image null_driver(const TransformConfig& cfg, int channels) {
  return Image(channels, cfg.driver_height, cfg.driver_width, 0.0f);
}

EditRegion make_freeform_region(const EditRegion& mask) {
  return make_region_from_mask(mask.mask, RegionKind::Freeform);
}

std::string check_quadruplet(const EditQuadruplet& q, const TransformConfig& cfg) {
  const auto& t = q.target;
  if (!q.source.same_shape(t)) return "source shape differs from target";
  if (q.region.height() != t.height || q.region.width() != t.width) return "region shape differs from target";
  if (q.driver.height != cfg.driver_height || q.driver.width != cfg.driver_width) return "driver has wrong size";
  for (int c = 0; c < t.channels; ++c)
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) {
        const float expect = q.region.mask.at(y, x) ? 0.0f : t.at(c, y, x);
        if (q.source.at(c, y, x) != expect) return "source != (1-R) * target";
      }
  if (!q.region.bbox.contains(q.crop.rect)) return "crop not inside bbox(R)";
  for (int y = q.crop.rect.top; y < q.crop.rect.bottom(); ++y)
    for (int x = q.crop.rect.left; x < q.crop.rect.right(); ++x)
      if (!q.region.mask.at(y, x)) return "crop leaves the mask";
  if (q.crop.alpha_used < cfg.alpha_min - 1e-12 || q.crop.alpha_used > cfg.alpha_max + 1e-12)
    return "alpha_used outside [alpha_min, alpha_max]";
  return {};
}

EditQuadruplet synthesize_one(const Image& image, const std::optional<EditRegion>& freeform_mask,
                              const SynthOptions& opts, std::uint64_t image_index, std::uint64_t draw) {
  Rng rng(derive_seed(derive_seed(opts.seed, "synth", image_index), "draw", draw));
  EditRegion region = (opts.freeform && freeform_mask)
                          ? make_freeform_region(*freeform_mask)
                          : sample_block_region(image.height, image.width, opts.regions, rng);
  return make_quadruplet(image, region, opts.transform, rng);
}

void synthesize_dataset(const dataio::DatasetManifest& manifest, const SynthOptions& opts,
                        const std::function<void(EditQuadruplet&&)>& sink) {
  opts.transform.validate();
  require(opts.per_image >= 1, ErrorCode::InvalidArgument, "per_image must be >= 1");
  const auto entries = manifest.split(opts.split);
  require(!entries.empty(), ErrorCode::InsufficientData, "manifest split has no images");
  size_t failures = 0;
  std::string last_error;
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = *entries[i];
    try {
      const Image img = dataio::load_image(manifest, e);
      std::optional<EditRegion> mask;
      if (opts.freeform) {
        require(e.mask_path.has_value(), ErrorCode::InvalidArgument, "entry " + e.id + " has no mask_path");
        mask = dataio::load_mask(manifest.root / *e.mask_path, manifest.image_height, manifest.image_width);
      }
      std::vector<EditQuadruplet> local;
      for (int k = 0; k < opts.per_image; ++k)
        local.push_back(synthesize_one(img, mask, opts, i, static_cast<std::uint64_t>(k)));
      for (auto& q : local) sink(std::move(q));
    } catch (const Error& ex) {
      ++failures;
      last_error = ex.what();
      require(failures * 10 <= entries.size(), ErrorCode::InsufficientData,
              "more than 10% of images failed; last error: " + last_error);
    }
  }
}

std::vector<EditQuadruplet> synthesize_dataset(const dataio::DatasetManifest& manifest, const SynthOptions& opts) {
  std::vector<EditQuadruplet> out;
  synthesize_dataset(manifest, opts, [&](EditQuadruplet&& q) { out.push_back(std::move(q)); });
  return out;
}

namespace {

NamedTensor image_tensor(const Image& img) {
  return NamedTensor{{img.channels, img.height, img.width}, img.pixels};
}

Image tensor_image(const NamedTensor& t) {
  require(t.shape.size() == 3, ErrorCode::FormatError, "record image tensor must be 3-D");
  Image img(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2]));
  img.pixels = t.data;
  return img;
}

std::string record_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "record_%06zu.bin", i);
  return buf;
}

}  // namespace

void write_shards(const fs::path& dir, const std::vector<EditQuadruplet>& items, const nlohmann::json& config_echo) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(fs::is_directory(dir), ErrorCode::IOFailure, "cannot create shard directory " + dir.string());
  nlohmann::json records = nlohmann::json::array();
  for (size_t i = 0; i < items.size(); ++i) {
    const auto& q = items[i];
    Archive a;
    a.tensors["target"] = image_tensor(q.target);
    a.tensors["source"] = image_tensor(q.source);
    a.tensors["driver"] = image_tensor(q.driver);
    a.blobs["region_mask_png"] = encode_mask_png(q.region.mask);
    a.meta = {{"crop_rect", {q.crop.rect.top, q.crop.rect.left, q.crop.rect.height, q.crop.rect.width}},
              {"alpha_used", q.crop.alpha_used},
              {"region_kind", region_kind_name(q.region.kind)},
              {"source_image_id", q.source_image_id}};
    const auto name = record_name(i);
    a.save(dir / name);
    records.push_back({{"file", name}, {"source_image_id", q.source_image_id}});
  }
  nlohmann::json index{{"format", "e2eve-shards"},
                       {"format_version", 1},
                       {"count", items.size()},
                       {"records", records},
                       {"config", config_echo},
                       {"version", version_string()}};
  write_text_file(dir / "index.json", index.dump(2) + "\n");
}

nlohmann::json read_shard_index(const fs::path& dir) {
  const auto bytes = read_file_bytes(dir / "index.json");
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::FormatError, std::string("shard index: ") + ex.what());
  }
}

std::vector<EditQuadruplet> read_shards(const fs::path& dir) {
  const auto index = read_shard_index(dir);
  require(index.value("format", "") == "e2eve-shards", ErrorCode::FormatError, "not a shard index");
  std::vector<EditQuadruplet> out;
  for (const auto& rec : index.at("records")) {
    const auto a = Archive::load(dir / rec.at("file").get<std::string>());
    EditQuadruplet q;
    q.target = tensor_image(a.tensors.at("target"));
    q.source = tensor_image(a.tensors.at("source"));
    q.driver = tensor_image(a.tensors.at("driver"));
    const auto kind = a.meta.at("region_kind").get<std::string>() == "block" ? RegionKind::Block : RegionKind::Freeform;
    q.region = make_region_from_mask(decode_mask_png(a.blobs.at("region_mask_png")), kind);
    const auto& r = a.meta.at("crop_rect");
    q.crop.rect = Rect{r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
    q.crop.alpha_used = a.meta.at("alpha_used").get<double>();
    q.source_image_id = a.meta.at("source_image_id").get<std::string>();
    q.target.id = q.source_image_id;
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace e2eve::editsynth
