#include "dataio/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>

#include "common/archive.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"

namespace e2eve::dataio {

namespace fs = std::filesystem;

const char* split_name(Split s) { return s == Split::Train ? "train" : "val"; }

static Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  fail(ErrorCode::FormatError, "unknown split '" + s + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

size_t DatasetManifest::count(Split s) const {
  return static_cast<size_t>(std::count_if(entries.begin(), entries.end(), [s](const auto& e) { return e.split == s; }));
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json j;
  j["manifest_version"] = kVersion;
  j["image_size"] = {image_height, image_width};
  j["seed"] = seed;
  j["val_fraction"] = val_fraction;
  j["metadata"] = {{"skipped_files", skipped_files}, {"version", version_string()}};
  auto arr = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json je{{"id", e.id}, {"relative_path", e.relative_path}, {"split", split_name(e.split)}};
    if (e.mask_path) je["mask_path"] = *e.mask_path;
    arr.push_back(std::move(je));
  }
  j["entries"] = std::move(arr);
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, fs::path root) {
  require(j.value("manifest_version", 0) == kVersion, ErrorCode::FormatError, "unsupported manifest_version");
  DatasetManifest m;
  m.image_height = j.at("image_size").at(0).get<int>();
  m.image_width = j.at("image_size").at(1).get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.val_fraction = j.value("val_fraction", 0.0);
  if (j.contains("metadata")) m.skipped_files = j["metadata"].value("skipped_files", 0);
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.relative_path = je.at("relative_path").get<std::string>();
    e.split = parse_split(je.at("split").get<std::string>());
    if (je.contains("mask_path")) e.mask_path = je["mask_path"].get<std::string>();
    m.entries.push_back(std::move(e));
  }
  for (size_t i = 1; i < m.entries.size(); ++i)
    require(m.entries[i - 1].id != m.entries[i].id, ErrorCode::FormatError, "duplicate id " + m.entries[i].id);
  m.root = std::move(root);
  return m;
}

void DatasetManifest::save(const fs::path& file) const { write_text_file(file, to_json().dump(2) + "\n"); }

DatasetManifest DatasetManifest::load(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorCode::IOFailure, "cannot open manifest " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::FormatError, std::string("manifest parse: ") + ex.what());
  }
  return from_json(j, file.parent_path());
}

void assign_splits(std::vector<ManifestEntry>& entries, double val_fraction, std::uint64_t seed) {
  require(val_fraction >= 0.0 && val_fraction <= 1.0, ErrorCode::InvalidArgument, "val_fraction must be in [0,1]");
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  const auto n_val = static_cast<size_t>(std::floor(static_cast<double>(entries.size()) * val_fraction + 1e-9));
  std::vector<std::pair<std::uint64_t, size_t>> keyed;
  for (size_t i = 0; i < entries.size(); ++i) keyed.emplace_back(derive_seed(seed, entries[i].id), i);
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& e : entries) e.split = Split::Train;
  for (size_t k = 0; k < n_val; ++k) entries[keyed[k].second].split = Split::Val;
}

DatasetManifest ingest_folder(const fs::path& dir, int height, int width, double val_fraction, std::uint64_t seed) {
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "image size must be positive");
  require(fs::is_directory(dir), ErrorCode::IOFailure, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (!de.is_regular_file()) continue;
    auto ext = de.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(de.path());
  }
  std::sort(files.begin(), files.end());

  DatasetManifest m;
  m.image_height = height;
  m.image_width = width;
  m.seed = seed;
  m.val_fraction = val_fraction;
  m.root = dir;
  for (const auto& f : files) {
    try {
      (void)read_png(f);
    } catch (const Error& ex) {
      std::cerr << "warning: skipping " << f.filename().string() << ": " << ex.what() << "\n";
      ++m.skipped_files;
      continue;
    }
    ManifestEntry e;
    e.id = f.stem().string();
    e.relative_path = f.filename().string();
    m.entries.push_back(std::move(e));
  }
  require(!m.entries.empty(), ErrorCode::NoImages, "no decodable images in " + dir.string());
  assign_splits(m.entries, val_fraction, seed);
  return m;
}

namespace {

struct Rgb {
  float r, g, b;
};

constexpr std::array<Rgb, 6> kBackgrounds{{{0.90f, 0.88f, 0.80f},
                                           {0.20f, 0.24f, 0.30f},
                                           {0.55f, 0.70f, 0.85f},
                                           {0.40f, 0.55f, 0.35f},
                                           {0.75f, 0.65f, 0.55f},
                                           {0.12f, 0.12f, 0.12f}}};

constexpr std::array<Rgb, 8> kShapeColors{{{0.90f, 0.15f, 0.15f},
                                           {0.15f, 0.70f, 0.20f},
                                           {0.15f, 0.30f, 0.90f},
                                           {0.95f, 0.85f, 0.10f},
                                           {0.80f, 0.20f, 0.80f},
                                           {0.10f, 0.80f, 0.85f},
                                           {0.95f, 0.55f, 0.10f},
                                           {0.98f, 0.98f, 0.98f}}};

enum class ShapeType { Rect, Ellipse, Triangle };
enum class Texture { Solid, Stripes, Checkers };

struct Shape {
  ShapeType type;
  double cy, cx, ry, rx;  // center and half extents
  Texture texture;
  int period;
  bool vertical;
  Rgb color, alt;
};

bool covers(const Shape& s, double y, double x) {
  const double dy = (y - s.cy) / s.ry, dx = (x - s.cx) / s.rx;
  switch (s.type) {
    case ShapeType::Rect: return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    case ShapeType::Ellipse: return dy * dy + dx * dx <= 1.0;
    case ShapeType::Triangle: return dy <= 1.0 && dy >= -1.0 && std::abs(dx) <= (dy + 1.0) / 2.0;
  }
  return false;
}

Rgb shade(const Shape& s, int y, int x) {
  switch (s.texture) {
    case Texture::Solid: return s.color;
    case Texture::Stripes: return (((s.vertical ? x : y) / s.period) % 2 == 0) ? s.color : s.alt;
    case Texture::Checkers: return (((x / s.period) + (y / s.period)) % 2 == 0) ? s.color : s.alt;
  }
  return s.color;
}

}  // namespace

ToySample render_toy_image(int height, int width, std::uint64_t seed, int index) {
  Rng rng(derive_seed(seed, "toy-image", static_cast<std::uint64_t>(index)));
  const Rgb bg = kBackgrounds[static_cast<size_t>(rng.uniform_int(0, kBackgrounds.size() - 1))];
  const int n_shapes = static_cast<int>(rng.uniform_int(1, 3));
  std::vector<Shape> shapes;
  for (int i = 0; i < n_shapes; ++i) {
    Shape s{};
    s.type = static_cast<ShapeType>(rng.uniform_int(0, 2));
    s.ry = rng.uniform(0.12, 0.30) * height;
    s.rx = rng.uniform(0.12, 0.30) * width;
    s.cy = rng.uniform(s.ry * 0.5, height - s.ry * 0.5);
    s.cx = rng.uniform(s.rx * 0.5, width - s.rx * 0.5);
    const double t = rng.uniform();
    s.texture = t < 0.5 ? Texture::Solid : (t < 0.8 ? Texture::Stripes : Texture::Checkers);
    s.period = rng.bernoulli(0.5) ? 4 : 8;
    s.vertical = rng.bernoulli(0.5);
    s.color = kShapeColors[static_cast<size_t>(rng.uniform_int(0, kShapeColors.size() - 1))];
    s.alt = {s.color.r * 0.45f, s.color.g * 0.45f, s.color.b * 0.45f};
    shapes.push_back(s);
  }

  ToySample out;
  out.image = Image(3, height, width);
  std::vector<int> owner(static_cast<size_t>(height) * width, -1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      Rgb c = bg;
      for (int i = 0; i < n_shapes; ++i)
        if (covers(shapes[static_cast<size_t>(i)], y + 0.5, x + 0.5)) {
          c = shade(shapes[static_cast<size_t>(i)], y, x);
          owner[static_cast<size_t>(y) * width + x] = i;
        }
      out.image.at(0, y, x) = c.r;
      out.image.at(1, y, x) = c.g;
      out.image.at(2, y, x) = c.b;
    }

  // The free-form mask is the most visible shape.
  std::vector<long> visible(static_cast<size_t>(n_shapes), 0);
  for (int o : owner)
    if (o >= 0) ++visible[static_cast<size_t>(o)];
  const int best = static_cast<int>(std::max_element(visible.begin(), visible.end()) - visible.begin());
  out.mask = Mask(height, width);
  for (size_t i = 0; i < owner.size(); ++i) out.mask.bits[i] = owner[i] == best ? 1 : 0;
  return out;
}

DatasetManifest make_toy_corpus(int n, int height, int width, std::uint64_t seed, const fs::path& out,
                                double val_fraction) {
  require(n >= 1, ErrorCode::InvalidArgument, "toy corpus needs n >= 1");
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "image size must be positive");
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  fs::create_directories(out / "masks", ec);
  require(!ec && fs::is_directory(out / "images"), ErrorCode::IOFailure, "cannot create " + out.string());

  DatasetManifest m;
  m.image_height = height;
  m.image_width = width;
  m.seed = seed;
  m.val_fraction = val_fraction;
  m.root = out;
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "toy_%05d", i);
    const auto sample = render_toy_image(height, width, seed, i);
    write_png(out / "images" / (std::string(name) + ".png"), sample.image);
    write_mask_png(out / "masks" / (std::string(name) + ".png"), sample.mask);
    ManifestEntry e;
    e.id = name;
    e.relative_path = "images/" + std::string(name) + ".png";
    e.mask_path = "masks/" + std::string(name) + ".png";
    m.entries.push_back(std::move(e));
  }
  assign_splits(m.entries, val_fraction, seed);
  m.save(out / "manifest.json");
  return m;
}

Image load_image(const DatasetManifest& m, const ManifestEntry& e) {
  Image img = read_png(m.root / e.relative_path);
  img = resize_area(img, m.image_height, m.image_width);
  img.id = e.id;
  return img;
}

EditRegion load_mask(const fs::path& path, int expected_height, int expected_width) {
  Mask mask = read_mask_png(path);
  require(mask.height == expected_height && mask.width == expected_width, ErrorCode::MaskShapeMismatch,
          "mask " + path.string() + " is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
              ", expected " + std::to_string(expected_height) + "x" + std::to_string(expected_width));
  return make_region_from_mask(std::move(mask), RegionKind::Freeform);
}

}  // namespace e2eve::dataio
