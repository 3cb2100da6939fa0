#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common/image.hpp"
#include "common/region.hpp"
#include "json.hpp"

namespace e2eve::dataio {

enum class Split { Train, Val };

const char* split_name(Split s);

struct ManifestEntry {
  std::string id;
  std::string relative_path;
  Split split = Split::Train;
  std::optional<std::string> mask_path;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  std::vector<ManifestEntry> entries;  // sorted by id
  int image_height = 0;
  int image_width = 0;
  std::uint64_t seed = 0;
  double val_fraction = 0.0;
  int skipped_files = 0;
  /// Directory that relative paths resolve against (not serialized).
  std::filesystem::path root;

  std::vector<const ManifestEntry*> split(Split s) const;
  size_t count(Split s) const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, std::filesystem::path root);

  /// Writes `<dir>/manifest.json`; the text is a pure function of the manifest.
  void save(const std::filesystem::path& file) const;
  static DatasetManifest load(const std::filesystem::path& file);
};

/// Deterministic split: the floor(n * val_fraction) ids with the lowest
/// hash(seed, id) go to val (ties by id order).
void assign_splits(std::vector<ManifestEntry>& entries, double val_fraction, std::uint64_t seed);

/// Scans `dir` for PNG files; undecodable files are skipped and counted.
DatasetManifest ingest_folder(const std::filesystem::path& dir, int height, int width, double val_fraction,
                              std::uint64_t seed);

/// Procedural corpus: solid background plus 1-3 textured shapes; one free-form
/// mask per image covering its most visible shape. Writes images/, masks/ and manifest.json.
DatasetManifest make_toy_corpus(int n, int height, int width, std::uint64_t seed, const std::filesystem::path& out,
                                double val_fraction = 0.2);

/// Renders toy image `index` in memory (what make_toy_corpus writes, before PNG quantization).
struct ToySample {
  Image image;
  Mask mask;
};
ToySample render_toy_image(int height, int width, std::uint64_t seed, int index);

/// Loads an entry's image resized (area kernel) to the manifest size.
Image load_image(const DatasetManifest& m, const ManifestEntry& e);

/// Nonzero pixels are inside. Errors: MaskShapeMismatch, EmptyMask.
EditRegion load_mask(const std::filesystem::path& path, int expected_height, int expected_width);

}  // namespace e2eve::dataio
