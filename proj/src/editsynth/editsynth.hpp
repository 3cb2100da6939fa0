#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "common/image.hpp"
#include "common/region.hpp"
#include "common/rng.hpp"
#include "dataio/dataio.hpp"
#include "json.hpp"

namespace e2eve::editsynth {

/// Distribution of training block regions: area fraction and aspect (height / width).
struct RegionSamplerConfig {
  double area_min = 0.05;
  double area_max = 0.35;
  double aspect_min = 0.75;
  double aspect_max = 1.33;
};

/// Parameters of the random transformation T that produces the driver.
struct TransformConfig {
  double alpha_min = 0.4;
  double alpha_max = 0.7;
  bool pos_aug = true;
  bool size_aug = true;
  int driver_height = 16;
  int driver_width = 16;

  void validate() const;
};

struct DriverCrop {
  Rect rect;
  double alpha_used = 1.0;
};

/// One self-supervised example: target x^, source x = (1-R) x^, driver y = T(R x^).
struct EditQuadruplet {
  Image target;
  Image source;
  Image driver;
  EditRegion region;
  DriverCrop crop;
  std::string source_image_id;
};

nlohmann::json to_json(const RegionSamplerConfig& c);
nlohmann::json to_json(const TransformConfig& c);
RegionSamplerConfig region_sampler_from_json(const nlohmann::json& j);
TransformConfig transform_from_json(const nlohmann::json& j);

/// Uniform area fraction and aspect, uniform placement. InfeasibleRegion if the
/// smallest allowed area cannot fit at any allowed aspect.
EditRegion sample_block_region(int height, int width, std::pair<double, double> area_range,
                               std::pair<double, double> aspect_range, Rng& rng);
EditRegion sample_block_region(int height, int width, const RegionSamplerConfig& cfg, Rng& rng);

/// Sub-crop R_T of the region. Block regions get an aspect-preserving crop of
/// round(alpha * bbox); free-form regions get a square of side round(alpha * bbox width)
/// (clamped to the bbox height) lying entirely inside the mask, shrinking alpha
/// toward alpha_min before failing with InfeasibleCrop.
DriverCrop sample_subcrop(const EditRegion& region, const TransformConfig& cfg, Rng& rng);

/// Centered crop for a fixed alpha; used by evaluation triplets.
DriverCrop centered_subcrop(const EditRegion& region, double alpha);

EditQuadruplet make_quadruplet(const Image& target, const EditRegion& region, const TransformConfig& cfg, Rng& rng);

/// The null transform T = 0: an all-zero driver, i.e. the inpainting regime.
Image null_driver(const TransformConfig& cfg, int channels = 3);

/// Re-labels a loaded mask as a free-form region (holes are kept as they are).
EditRegion make_freeform_region(const EditRegion& mask);

/// Empty string when every EditQuadruplet invariant holds, else the first violation.
std::string check_quadruplet(const EditQuadruplet& q, const TransformConfig& cfg);

struct SynthOptions {
  TransformConfig transform;
  RegionSamplerConfig regions;
  int per_image = 1;
  bool freeform = false;
  std::uint64_t seed = 0;
  dataio::Split split = dataio::Split::Train;
};

/// Emits per_image quadruplets for every manifest image of the chosen split, in
/// manifest order. Each (image, k) owns an rng derived from (seed, image index, k).
/// Aborts with InsufficientData when more than 10% of images fail.
void synthesize_dataset(const dataio::DatasetManifest& manifest, const SynthOptions& opts,
                        const std::function<void(EditQuadruplet&&)>& sink);
std::vector<EditQuadruplet> synthesize_dataset(const dataio::DatasetManifest& manifest, const SynthOptions& opts);

/// Draws one quadruplet for (image, draw index); the on-the-fly counterpart of
/// synthesize_dataset, sharing its rng derivation.
EditQuadruplet synthesize_one(const Image& image, const std::optional<EditRegion>& freeform_mask,
                              const SynthOptions& opts, std::uint64_t image_index, std::uint64_t draw);

// Shard directory: record_NNNNNN.bin archives plus index.json.
void write_shards(const std::filesystem::path& dir, const std::vector<EditQuadruplet>& items,
                  const nlohmann::json& config_echo);
std::vector<EditQuadruplet> read_shards(const std::filesystem::path& dir);
nlohmann::json read_shard_index(const std::filesystem::path& dir);

}  // namespace e2eve::editsynth
