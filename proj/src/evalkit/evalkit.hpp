#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "artist/artist.hpp"
#include "dataio/dataio.hpp"
#include "editsynth/editsynth.hpp"
#include "evalkit/embedder.hpp"
#include "sampler/sampler.hpp"

namespace e2eve::evalkit {

/// (x, y, R) with x kept whole; the hole is applied when the model is queried.
struct EvalTriplet {
  Image source;
  EditRegion region;
  Image driver;
  Rect driver_crop;  // pre-resize crop, in x' coordinates (= R's frame)
  std::string source_id;
  std::string driver_source_id;
};

struct TripletConfig {
  int n = 64;
  editsynth::RegionSamplerConfig regions;
  double crop_ratio = 0.6;  // side of the centered driver crop relative to R
  int driver_height = 16;
  int driver_width = 16;
  bool freeform = false;  // use the manifest masks instead of sampled blocks
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const TripletConfig& c);

/// Driver = centered, strictly smaller sub-rectangle of R taken from a different val image.
/// InsufficientData if the val split has fewer than two images.
std::vector<EvalTriplet> build_eval_triplets(const dataio::DatasetManifest& manifest, const TripletConfig& cfg);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^1/2), rows are samples. ShapeError on dimension
/// mismatch, InvalidArgument with fewer than two rows.
double frechet_distance(const nn::Mat<double>& a, const nn::Mat<double>& b);

enum class RegionMode { Image, EditRegion };

/// Frechet distance between the embedded sets; in EditRegion mode each image is cropped to
/// its region's bbox first (regions[i] belongs to images[i]).
double naturalness(const std::vector<const Image*>& edited, const std::vector<const EditRegion*>& edited_regions,
                   const std::vector<const Image*>& reference, const std::vector<const EditRegion*>& reference_regions,
                   const FeatureEmbedder& embedder, RegionMode mode);

struct Locality {
  double value = 0.0;
  bool empty_complement = false;
};

/// Mean |edited - source| over channels and pixels outside R.
Locality locality(const Image& edited, const Image& source, const EditRegion& region);

/// 1-based rank of the driver among {driver} + distractors by distance to the embedded edit
/// region. Ties go to the earlier list entry, i.e. the driver.
int faithfulness_rank(const std::vector<double>& query, const std::vector<double>& driver,
                      const std::vector<std::vector<double>>& distractors);
int faithfulness_rank(const Image& edited, const EditRegion& region, const Image& driver,
                      const std::vector<const Image*>& distractors, const FeatureEmbedder& embedder);

struct Diversity {
  double value = 0.0;
  int groups_used = 0;
  int singleton_groups = 0;
};

/// Mean over groups of the mean pairwise Euclidean feature distance.
Diversity diversity(const std::vector<std::vector<const Image*>>& groups, const std::vector<const EditRegion*>& regions,
                    const FeatureEmbedder& embedder, RegionMode mode);

/// Fills R's bounding box with the resized driver (block), or tiles the driver over the mask (free-form).
Image baseline_copy_paste(const EvalTriplet& t);

/// Driver-free samples. Unsupported if the artist has no null-driver embedding.
std::vector<sampler::Candidate> baseline_inpaint(const artist::ArtistModel& model, const EvalTriplet& t,
                                                 const sampler::SamplingPolicy& policy, int n);

enum class Method { E2EVE, CopyPaste, Inpaint };
const char* method_name(Method m);

struct EvalConfig {
  int n_candidates = 20;
  int n_keep = 10;
  bool filter = true;
  sampler::SamplingPolicy policy;
  int n_distractors = 100;  // capped by the other triplets' drivers
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const EvalConfig& c);

struct TripletResult {
  std::string source_id;
  std::string driver_source_id;
  std::vector<int> ranks;
  std::vector<double> locality;
  std::vector<double> nll;
  double diversity_image = 0.0;
  double diversity_edit = 0.0;
};

struct MetricsReport {
  std::string method;
  double fid_image = 0.0;
  double fid_edit_region = 0.0;
  double r_at_1 = 0.0, r_at_5 = 0.0, r_at_20 = 0.0;
  double mean_rank = 0.0;
  double locality_l1 = 0.0;
  double diversity_image = 0.0;
  double diversity_edit = 0.0;
  std::optional<double> nll;
  int n_samples = 0;
  int empty_complement = 0;
  int singleton_groups = 0;
  std::vector<TripletResult> per_triplet;
};

nlohmann::json to_json(const MetricsReport& r);

/// Real-image statistics the naturalness metric compares against.
struct ReferenceSet {
  std::vector<Image> images;
  std::vector<EditRegion> regions;
};

/// Val images, each paired with a region drawn from the triplet sampler.
ReferenceSet build_reference_set(const dataio::DatasetManifest& manifest, const TripletConfig& cfg);

/// Samples per triplet as the method prescribes (n_keep candidates via the sampler, filtered or
/// not; one paste for Copy-Paste) and averages every metric over all produced images.
MetricsReport evaluate(const artist::ArtistModel* model, Method method, const std::vector<EvalTriplet>& triplets,
                       const ReferenceSet& reference, const EvalConfig& cfg, const FeatureEmbedder& embedder);

/// Metrics for externally produced samples (one list per triplet).
MetricsReport score_samples(const std::string& method, const std::vector<EvalTriplet>& triplets,
                            const std::vector<std::vector<sampler::Candidate>>& samples, const ReferenceSet& reference,
                            const EvalConfig& cfg, const FeatureEmbedder& embedder);

}  // namespace e2eve::evalkit
