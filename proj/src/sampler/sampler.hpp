#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "artist/artist.hpp"
#include "common/image.hpp"
#include "common/region.hpp"
#include "evalkit/embedder.hpp"
#include "json.hpp"

namespace e2eve::sampler {

enum class PolicyKind { Greedy, TopK, TopP };

struct SamplingPolicy {
  PolicyKind kind = PolicyKind::TopP;
  int k = 1;
  double p = 0.9;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  /// InvalidArgument unless 0 <= p <= 1, 1 <= k <= vocab, temperature > 0.
  void validate(int vocab) const;
};

const char* policy_kind_name(PolicyKind k);
PolicyKind parse_policy_kind(const std::string& s);
nlohmann::json to_json(const SamplingPolicy& p);
SamplingPolicy policy_from_json(const nlohmann::json& j);

/// Smallest probability-sorted prefix with cumulative mass >= p (at least one token), renormalized.
/// Equal probabilities are ordered by lower index first.
std::vector<double> nucleus_restrict(std::span<const double> hist, double p);
/// The k most probable tokens, renormalized; ties to the lower index.
std::vector<double> topk_restrict(std::span<const double> hist, int k);
/// Applies the policy's restriction to an already tempered histogram. Greedy yields a one-hot.
std::vector<double> restrict_for(const SamplingPolicy& policy, std::span<const double> hist);
/// Inverse-CDF draw from a normalized histogram.
int draw_token(std::span<const double> hist, Rng& rng);

struct EditRequest {
  Image source;  // the hole is (re)applied from `region`
  EditRegion region;
  std::optional<Image> driver;  // nullopt: driver-free (inpainting) conditioning
  int n_candidates = 20;
  int n_keep = 10;
  SamplingPolicy policy;
};

struct Candidate {
  int index = 0;
  std::vector<int> tokens;
  Image image;
  double nll = 0.0;  // mean per-token -log P under the unrestricted model
  double similarity = 0.0;
  bool kept = false;
};

struct SampleResult {
  std::vector<Candidate> candidates;  // candidate-index order
  double seconds = 0.0;
  double images_per_second = 0.0;
};

/// Decodes n_candidates edits. Candidate i draws from its own stream derived from (seed, i).
SampleResult sample_edit(const artist::ArtistModel& model, const EditRequest& request);

/// Similarity of each candidate's edit region (resized to the driver's size) to the driver:
/// negative squared embedder distance.
std::vector<double> driver_similarity(const std::vector<const Image*>& candidates, const Image& driver,
                                      const EditRegion& region, const evalkit::FeatureEmbedder& embedder);

/// Indices of the n_keep most similar candidates, descending, ties by index. InvalidRequest if
/// n_keep exceeds the candidate count.
std::vector<int> filter_by_driver(std::span<const double> similarity, int n_keep);

/// Samples, scores every candidate against the driver, marks the kept ones, and returns them ranked.
std::vector<Candidate> sample_and_filter(const artist::ArtistModel& model, const EditRequest& request,
                                         const evalkit::FeatureEmbedder& embedder, SampleResult* all = nullptr);

/// Crop of the region's bounding box, resized to (h, w).
Image region_view(const Image& img, const EditRegion& region, int h, int w);

}  // namespace e2eve::sampler
