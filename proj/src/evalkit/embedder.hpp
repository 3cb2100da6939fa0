#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "common/image.hpp"
#include "json.hpp"
#include "nn/conv.hpp"

namespace e2eve::evalkit {

/// Deterministic image -> feature map. The default is an untrained conv stack with
/// fixed-seed weights; inputs are area-resized to 32x32 first.
class FeatureEmbedder {
 public:
  static constexpr int kInput = 32;

  explicit FeatureEmbedder(std::uint64_t seed = 20220525);

  int dim() const { return dim_; }
  nlohmann::json descriptor() const;

  /// One row per image.
  nn::Mat<double> embed(const std::vector<const Image*>& images) const;
  std::vector<double> embed(const Image& image) const;

 private:
  std::uint64_t seed_;
  int dim_ = 0;
  std::string weights_sha256_;
  nn::Sequential<float> net_;
};

/// Squared Euclidean distance between feature vectors.
double feature_distance(std::span<const double> a, std::span<const double> b);

}  // namespace e2eve::evalkit
