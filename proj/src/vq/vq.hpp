#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "common/archive.hpp"
#include "common/image.hpp"
#include "nn/conv.hpp"
#include "nn/param.hpp"

namespace e2eve::vq {

struct CodebookConfig {
  int codebook_size = 256;  // K
  int code_dim = 64;
  int downsample = 8;  // f, per side
  int hidden = 32;     // conv width
  int image_height = 64;
  int image_width = 64;
  int channels = 3;

  int grid_height() const { return image_height / downsample; }
  int grid_width() const { return image_width / downsample; }
  int tokens() const { return grid_height() * grid_width(); }
  void validate() const;
};

nlohmann::json to_json(const CodebookConfig& c);
CodebookConfig codebook_config_from_json(const nlohmann::json& j);

/// z = Phi(x): an h x w grid of codebook indices, row-major.
struct TokenGrid {
  int height = 0;
  int width = 0;
  std::vector<int> tokens;

  int at(int y, int x) const { return tokens[static_cast<size_t>(y) * width + x]; }
  bool operator==(const TokenGrid&) const = default;
};

struct LossBreakdown {
  double recon = 0.0;
  double codebook = 0.0;
  double commit = 0.0;
  double total = 0.0;
};

template <typename T>
struct Quantized {
  std::vector<int> tokens;
  nn::Mat<T> vectors;  // selected codebook rows, one per latent
};

/// Nearest codebook row by squared Euclidean distance; ties go to the lowest index.
template <typename T>
Quantized<T> quantize(const nn::Mat<T>& latents, const nn::Mat<T>& codebook);

/// Mean-squared terms: recon = mean (x - x_hat)^2, codebook = mean (sg[e] - q)^2,
/// commit = mean (sg[q] - e)^2, total = recon + codebook + beta * commit.
template <typename T>
LossBreakdown vq_loss(const std::vector<T>& x, const std::vector<T>& x_hat, const nn::Mat<T>& encoder_out,
                      const nn::Mat<T>& quantized, double beta);

/// Encoder Phi, codebook, decoder Psi.
template <typename T>
class VqNet {
 public:
  VqNet(const CodebookConfig& cfg, std::uint64_t seed);

  const CodebookConfig& config() const { return cfg_; }

  /// Encoder output as (n*h*w) x code_dim rows ordered (image, y, x).
  nn::Mat<T> encode_latents(const nn::FeatureMap<T>& images, std::vector<nn::LayerCache<T>>* caches) const;
  nn::FeatureMap<T> decode_latents(const nn::Mat<T>& latents, int n, std::vector<nn::LayerCache<T>>* caches) const;

  /// One straight-through training pass over `images`; accumulates gradients and
  /// returns the loss terms (encoder/decoder/codebook grads are added, not zeroed).
  LossBreakdown accumulate_gradients(const nn::FeatureMap<T>& images, double beta);

  void collect(std::vector<nn::Param<T>*>& out);
  nn::Param<T>& codebook() { return codebook_; }
  const nn::Param<T>& codebook() const { return codebook_; }

 private:
  CodebookConfig cfg_;
  nn::Sequential<T> encoder_;
  nn::Sequential<T> decoder_;
  nn::Param<T> codebook_;
};

extern template class VqNet<float>;
extern template class VqNet<double>;

/// A trained quantizer instance ("image" or "driver" role) as stored in a checkpoint.
struct VqModel {
  std::string role = "image";
  CodebookConfig config;
  VqNet<float> net;
  long step = 0;
  std::string rng_state;
  nlohmann::json train_config = nlohmann::json::object();

  VqModel(std::string role_, const CodebookConfig& cfg, std::uint64_t seed)
      : role(std::move(role_)), config(cfg), net(cfg, seed) {}
};

nn::FeatureMap<float> to_feature_map(const std::vector<const Image*>& images);

TokenGrid encode(const VqModel& model, const Image& image);
std::vector<TokenGrid> encode_batch(const VqModel& model, const std::vector<const Image*>& images);
Image decode(const VqModel& model, const TokenGrid& grid);

struct TrainHyper {
  double lr = 1e-3;
  int batch = 8;
  int steps = 1000;
  double beta = 0.25;
  std::uint64_t seed = 0;
  int log_every = 0;  // 0 = silent
};

nlohmann::json to_json(const TrainHyper& h);

/// Trains on random minibatches drawn from `pool`; returns the per-step loss curve.
/// Non-finite loss aborts with DivergenceError.
std::vector<LossBreakdown> train_vq(VqModel& model, const std::vector<Image>& pool, const TrainHyper& hyper,
                                    const std::function<void(int, const LossBreakdown&)>& on_step = {});

Archive to_archive(const VqModel& model, const nlohmann::json& config_echo = {});
VqModel from_archive(const Archive& a);
void save_vq(const VqModel& model, const std::filesystem::path& path, const nlohmann::json& config_echo = {});
VqModel load_vq(const std::filesystem::path& path);

}  // namespace e2eve::vq
