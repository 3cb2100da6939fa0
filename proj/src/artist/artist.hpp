#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "artist/transformer.hpp"
#include "common/archive.hpp"
#include "editsynth/editsynth.hpp"
#include "vq/vq.hpp"

namespace e2eve::artist {

/// Checkpoint of a frozen quantizer the artist was trained against.
struct QuantizerRef {
  std::string path;
  std::string sha256;
};

/// Artist transformer plus the two quantizers that define its vocabularies.
struct ArtistModel {
  ArtistConfig config;
  Transformer<float> net;
  std::shared_ptr<const vq::VqModel> vq_image;
  std::shared_ptr<const vq::VqModel> vq_driver;
  QuantizerRef image_ref;
  QuantizerRef driver_ref;
  long step = 0;
  std::string rng_state;
  nlohmann::json train_config = nlohmann::json::object();

  ArtistModel(const ArtistConfig& cfg, std::uint64_t seed) : config(cfg), net(cfg, seed) {}
};

/// Layout implied by a pair of quantizers and an architecture.
ArtistConfig layout_for(const vq::CodebookConfig& image, const vq::CodebookConfig& driver, int layers, int heads,
                        int d_model);

/// Builds a fresh model bound to quantizer checkpoints on disk (hashes recorded).
ArtistModel make_artist(const std::filesystem::path& vq_image, const std::filesystem::path& vq_driver, int layers,
                        int heads, int d_model, std::uint64_t seed);
/// Same, for in-memory quantizers (refs left empty).
ArtistModel make_artist(std::shared_ptr<const vq::VqModel> vq_image, std::shared_ptr<const vq::VqModel> vq_driver,
                        int layers, int heads, int d_model, std::uint64_t seed);

/// Tokenized quadruplet. An empty `driver` means the driver-free (null) conditioning.
struct TrainExample {
  std::vector<int> source;
  std::vector<int> driver;
  std::vector<int> target;
};

TrainExample tokenize(const ArtistModel& model, const editsynth::EditQuadruplet& q);
std::vector<TrainExample> tokenize_all(const ArtistModel& model, const std::vector<editsynth::EditQuadruplet>& qs);

/// Full teacher-forced sequence: [source | driver | target without its last token].
TokenSequence teacher_sequence(const ArtistConfig& cfg, const TrainExample& ex);

/// Mean per-token cross-entropy of the logits rows against targets, and optionally its gradient.
double cross_entropy(const nn::Mat<float>& logits, const std::vector<int>& targets, nn::Mat<float>* dlogits);

struct ArtistHyper {
  double lr = 3e-4;
  int batch = 8;
  int steps = 1000;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double driver_drop = 0.05;  // probability of swapping in the null driver
  double warmup_fraction = 0.05;
  double final_lr_fraction = 0.1;  // cosine decay floor
  std::uint64_t seed = 0;
  int log_every = 0;
};

nlohmann::json to_json(const ArtistHyper& h);
ArtistHyper artist_hyper_from_json(const nlohmann::json& j);

/// One optimizer update on `batch`; returns the mean per-token NLL before the update.
double train_step(ArtistModel& model, nn::AdamW<float>& opt, const std::vector<TrainExample>& batch, double lr);

std::vector<double> train_artist(ArtistModel& model, const std::vector<TrainExample>& data, const ArtistHyper& hyper,
                                 const std::function<void(int, double)>& on_step = {});

/// Mean per-token NLL over `data`; pure.
double eval_nll(const ArtistModel& model, const std::vector<TrainExample>& data, int batch = 16);

Archive to_archive(const ArtistModel& model, const nlohmann::json& config_echo = {});
void save_artist(const ArtistModel& model, const std::filesystem::path& path, const nlohmann::json& config_echo = {});

/// Loads the artist and its quantizers. Recorded paths are tried as given and relative to the
/// artist's directory unless overrides are supplied. A hash mismatch raises ModelMismatch.
ArtistModel load_artist(const std::filesystem::path& path, const std::optional<std::filesystem::path>& vq_image = {},
                        const std::optional<std::filesystem::path>& vq_driver = {});

}  // namespace e2eve::artist
