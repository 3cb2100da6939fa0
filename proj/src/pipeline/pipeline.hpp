#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "artist/artist.hpp"
#include "dataio/dataio.hpp"
#include "editsynth/editsynth.hpp"
#include "evalkit/evalkit.hpp"
#include "sampler/sampler.hpp"
#include "vq/vq.hpp"

namespace e2eve::pipeline {

/// Every knob of an end-to-end run. Serialized as JSON; a config file is a patch over a preset.
struct RunConfig {
  std::string preset = "toy";
  std::uint64_t seed = 0;

  struct Data {
    int n_images = 320;  // toy corpus size
    int height = 64;
    int width = 64;
    double val_fraction = 0.2;
  } data;

  struct Synth {
    int per_image = 8;
    bool freeform = false;
    editsynth::RegionSamplerConfig regions;
    editsynth::TransformConfig transform;
  } synth;

  struct Vq {
    vq::CodebookConfig image;
    vq::CodebookConfig driver;
    vq::TrainHyper image_hyper;
    vq::TrainHyper driver_hyper;
  } vq;

  struct Artist {
    int layers = 4;
    int heads = 4;
    int d_model = 128;
    artist::ArtistHyper hyper;
  } artist;

  struct Sampler {
    int n = 20;
    int keep = 10;
    sampler::SamplingPolicy policy;
  } sampler;

  struct Eval {
    int n_triplets = 64;
    double crop_ratio = 0.6;
    bool filter = true;
    int n_distractors = 100;
  } eval;

  struct Serve {
    int port = 8080;
    int max_jobs = 2;
    int session_ttl_seconds = 3600;
  } serve;

  nlohmann::json to_json() const;
  /// Applies `patch` (RFC 7386 merge patch) over this config's JSON form.
  RunConfig patched(const nlohmann::json& patch) const;
  static RunConfig from_json(const nlohmann::json& j);
  void validate() const;
};

/// "toy" or "paper-scale". InvalidArgument otherwise.
RunConfig preset(const std::string& name);

/// Loads a JSON config file: its optional "preset" picks the base, the rest patches it.
RunConfig load_config(const std::filesystem::path& file);

/// Module seeds all derive from the run seed: derive_seed(seed, module name).
struct Seeds {
  std::uint64_t data, synth, vq_image, vq_driver, artist, sampler, eval;
  nlohmann::json to_json() const;
};
Seeds derive_seeds(std::uint64_t seed);

/// Human-readable summary for --dry-run.
std::string describe(const RunConfig& cfg);

using Log = std::function<void(const std::string&)>;

editsynth::SynthOptions synth_options(const RunConfig& cfg, dataio::Split split);
evalkit::TripletConfig triplet_config(const RunConfig& cfg);
evalkit::EvalConfig eval_config(const RunConfig& cfg);

/// Training images of the manifest's split, resized to the manifest size.
std::vector<Image> load_split(const dataio::DatasetManifest& m, dataio::Split split);

vq::VqModel train_image_vq(const RunConfig& cfg, const std::vector<Image>& pool);
vq::VqModel train_driver_vq(const RunConfig& cfg, const std::vector<editsynth::EditQuadruplet>& quads);
/// Trains `model` in place on the tokenized quadruplets with the run's artist seed.
void fit_artist(const RunConfig& cfg, artist::ArtistModel& model,
                const std::vector<editsynth::EditQuadruplet>& quads, const Log& log = {});
artist::ArtistModel train_artist(const RunConfig& cfg, std::shared_ptr<const vq::VqModel> image,
                                 std::shared_ptr<const vq::VqModel> driver,
                                 const std::vector<editsynth::EditQuadruplet>& quads, const Log& log = {});

/// Evaluates E2EVE (with cfg.eval.filter), Copy-Paste and Inpaint on one triplet set.
nlohmann::json evaluate_all(const RunConfig& cfg, const artist::ArtistModel& model,
                            const dataio::DatasetManifest& manifest, const Log& log = {});

/// toy corpus -> synth -> train-vq (x2) -> train-artist -> evaluate, all under `workdir`.
/// Returns the report (also written to workdir/report.json).
nlohmann::json run_pipeline(const RunConfig& cfg, const std::filesystem::path& workdir, const Log& log = {});

}  // namespace e2eve::pipeline
