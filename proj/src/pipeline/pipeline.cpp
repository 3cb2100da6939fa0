#include "pipeline/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace e2eve::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vq_hyper_json(const vq::TrainHyper& h) {
  return {{"lr", h.lr}, {"batch", h.batch}, {"steps", h.steps}, {"beta", h.beta}};
}

vq::TrainHyper vq_hyper_from_json(const json& j) {
  vq::TrainHyper h;
  h.lr = j.at("lr").get<double>();
  h.batch = j.at("batch").get<int>();
  h.steps = j.at("steps").get<int>();
  h.beta = j.at("beta").get<double>();
  return h;
}

void log_line(const Log& log, const std::string& s) {
  if (log) log(s);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

json RunConfig::to_json() const {
  json hyper = artist::to_json(artist.hyper);
  hyper.erase("seed");
  hyper.erase("log_every");
  return {
      {"preset", preset},
      {"seed", seed},
      {"data",
       {{"n_images", data.n_images}, {"image_size", {data.height, data.width}}, {"val_fraction", data.val_fraction}}},
      {"synth",
       {{"per_image", synth.per_image},
        {"freeform", synth.freeform},
        {"regions", editsynth::to_json(synth.regions)},
        {"transform", editsynth::to_json(synth.transform)}}},
      {"vq",
       {{"image", {{"codebook", vq::to_json(vq.image)}, {"train", vq_hyper_json(vq.image_hyper)}}},
        {"driver", {{"codebook", vq::to_json(vq.driver)}, {"train", vq_hyper_json(vq.driver_hyper)}}}}},
      {"artist", {{"layers", artist.layers}, {"heads", artist.heads}, {"d_model", artist.d_model}, {"train", hyper}}},
      {"sampler", {{"n", sampler.n}, {"keep", sampler.keep}, {"policy", sampler::to_json(sampler.policy)}}},
      {"eval",
       {{"n_triplets", eval.n_triplets},
        {"crop_ratio", eval.crop_ratio},
        {"filter", eval.filter},
        {"n_distractors", eval.n_distractors}}},
      {"serve", {{"port", serve.port}, {"max_jobs", serve.max_jobs}, {"session_ttl_seconds", serve.session_ttl_seconds}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  try {
    RunConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& d = j.at("data");
    c.data.n_images = d.at("n_images").get<int>();
    c.data.height = d.at("image_size").at(0).get<int>();
    c.data.width = d.at("image_size").at(1).get<int>();
    c.data.val_fraction = d.at("val_fraction").get<double>();
    const auto& s = j.at("synth");
    c.synth.per_image = s.at("per_image").get<int>();
    c.synth.freeform = s.at("freeform").get<bool>();
    c.synth.regions = editsynth::region_sampler_from_json(s.at("regions"));
    c.synth.transform = editsynth::transform_from_json(s.at("transform"));
    const auto& v = j.at("vq");
    c.vq.image = vq::codebook_config_from_json(v.at("image").at("codebook"));
    c.vq.image_hyper = vq_hyper_from_json(v.at("image").at("train"));
    c.vq.driver = vq::codebook_config_from_json(v.at("driver").at("codebook"));
    c.vq.driver_hyper = vq_hyper_from_json(v.at("driver").at("train"));
    const auto& a = j.at("artist");
    c.artist.layers = a.at("layers").get<int>();
    c.artist.heads = a.at("heads").get<int>();
    c.artist.d_model = a.at("d_model").get<int>();
    c.artist.hyper = artist::artist_hyper_from_json(a.at("train"));
    const auto& sm = j.at("sampler");
    c.sampler.n = sm.at("n").get<int>();
    c.sampler.keep = sm.at("keep").get<int>();
    c.sampler.policy = sampler::policy_from_json(sm.at("policy"));
    const auto& e = j.at("eval");
    c.eval.n_triplets = e.at("n_triplets").get<int>();
    c.eval.crop_ratio = e.at("crop_ratio").get<double>();
    c.eval.filter = e.at("filter").get<bool>();
    c.eval.n_distractors = e.at("n_distractors").get<int>();
    const auto& sv = j.at("serve");
    c.serve.port = sv.at("port").get<int>();
    c.serve.max_jobs = sv.at("max_jobs").get<int>();
    c.serve.session_ttl_seconds = sv.at("session_ttl_seconds").get<int>();
    return c;
  } catch (const json::exception& ex) {
    fail(ErrorCode::InvalidArgument, std::string("bad run config: ") + ex.what());
  }
}

RunConfig RunConfig::patched(const json& patch) const {
  require(patch.is_object(), ErrorCode::InvalidArgument, "config patch must be a JSON object");
  json j = to_json();
  j.merge_patch(patch);
  return from_json(j);
}

void RunConfig::validate() const {
  require(data.n_images >= 2, ErrorCode::InvalidArgument, "data.n_images must be at least 2");
  require(data.val_fraction > 0.0 && data.val_fraction < 1.0, ErrorCode::InvalidArgument,
          "data.val_fraction must lie in (0, 1)");
  require(synth.per_image >= 1, ErrorCode::InvalidArgument, "synth.per_image must be positive");
  synth.transform.validate();
  vq.image.validate();
  vq.driver.validate();
  require(vq.image.image_height == data.height && vq.image.image_width == data.width, ErrorCode::ShapeError,
          "vq.image image_size must equal data.image_size");
  require(vq.driver.image_height == synth.transform.driver_height &&
              vq.driver.image_width == synth.transform.driver_width,
          ErrorCode::ShapeError, "vq.driver image_size must equal synth.transform driver_size");
  for (const auto* h : {&vq.image_hyper, &vq.driver_hyper})
    require(h->steps >= 0 && h->batch >= 1 && h->lr > 0.0, ErrorCode::InvalidArgument, "bad vq train settings");
  require(artist.layers >= 1 && artist.heads >= 1, ErrorCode::InvalidArgument, "artist needs at least one layer and head");
  require(artist.d_model % artist.heads == 0, ErrorCode::InvalidArgument, "artist.d_model must be a multiple of artist.heads");
  require(artist.hyper.steps >= 0 && artist.hyper.batch >= 1 && artist.hyper.lr > 0.0, ErrorCode::InvalidArgument,
          "bad artist train settings");
  sampler.policy.validate(vq.image.codebook_size);
  require(sampler.n >= 1 && sampler.keep >= 1 && sampler.keep <= sampler.n, ErrorCode::InvalidArgument,
          "sampler needs 1 <= keep <= n");
  require(eval.n_triplets >= 1 && eval.n_distractors >= 0, ErrorCode::InvalidArgument, "bad eval settings");
  require(eval.crop_ratio > 0.0 && eval.crop_ratio < 1.0, ErrorCode::InvalidArgument, "eval.crop_ratio must lie in (0, 1)");
  require(serve.port >= 0 && serve.port < 65536 && serve.max_jobs >= 1 && serve.session_ttl_seconds > 0,
          ErrorCode::InvalidArgument, "bad serve settings");
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "toy") {
    c.vq.driver.image_height = c.synth.transform.driver_height;
    c.vq.driver.image_width = c.synth.transform.driver_width;
    return c;
  }
  require(name == "paper-scale", ErrorCode::InvalidArgument, "unknown preset '" + name + "' (toy, paper-scale)");
  c.preset = name;
  c.data.n_images = 10000;
  c.data.height = c.data.width = 256;
  c.data.val_fraction = 0.05;
  c.synth.transform.driver_height = c.synth.transform.driver_width = 64;
  c.vq.image = {1024, 256, 16, 128, 256, 256, 3};
  c.vq.driver = {1024, 256, 16, 128, 64, 64, 3};
  c.vq.image_hyper = {4.5e-6, 64, 100000, 0.25, 0, 0};
  c.vq.driver_hyper = c.vq.image_hyper;
  c.artist.layers = 24;
  c.artist.heads = 16;
  c.artist.d_model = 1024;
  c.artist.hyper.lr = 4.5e-6;
  c.artist.hyper.batch = 512;
  c.artist.hyper.steps = 100000;
  c.sampler.policy.kind = sampler::PolicyKind::TopP;
  c.sampler.policy.p = 0.9;
  c.eval.n_triplets = 1000;
  return c;
}

RunConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorCode::IOFailure, "cannot open config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    fail(ErrorCode::InvalidArgument, "config " + file.string() + ": " + ex.what());
  }
  require(j.is_object(), ErrorCode::InvalidArgument, "config must be a JSON object");
  const std::string base = j.value("preset", std::string("toy"));
  return preset(base).patched(j);
}

Seeds derive_seeds(std::uint64_t seed) {
  return {derive_seed(seed, "data"),      derive_seed(seed, "synth"),   derive_seed(seed, "vq-image"),
          derive_seed(seed, "vq-driver"), derive_seed(seed, "artist"),  derive_seed(seed, "sampler"),
          derive_seed(seed, "eval")};
}

json Seeds::to_json() const {
  return {{"data", data},         {"synth", synth},   {"vq_image", vq_image}, {"vq_driver", vq_driver},
          {"artist", artist},     {"sampler", sampler}, {"eval", eval}};
}

std::string describe(const RunConfig& c) {
  const auto layout = artist::layout_for(c.vq.image, c.vq.driver, c.artist.layers, c.artist.heads, c.artist.d_model);
  std::ostringstream o;
  o << "preset: " << c.preset << "\n"
    << "seed: " << c.seed << "\n"
    << "images: " << c.data.height << "x" << c.data.width << ", driver " << c.synth.transform.driver_height << "x"
    << c.synth.transform.driver_width << "\n"
    << "vq image: K=" << c.vq.image.codebook_size << " f=" << c.vq.image.downsample << " grid "
    << c.vq.image.grid_height() << "x" << c.vq.image.grid_width() << "\n"
    << "vq driver: K=" << c.vq.driver.codebook_size << " f=" << c.vq.driver.downsample << " grid "
    << c.vq.driver.grid_height() << "x" << c.vq.driver.grid_width() << "\n"
    << "artist: " << c.artist.layers << " layers / " << c.artist.heads << " heads / " << c.artist.d_model
    << " dim, sequence " << layout.max_len() << " (" << layout.n_src() << " + " << layout.n_drv() << " + " << layout.n_out()
    << ")\n"
    << "artist train: batch " << c.artist.hyper.batch << ", lr " << c.artist.hyper.lr << ", steps "
    << c.artist.hyper.steps << "\n"
    << "sampler: " << sampler::policy_kind_name(c.sampler.policy.kind) << " p=" << c.sampler.policy.p
    << " k=" << c.sampler.policy.k << " T=" << c.sampler.policy.temperature << ", n " << c.sampler.n << " keep "
    << c.sampler.keep << "\n"
    << "alpha: " << c.synth.transform.alpha_min << "-" << c.synth.transform.alpha_max << "\n";
  return o.str();
}

editsynth::SynthOptions synth_options(const RunConfig& cfg, dataio::Split split) {
  editsynth::SynthOptions o;
  o.transform = cfg.synth.transform;
  o.regions = cfg.synth.regions;
  o.per_image = cfg.synth.per_image;
  o.freeform = cfg.synth.freeform;
  o.seed = derive_seeds(cfg.seed).synth;
  o.split = split;
  return o;
}

evalkit::TripletConfig triplet_config(const RunConfig& cfg) {
  evalkit::TripletConfig t;
  t.n = cfg.eval.n_triplets;
  t.regions = cfg.synth.regions;
  t.crop_ratio = cfg.eval.crop_ratio;
  t.driver_height = cfg.synth.transform.driver_height;
  t.driver_width = cfg.synth.transform.driver_width;
  t.freeform = cfg.synth.freeform;
  t.seed = derive_seeds(cfg.seed).eval;
  return t;
}

evalkit::EvalConfig eval_config(const RunConfig& cfg) {
  evalkit::EvalConfig e;
  e.n_candidates = cfg.sampler.n;
  e.n_keep = cfg.sampler.keep;
  e.filter = cfg.eval.filter;
  e.policy = cfg.sampler.policy;
  e.n_distractors = cfg.eval.n_distractors;
  e.seed = derive_seeds(cfg.seed).sampler;
  return e;
}

std::vector<Image> load_split(const dataio::DatasetManifest& m, dataio::Split split) {
  std::vector<Image> out;
  for (const auto* e : m.split(split)) out.push_back(dataio::load_image(m, *e));
  return out;
}

vq::VqModel train_image_vq(const RunConfig& cfg, const std::vector<Image>& pool) {
  const auto seeds = derive_seeds(cfg.seed);
  vq::VqModel model("image", cfg.vq.image, derive_seed(seeds.vq_image, "init"));
  auto h = cfg.vq.image_hyper;
  h.seed = derive_seed(seeds.vq_image, "train");
  vq::train_vq(model, pool, h);
  return model;
}

vq::VqModel train_driver_vq(const RunConfig& cfg, const std::vector<editsynth::EditQuadruplet>& quads) {
  const auto seeds = derive_seeds(cfg.seed);
  std::vector<Image> pool;
  pool.reserve(quads.size());
  for (const auto& q : quads) pool.push_back(q.driver);
  vq::VqModel model("driver", cfg.vq.driver, derive_seed(seeds.vq_driver, "init"));
  auto h = cfg.vq.driver_hyper;
  h.seed = derive_seed(seeds.vq_driver, "train");
  vq::train_vq(model, pool, h);
  return model;
}

void fit_artist(const RunConfig& cfg, artist::ArtistModel& model,
                const std::vector<editsynth::EditQuadruplet>& quads, const Log& log) {
  const auto data = artist::tokenize_all(model, quads);
  auto h = cfg.artist.hyper;
  h.seed = derive_seed(derive_seeds(cfg.seed).artist, "train");
  const int every = std::max(1, h.steps / 10);
  artist::train_artist(model, data, h, [&](int step, double nll) {
    if (step % every == 0 || step + 1 == h.steps)
      log_line(log, "artist step " + std::to_string(step) + " nll " + std::to_string(nll));
  });
}

artist::ArtistModel train_artist(const RunConfig& cfg, std::shared_ptr<const vq::VqModel> image,
                                 std::shared_ptr<const vq::VqModel> driver,
                                 const std::vector<editsynth::EditQuadruplet>& quads, const Log& log) {
  auto model = artist::make_artist(std::move(image), std::move(driver), cfg.artist.layers, cfg.artist.heads,
                                   cfg.artist.d_model, derive_seed(derive_seeds(cfg.seed).artist, "init"));
  fit_artist(cfg, model, quads, log);
  return model;
}

json evaluate_all(const RunConfig& cfg, const artist::ArtistModel& model, const dataio::DatasetManifest& manifest,
                  const Log& log) {
  const auto tcfg = triplet_config(cfg);
  const auto triplets = evalkit::build_eval_triplets(manifest, tcfg);
  const auto reference = evalkit::build_reference_set(manifest, tcfg);
  const auto ecfg = eval_config(cfg);
  const evalkit::FeatureEmbedder embedder;
  json methods = json::object();
  for (auto m : {evalkit::Method::E2EVE, evalkit::Method::CopyPaste, evalkit::Method::Inpaint}) {
    const auto t0 = std::chrono::steady_clock::now();
    auto report = evalkit::evaluate(&model, m, triplets, reference, ecfg, embedder);
    log_line(log, std::string("evaluated ") + evalkit::method_name(m) + " in " + std::to_string(seconds_since(t0)) +
                      " s: R@1 " + std::to_string(report.r_at_1) + " fid " + std::to_string(report.fid_image));
    methods[evalkit::method_name(m)] = evalkit::to_json(report);
  }
  return {{"methods", methods},
          {"triplets", evalkit::to_json(tcfg)},
          {"eval", evalkit::to_json(ecfg)},
          {"embedder", embedder.descriptor()}};
}

json run_pipeline(const RunConfig& cfg, const fs::path& workdir, const Log& log) {
  cfg.validate();
  const auto seeds = derive_seeds(cfg.seed);
  const json echo = cfg.to_json();
  fs::create_directories(workdir);
  const auto t0 = std::chrono::steady_clock::now();

  log_line(log, "toy corpus: " + std::to_string(cfg.data.n_images) + " images");
  const auto manifest = dataio::make_toy_corpus(cfg.data.n_images, cfg.data.height, cfg.data.width, seeds.data,
                                                workdir / "data", cfg.data.val_fraction);

  const auto opts = synth_options(cfg, dataio::Split::Train);
  const auto quads = editsynth::synthesize_dataset(manifest, opts);
  editsynth::write_shards(workdir / "shards", quads, echo);
  log_line(log, "synthesized " + std::to_string(quads.size()) + " quadruplets");

  const auto train_images = load_split(manifest, dataio::Split::Train);
  auto vq_image = std::make_shared<vq::VqModel>(train_image_vq(cfg, train_images));
  vq::save_vq(*vq_image, workdir / "vq_image.ckpt", echo);
  log_line(log, "image quantizer trained");
  auto vq_driver = std::make_shared<vq::VqModel>(train_driver_vq(cfg, quads));
  vq::save_vq(*vq_driver, workdir / "vq_driver.ckpt", echo);
  log_line(log, "driver quantizer trained");

  auto model = artist::make_artist(workdir / "vq_image.ckpt", workdir / "vq_driver.ckpt", cfg.artist.layers,
                                   cfg.artist.heads, cfg.artist.d_model, derive_seed(seeds.artist, "init"));
  fit_artist(cfg, model, quads, log);
  artist::save_artist(model, workdir / "artist.ckpt", echo);

  json report = evaluate_all(cfg, model, manifest, log);
  report["config"] = echo;
  report["seeds"] = seeds.to_json();
  report["version"] = version_string();
  report["seconds"] = seconds_since(t0);
  std::ofstream(workdir / "report.json") << report.dump(2) << "\n";
  log_line(log, "report written to " + (workdir / "report.json").string());
  return report;
}

}  // namespace e2eve::pipeline
