#include "artist/artist.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace e2eve::artist {

namespace fs = std::filesystem;

ArtistConfig layout_for(const vq::CodebookConfig& image, const vq::CodebookConfig& driver, int layers, int heads,
                        int d_model) {
  ArtistConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d_model;
  c.src_h = c.out_h = image.grid_height();
  c.src_w = c.out_w = image.grid_width();
  c.drv_h = driver.grid_height();
  c.drv_w = driver.grid_width();
  c.k_img = image.codebook_size;
  c.k_drv = driver.codebook_size;
  c.validate();
  return c;
}

ArtistModel make_artist(std::shared_ptr<const vq::VqModel> vq_image, std::shared_ptr<const vq::VqModel> vq_driver,
                        int layers, int heads, int d_model, std::uint64_t seed) {
  require(vq_image && vq_driver, ErrorCode::InvalidArgument, "both quantizers are required");
  ArtistModel m(layout_for(vq_image->config, vq_driver->config, layers, heads, d_model), seed);
  m.vq_image = std::move(vq_image);
  m.vq_driver = std::move(vq_driver);
  return m;
}

ArtistModel make_artist(const fs::path& vq_image, const fs::path& vq_driver, int layers, int heads, int d_model,
                        std::uint64_t seed) {
  auto img = std::make_shared<const vq::VqModel>(vq::load_vq(vq_image));
  auto drv = std::make_shared<const vq::VqModel>(vq::load_vq(vq_driver));
  ArtistModel m = make_artist(img, drv, layers, heads, d_model, seed);
  m.image_ref = {fs::absolute(vq_image).lexically_normal().string(), sha256_file(vq_image)};
  m.driver_ref = {fs::absolute(vq_driver).lexically_normal().string(), sha256_file(vq_driver)};
  return m;
}

TrainExample tokenize(const ArtistModel& model, const editsynth::EditQuadruplet& q) {
  require(model.vq_image && model.vq_driver, ErrorCode::ModelMismatch, "artist has no quantizers attached");
  const auto grids = vq::encode_batch(*model.vq_image, {&q.source, &q.target});
  TrainExample ex;
  ex.source = grids[0].tokens;
  ex.target = grids[1].tokens;
  ex.driver = vq::encode(*model.vq_driver, q.driver).tokens;
  return ex;
}

std::vector<TrainExample> tokenize_all(const ArtistModel& model, const std::vector<editsynth::EditQuadruplet>& qs) {
  std::vector<TrainExample> out;
  out.reserve(qs.size());
  for (const auto& q : qs) out.push_back(tokenize(model, q));
  return out;
}

TokenSequence teacher_sequence(const ArtistConfig& cfg, const TrainExample& ex) {
  require(ex.target.size() == static_cast<size_t>(cfg.n_out()), ErrorCode::ShapeError, "target token count mismatch");
  std::optional<std::span<const int>> drv;
  if (!ex.driver.empty()) drv = std::span<const int>(ex.driver);
  return build_sequence(cfg, ex.source, drv, std::span<const int>(ex.target).first(ex.target.size() - 1));
}

double cross_entropy(const nn::Mat<float>& logits, const std::vector<int>& targets, nn::Mat<float>* dlogits) {
  require(static_cast<size_t>(logits.rows()) == targets.size(), ErrorCode::ShapeError, "logits/targets mismatch");
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<size_t>(r)];
    require(t >= 0 && t < logits.cols(), ErrorCode::InvalidToken, "target token outside vocab");
    const auto p = softmax<float>(std::span<const float>(logits.row(r).data(), static_cast<size_t>(logits.cols())));
    total -= std::log(std::max(p[static_cast<size_t>(t)], 1e-300));
    if (dlogits) {
      for (Eigen::Index k = 0; k < logits.cols(); ++k)
        (*dlogits)(r, k) = static_cast<float>((p[static_cast<size_t>(k)] - (k == t ? 1.0 : 0.0)) * inv_n);
    }
  }
  return total * inv_n;
}

nlohmann::json to_json(const ArtistHyper& h) {
  return {{"lr", h.lr},
          {"batch", h.batch},
          {"steps", h.steps},
          {"weight_decay", h.weight_decay},
          {"grad_clip", h.grad_clip},
          {"driver_drop", h.driver_drop},
          {"warmup_fraction", h.warmup_fraction},
          {"final_lr_fraction", h.final_lr_fraction},
          {"seed", h.seed},
          {"optimizer", "adamw"}};
}

ArtistHyper artist_hyper_from_json(const nlohmann::json& j) {
  ArtistHyper h;
  h.lr = j.value("lr", h.lr);
  h.batch = j.value("batch", h.batch);
  h.steps = j.value("steps", h.steps);
  h.weight_decay = j.value("weight_decay", h.weight_decay);
  h.grad_clip = j.value("grad_clip", h.grad_clip);
  h.driver_drop = j.value("driver_drop", h.driver_drop);
  h.warmup_fraction = j.value("warmup_fraction", h.warmup_fraction);
  h.final_lr_fraction = j.value("final_lr_fraction", h.final_lr_fraction);
  h.seed = j.value("seed", h.seed);
  return h;
}

namespace {

/// Groups examples so every forward batch shares one sequence shape.
nn::Mat<float> batch_logits(const Transformer<float>& net, const std::vector<TrainExample>& batch,
                            std::vector<int>& targets, Transformer<float>::Cache* cache) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(batch.size());
  targets.clear();
  for (const auto& ex : batch) {
    seqs.push_back(teacher_sequence(net.config(), ex));
    targets.insert(targets.end(), ex.target.begin(), ex.target.end());
  }
  return net.forward(seqs, cache);
}

}  // namespace

double train_step(ArtistModel& model, nn::AdamW<float>& opt, const std::vector<TrainExample>& batch, double lr) {
  Transformer<float>::Cache cache;
  std::vector<int> targets;
  const nn::Mat<float> logits = batch_logits(model.net, batch, targets, &cache);
  nn::Mat<float> dlogits;
  const double nll = cross_entropy(logits, targets, &dlogits);
  require(std::isfinite(nll), ErrorCode::DivergenceError, "non-finite artist loss at step " + std::to_string(model.step));
  opt.zero_grad();
  model.net.backward(dlogits, cache);
  opt.step(lr);
  ++model.step;
  return nll;
}

std::vector<double> train_artist(ArtistModel& model, const std::vector<TrainExample>& data, const ArtistHyper& hyper,
                                 const std::function<void(int, double)>& on_step) {
  require(hyper.steps >= 0 && hyper.batch >= 1, ErrorCode::InvalidArgument, "steps >= 0 and batch >= 1 required");
  require(hyper.driver_drop >= 0.0 && hyper.driver_drop <= 1.0, ErrorCode::InvalidArgument,
          "driver_drop must lie in [0,1]");
  std::vector<double> curve;
  if (hyper.steps == 0) return curve;
  require(!data.empty(), ErrorCode::InsufficientData, "no training examples");
  require(hyper.driver_drop == 0.0 || model.config.null_driver, ErrorCode::Unsupported,
          "driver dropout needs the null-driver embedding");

  std::vector<nn::Param<float>*> params;
  model.net.collect(params);
  nn::AdamWConfig ocfg;
  ocfg.lr = hyper.lr;
  ocfg.weight_decay = hyper.weight_decay;
  ocfg.grad_clip = hyper.grad_clip;
  nn::AdamW<float> opt(params, ocfg);
  Rng rng(derive_seed(hyper.seed, "artist-train"));
  if (!model.rng_state.empty() && model.step > 0) rng.set_state(model.rng_state);

  const double warm = std::max(1.0, hyper.warmup_fraction * hyper.steps);
  for (int s = 0; s < hyper.steps; ++s) {
    std::vector<TrainExample> batch;
    batch.reserve(static_cast<size_t>(hyper.batch));
    for (int b = 0; b < hyper.batch; ++b) {
      batch.push_back(data[static_cast<size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))]);
      if (hyper.driver_drop > 0.0 && rng.bernoulli(hyper.driver_drop)) batch.back().driver.clear();
    }
    double lr = hyper.lr;
    if (s + 1 < warm) {
      lr *= (s + 1) / warm;
    } else {
      const double prog = (s + 1 - warm) / std::max(1.0, hyper.steps - warm);
      lr *= hyper.final_lr_fraction + (1.0 - hyper.final_lr_fraction) * 0.5 * (1.0 + std::cos(M_PI * prog));
    }
    const double nll = train_step(model, opt, batch, lr);
    curve.push_back(nll);
    if (on_step) on_step(s, nll);
    if (hyper.log_every > 0 && (s % hyper.log_every == 0 || s + 1 == hyper.steps))
      std::cerr << "[artist] step " << s << " nll " << nll << " lr " << lr << "\n";
  }
  model.rng_state = rng.state();
  model.train_config = to_json(hyper);
  return curve;
}

double eval_nll(const ArtistModel& model, const std::vector<TrainExample>& data, int batch) {
  if (data.empty()) return 0.0;
  batch = std::max(batch, 1);
  double total = 0.0;
  size_t tokens = 0;
  // Driver-free and driven examples differ only in embeddings, so they can share a batch.
  for (size_t i = 0; i < data.size(); i += static_cast<size_t>(batch)) {
    const size_t end = std::min(data.size(), i + static_cast<size_t>(batch));
    std::vector<TrainExample> chunk(data.begin() + static_cast<std::ptrdiff_t>(i),
                                    data.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<int> targets;
    const nn::Mat<float> logits = batch_logits(model.net, chunk, targets, nullptr);
    total += cross_entropy(logits, targets, nullptr) * static_cast<double>(targets.size());
    tokens += targets.size();
  }
  return total / static_cast<double>(tokens);
}

Archive to_archive(const ArtistModel& model, const nlohmann::json& config_echo) {
  Archive a;
  a.meta = {{"format_version", 1},
            {"kind", "artist"},
            {"config", to_json(model.config)},
            {"step", model.step},
            {"rng_state", model.rng_state},
            {"train", model.train_config},
            {"vq_image", {{"path", model.image_ref.path}, {"sha256", model.image_ref.sha256}}},
            {"vq_driver", {{"path", model.driver_ref.path}, {"sha256", model.driver_ref.sha256}}},
            {"effective_config", config_echo},
            {"version", version_string()}};
  std::vector<nn::Param<float>*> params;
  const_cast<Transformer<float>&>(model.net).collect(params);
  for (const auto* p : params)
    a.tensors[p->name] = NamedTensor{{p->value.rows(), p->value.cols()},
                                     std::vector<float>(p->value.data(), p->value.data() + p->value.size())};
  return a;
}

void save_artist(const ArtistModel& model, const fs::path& path, const nlohmann::json& config_echo) {
  require(!model.image_ref.sha256.empty() && !model.driver_ref.sha256.empty(), ErrorCode::InvalidArgument,
          "artist checkpoints must reference saved quantizer checkpoints");
  to_archive(model, config_echo).save(path);
}

namespace {

std::pair<fs::path, std::string> resolve_quantizer(const nlohmann::json& ref, const fs::path& artist_dir,
                                                   const std::optional<fs::path>& override_path,
                                                   const std::string& role) {
  const std::string recorded = ref.at("path").get<std::string>();
  const std::string expected = ref.at("sha256").get<std::string>();
  std::vector<fs::path> candidates;
  if (override_path) {
    candidates.push_back(*override_path);
  } else {
    candidates.push_back(recorded);
    candidates.push_back(artist_dir / fs::path(recorded).filename());
  }
  for (const auto& c : candidates) {
    if (!fs::exists(c)) continue;
    const std::string actual = sha256_file(c);
    require(actual == expected, ErrorCode::ModelMismatch,
            role + " quantizer " + c.string() + " has hash " + actual.substr(0, 12) + ", artist expects " +
                expected.substr(0, 12));
    return {c, actual};
  }
  fail(ErrorCode::IOFailure, role + " quantizer checkpoint not found (recorded path " + recorded + ")");
}

}  // namespace

ArtistModel load_artist(const fs::path& path, const std::optional<fs::path>& vq_image,
                        const std::optional<fs::path>& vq_driver) {
  const Archive a = Archive::load(path);
  require(a.meta.value("kind", "") == "artist", ErrorCode::FormatError, "archive is not an artist checkpoint");
  require(a.meta.value("format_version", 0) == 1, ErrorCode::FormatError, "unsupported artist checkpoint version");
  const fs::path dir = fs::absolute(path).parent_path();
  const auto [img_path, img_hash] = resolve_quantizer(a.meta.at("vq_image"), dir, vq_image, "image");
  const auto [drv_path, drv_hash] = resolve_quantizer(a.meta.at("vq_driver"), dir, vq_driver, "driver");

  ArtistModel m(artist_config_from_json(a.meta.at("config")), 0);
  m.vq_image = std::make_shared<const vq::VqModel>(vq::load_vq(img_path));
  m.vq_driver = std::make_shared<const vq::VqModel>(vq::load_vq(drv_path));
  const ArtistConfig expect = layout_for(m.vq_image->config, m.vq_driver->config, m.config.n_layers,
                                         m.config.n_heads, m.config.d_model);
  require(expect.n_src() == m.config.n_src() && expect.n_drv() == m.config.n_drv() &&
              expect.k_img == m.config.k_img && expect.k_drv == m.config.k_drv,
          ErrorCode::ModelMismatch, "quantizer layouts do not match the artist");
  m.image_ref = {img_path.string(), img_hash};
  m.driver_ref = {drv_path.string(), drv_hash};
  m.step = a.meta.value("step", 0L);
  m.rng_state = a.meta.value("rng_state", "");
  m.train_config = a.meta.value("train", nlohmann::json::object());
  std::vector<nn::Param<float>*> params;
  m.net.collect(params);
  for (auto* p : params) {
    const auto it = a.tensors.find(p->name);
    require(it != a.tensors.end(), ErrorCode::FormatError, "checkpoint lacks tensor " + p->name);
    require(it->second.shape.size() == 2 && it->second.shape[0] == p->value.rows() &&
                it->second.shape[1] == p->value.cols(),
            ErrorCode::FormatError, "tensor " + p->name + " has the wrong shape");
    std::copy(it->second.data.begin(), it->second.data.end(), p->value.data());
  }
  return m;
}

}  // namespace e2eve::artist
