#include "vq/vq.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace e2eve::vq {

using nn::FeatureMap;
using nn::Mat;

void CodebookConfig::validate() const {
  require(codebook_size >= 1, ErrorCode::InvalidArgument, "codebook_size must be >= 1");
  require(code_dim >= 1 && hidden >= 1 && channels >= 1, ErrorCode::InvalidArgument, "widths must be positive");
  require(downsample >= 1 && (downsample & (downsample - 1)) == 0, ErrorCode::InvalidArgument,
          "downsample factor must be a power of two");
  require(image_height % downsample == 0 && image_width % downsample == 0 && image_height > 0 && image_width > 0,
          ErrorCode::ShapeError, "image side must be divisible by the downsample factor");
}

nlohmann::json to_json(const CodebookConfig& c) {
  return {{"codebook_size", c.codebook_size}, {"code_dim", c.code_dim}, {"downsample", c.downsample},
          {"hidden", c.hidden},               {"image_size", {c.image_height, c.image_width}},
          {"channels", c.channels}};
}

CodebookConfig codebook_config_from_json(const nlohmann::json& j) {
  CodebookConfig c;
  c.codebook_size = j.at("codebook_size").get<int>();
  c.code_dim = j.at("code_dim").get<int>();
  c.downsample = j.at("downsample").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.image_height = j.at("image_size").at(0).get<int>();
  c.image_width = j.at("image_size").at(1).get<int>();
  c.channels = j.value("channels", 3);
  return c;
}

nlohmann::json to_json(const TrainHyper& h) {
  return {{"lr", h.lr}, {"batch", h.batch}, {"steps", h.steps}, {"beta", h.beta}, {"seed", h.seed}};
}

template <typename T>
Quantized<T> quantize(const Mat<T>& latents, const Mat<T>& codebook) {
  require(latents.cols() == codebook.cols(), ErrorCode::ShapeError, "latent dim differs from codebook dim");
  require(codebook.rows() >= 1, ErrorCode::ShapeError, "empty codebook");
  Quantized<T> q;
  q.tokens.resize(static_cast<size_t>(latents.rows()));
  q.vectors.resize(latents.rows(), latents.cols());
  const Eigen::Index dim = latents.cols();
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    const T* e = latents.row(i).data();
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_k = 0;
    for (Eigen::Index k = 0; k < codebook.rows(); ++k) {
      const T* c = codebook.row(k).data();
      double d = 0.0;
      for (Eigen::Index j = 0; j < dim; ++j) {
        const double diff = static_cast<double>(e[j]) - static_cast<double>(c[j]);
        d += diff * diff;
      }
      if (d < best) {  // strict: the earliest minimum wins
        best = d;
        best_k = k;
      }
    }
    q.tokens[static_cast<size_t>(i)] = static_cast<int>(best_k);
    q.vectors.row(i) = codebook.row(best_k);
  }
  return q;
}

template <typename T>
LossBreakdown vq_loss(const std::vector<T>& x, const std::vector<T>& x_hat, const Mat<T>& encoder_out,
                      const Mat<T>& quantized, double beta) {
  require(x.size() == x_hat.size() && !x.empty(), ErrorCode::ShapeError, "reconstruction shape mismatch");
  require(encoder_out.rows() == quantized.rows() && encoder_out.cols() == quantized.cols() && encoder_out.size() > 0,
          ErrorCode::ShapeError, "latent shape mismatch");
  LossBreakdown l;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(x_hat[i]);
    l.recon += d * d;
  }
  l.recon /= static_cast<double>(x.size());
  double lat = 0.0;
  for (Eigen::Index i = 0; i < encoder_out.size(); ++i) {
    const double d = static_cast<double>(encoder_out.data()[i]) - static_cast<double>(quantized.data()[i]);
    lat += d * d;
  }
  lat /= static_cast<double>(encoder_out.size());
  // Same value, different gradient routing: codebook moves toward sg[e], encoder commits toward sg[q].
  l.codebook = lat;
  l.commit = lat;
  l.total = l.recon + l.codebook + beta * l.commit;
  return l;
}

template <typename T>
VqNet<T>::VqNet(const CodebookConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), codebook_("codebook", cfg.codebook_size, cfg.code_dim, false) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "vq-init"));
  const int levels = static_cast<int>(std::lround(std::log2(cfg.downsample)));
  const int c = cfg.hidden;

  encoder_.add(std::make_unique<nn::Conv2d<T>>("enc.in", cfg.channels, c, 3, 1, 1, rng));
  encoder_.add(std::make_unique<nn::ReLU<T>>());
  for (int l = 0; l < levels; ++l) {
    encoder_.add(std::make_unique<nn::Conv2d<T>>("enc.down" + std::to_string(l), c, c, 4, 2, 1, rng));
    encoder_.add(std::make_unique<nn::ReLU<T>>());
  }
  encoder_.add(std::make_unique<nn::Conv2d<T>>("enc.mid", c, c, 3, 1, 1, rng));
  encoder_.add(std::make_unique<nn::ReLU<T>>());
  encoder_.add(std::make_unique<nn::Conv2d<T>>("enc.out", c, cfg.code_dim, 1, 1, 0, rng));

  decoder_.add(std::make_unique<nn::Conv2d<T>>("dec.in", cfg.code_dim, c, 3, 1, 1, rng));
  decoder_.add(std::make_unique<nn::ReLU<T>>());
  for (int l = 0; l < levels; ++l) {
    decoder_.add(std::make_unique<nn::Upsample2x<T>>());
    decoder_.add(std::make_unique<nn::Conv2d<T>>("dec.up" + std::to_string(l), c, c, 3, 1, 1, rng));
    decoder_.add(std::make_unique<nn::ReLU<T>>());
  }
  decoder_.add(std::make_unique<nn::Conv2d<T>>("dec.out", c, cfg.channels, 3, 1, 1, rng));

  const double a = 1.0 / cfg.codebook_size;
  nn::init_uniform(codebook_, -a, a, rng);
}

template <typename T>
Mat<T> VqNet<T>::encode_latents(const FeatureMap<T>& images, std::vector<nn::LayerCache<T>>* caches) const {
  require(images.c == cfg_.channels && images.h == cfg_.image_height && images.w == cfg_.image_width,
          ErrorCode::ShapeError,
          "encoder expects " + std::to_string(cfg_.image_height) + "x" + std::to_string(cfg_.image_width) +
              " inputs, got " + std::to_string(images.h) + "x" + std::to_string(images.w));
  const FeatureMap<T> z = encoder_.forward(images, caches);
  const size_t plane = z.plane();
  Mat<T> lat(static_cast<Eigen::Index>(z.n * plane), z.c);
  for (int i = 0; i < z.n; ++i)
    for (int ch = 0; ch < z.c; ++ch) {
      const T* p = z.ptr(i, ch);
      for (size_t s = 0; s < plane; ++s) lat(static_cast<Eigen::Index>(i * plane + s), ch) = p[s];
    }
  return lat;
}

template <typename T>
FeatureMap<T> VqNet<T>::decode_latents(const Mat<T>& latents, int n, std::vector<nn::LayerCache<T>>* caches) const {
  const int gh = cfg_.grid_height(), gw = cfg_.grid_width();
  require(latents.rows() == static_cast<Eigen::Index>(n) * gh * gw && latents.cols() == cfg_.code_dim,
          ErrorCode::ShapeError, "latent grid does not match decoder config");
  FeatureMap<T> z(n, cfg_.code_dim, gh, gw);
  const size_t plane = z.plane();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < z.c; ++ch) {
      T* p = z.ptr(i, ch);
      for (size_t s = 0; s < plane; ++s) p[s] = latents(static_cast<Eigen::Index>(i * plane + s), ch);
    }
  return decoder_.forward(z, caches);
}

template <typename T>
LossBreakdown VqNet<T>::accumulate_gradients(const FeatureMap<T>& images, double beta) {
  std::vector<nn::LayerCache<T>> enc_cache, dec_cache;
  const Mat<T> e = encode_latents(images, &enc_cache);
  const Quantized<T> q = quantize(e, codebook_.value);
  // Straight-through: the decoder sees q, and its input gradient is handed to e unchanged.
  const FeatureMap<T> xhat = decode_latents(q.vectors, images.n, &dec_cache);
  const LossBreakdown loss = vq_loss(images.data, xhat.data, e, q.vectors, beta);

  FeatureMap<T> dxhat = xhat;
  const T rscale = static_cast<T>(2.0 / static_cast<double>(images.data.size()));
  for (size_t i = 0; i < dxhat.data.size(); ++i) dxhat.data[i] = rscale * (xhat.data[i] - images.data[i]);
  const FeatureMap<T> dz = decoder_.backward(dxhat, dec_cache);

  const size_t plane = dz.plane();
  Mat<T> de(e.rows(), e.cols());
  for (int i = 0; i < dz.n; ++i)
    for (int ch = 0; ch < dz.c; ++ch) {
      const T* p = dz.ptr(i, ch);
      for (size_t s = 0; s < plane; ++s) de(static_cast<Eigen::Index>(i * plane + s), ch) = p[s];
    }
  const T lscale = static_cast<T>(2.0 / static_cast<double>(e.size()));
  const Mat<T> diff = e - q.vectors;
  de += static_cast<T>(beta) * lscale * diff;
  for (Eigen::Index r = 0; r < e.rows(); ++r) codebook_.grad.row(q.tokens[static_cast<size_t>(r)]) -= lscale * diff.row(r);

  FeatureMap<T> de_map(dz.n, dz.c, dz.h, dz.w);
  for (int i = 0; i < dz.n; ++i)
    for (int ch = 0; ch < dz.c; ++ch) {
      T* p = de_map.ptr(i, ch);
      for (size_t s = 0; s < plane; ++s) p[s] = de(static_cast<Eigen::Index>(i * plane + s), ch);
    }
  encoder_.backward(de_map, enc_cache);
  return loss;
}

template <typename T>
void VqNet<T>::collect(std::vector<nn::Param<T>*>& out) {
  encoder_.collect(out);
  decoder_.collect(out);
  out.push_back(&codebook_);
}

template class VqNet<float>;
template class VqNet<double>;
template Quantized<float> quantize(const Mat<float>&, const Mat<float>&);
template Quantized<double> quantize(const Mat<double>&, const Mat<double>&);
template LossBreakdown vq_loss(const std::vector<float>&, const std::vector<float>&, const Mat<float>&,
                               const Mat<float>&, double);
template LossBreakdown vq_loss(const std::vector<double>&, const std::vector<double>&, const Mat<double>&,
                               const Mat<double>&, double);

FeatureMap<float> to_feature_map(const std::vector<const Image*>& images) {
  require(!images.empty(), ErrorCode::ShapeError, "empty image batch");
  const Image& first = *images.front();
  FeatureMap<float> fm(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (size_t i = 0; i < images.size(); ++i) {
    require(images[i]->same_shape(first), ErrorCode::ShapeError, "mixed image sizes in batch");
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(),
              fm.data.begin() + static_cast<long>(i * first.pixels.size()));
  }
  return fm;
}

std::vector<TokenGrid> encode_batch(const VqModel& model, const std::vector<const Image*>& images) {
  const auto& cfg = model.config;
  for (const Image* img : images)
    require(img->height == cfg.image_height && img->width == cfg.image_width && img->channels == cfg.channels,
            ErrorCode::ShapeError,
            "image " + std::to_string(img->height) + "x" + std::to_string(img->width) + " does not match the " +
                model.role + " quantizer input " + std::to_string(cfg.image_height) + "x" +
                std::to_string(cfg.image_width));
  std::vector<TokenGrid> out;
  if (images.empty()) return out;
  // Per image, so a grid never depends on what else shared its batch.
  for (const Image* img : images) {
    const Mat<float> lat = model.net.encode_latents(to_feature_map({img}), nullptr);
    out.push_back(TokenGrid{cfg.grid_height(), cfg.grid_width(), quantize(lat, model.net.codebook().value).tokens});
  }
  return out;
}

TokenGrid encode(const VqModel& model, const Image& image) { return encode_batch(model, {&image}).front(); }

Image decode(const VqModel& model, const TokenGrid& grid) {
  const auto& cfg = model.config;
  require(grid.height == cfg.grid_height() && grid.width == cfg.grid_width() &&
              grid.tokens.size() == static_cast<size_t>(cfg.tokens()),
          ErrorCode::ShapeError, "token grid shape does not match the quantizer");
  const auto& cb = model.net.codebook().value;
  Mat<float> lat(cfg.tokens(), cfg.code_dim);
  for (size_t i = 0; i < grid.tokens.size(); ++i) {
    const int t = grid.tokens[i];
    require(t >= 0 && t < cfg.codebook_size, ErrorCode::InvalidToken, "token " + std::to_string(t) + " out of range");
    lat.row(static_cast<Eigen::Index>(i)) = cb.row(t);
  }
  const FeatureMap<float> x = model.net.decode_latents(lat, 1, nullptr);
  Image img(x.c, x.h, x.w);
  for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::clamp(x.data[i], 0.0f, 1.0f);
  return img;
}

std::vector<LossBreakdown> train_vq(VqModel& model, const std::vector<Image>& pool, const TrainHyper& hyper,
                                    const std::function<void(int, const LossBreakdown&)>& on_step) {
  require(hyper.steps >= 0 && hyper.batch >= 1, ErrorCode::InvalidArgument, "steps >= 0 and batch >= 1 required");
  std::vector<LossBreakdown> curve;
  if (hyper.steps == 0) return curve;
  require(!pool.empty(), ErrorCode::InsufficientData, "no training images");

  std::vector<nn::Param<float>*> params;
  model.net.collect(params);
  nn::AdamWConfig ocfg;
  ocfg.lr = hyper.lr;
  ocfg.beta2 = 0.99;
  ocfg.weight_decay = 0.0;
  ocfg.grad_clip = 0.0;
  nn::AdamW<float> opt(params, ocfg);
  Rng rng(derive_seed(hyper.seed, "vq-train"));
  if (!model.rng_state.empty() && model.step > 0) rng.set_state(model.rng_state);

  for (int s = 0; s < hyper.steps; ++s) {
    std::vector<const Image*> batch;
    for (int b = 0; b < hyper.batch; ++b)
      batch.push_back(&pool[static_cast<size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
    opt.zero_grad();
    const LossBreakdown l = model.net.accumulate_gradients(to_feature_map(batch), hyper.beta);
    require(std::isfinite(l.total), ErrorCode::DivergenceError,
            "non-finite VQ loss at step " + std::to_string(model.step));
    // Linear warmup over the first 5% of steps.
    const double warm = std::max(1.0, 0.05 * hyper.steps);
    opt.step(hyper.lr * std::min(1.0, (s + 1) / warm));
    ++model.step;
    curve.push_back(l);
    if (on_step) on_step(s, l);
    if (hyper.log_every > 0 && (s % hyper.log_every == 0 || s + 1 == hyper.steps))
      std::cerr << "[vq:" << model.role << "] step " << s << " recon " << l.recon << " codebook " << l.codebook
                << " total " << l.total << "\n";
  }
  model.rng_state = rng.state();
  model.train_config = to_json(hyper);
  return curve;
}

Archive to_archive(const VqModel& model, const nlohmann::json& config_echo) {
  Archive a;
  a.meta = {{"format_version", 1},
            {"kind", "vq"},
            {"role", model.role},
            {"config", to_json(model.config)},
            {"step", model.step},
            {"rng_state", model.rng_state},
            {"train", model.train_config},
            {"effective_config", config_echo},
            {"version", version_string()}};
  std::vector<nn::Param<float>*> params;
  const_cast<VqNet<float>&>(model.net).collect(params);
  for (const auto* p : params)
    a.tensors[p->name] = NamedTensor{{p->value.rows(), p->value.cols()},
                                     std::vector<float>(p->value.data(), p->value.data() + p->value.size())};
  return a;
}

VqModel from_archive(const Archive& a) {
  require(a.meta.value("kind", "") == "vq", ErrorCode::FormatError, "archive is not a VQ checkpoint");
  require(a.meta.value("format_version", 0) == 1, ErrorCode::FormatError, "unsupported VQ checkpoint version");
  VqModel m(a.meta.at("role").get<std::string>(), codebook_config_from_json(a.meta.at("config")), 0);
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

void save_vq(const VqModel& model, const std::filesystem::path& path, const nlohmann::json& config_echo) {
  to_archive(model, config_echo).save(path);
}

VqModel load_vq(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }

}  // namespace e2eve::vq
