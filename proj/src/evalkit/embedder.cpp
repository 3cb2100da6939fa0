#include "evalkit/embedder.hpp"

#include "common/archive.hpp"
#include "common/error.hpp"

namespace e2eve::evalkit {

namespace {
constexpr int kWidth = 32;
constexpr int kPool = 2;  // spatial cells per side in the pooled output
}  // namespace

FeatureEmbedder::FeatureEmbedder(std::uint64_t seed) : seed_(seed) {
  Rng rng(derive_seed(seed, "embedder"));
  net_.add(std::make_unique<nn::Conv2d<float>>("e0", 3, 16, 3, 1, 1, rng));
  net_.add(std::make_unique<nn::ReLU<float>>());
  net_.add(std::make_unique<nn::Conv2d<float>>("e1", 16, kWidth, 4, 2, 1, rng));
  net_.add(std::make_unique<nn::ReLU<float>>());
  net_.add(std::make_unique<nn::Conv2d<float>>("e2", kWidth, kWidth, 4, 2, 1, rng));
  net_.add(std::make_unique<nn::ReLU<float>>());
  dim_ = kWidth * kPool * kPool;

  std::vector<nn::Param<float>*> ps;
  net_.collect(ps);
  std::vector<float> all;
  for (auto* p : ps) all.insert(all.end(), p->value.data(), p->value.data() + p->value.size());
  weights_sha256_ = sha256_hex(all.data(), all.size() * sizeof(float));
}

nlohmann::json FeatureEmbedder::descriptor() const {
  return {{"kind", "random-conv"},
          {"seed", seed_},
          {"dim", dim_},
          {"input", {kInput, kInput}},
          {"resize", "area"},
          {"weights_sha256", weights_sha256_}};
}

nn::Mat<double> FeatureEmbedder::embed(const std::vector<const Image*>& images) const {
  nn::Mat<double> out(static_cast<Eigen::Index>(images.size()), dim_);
  if (images.empty()) return out;
  // One image per pass: GEMM blocking depends on the batch size, and a feature must not.
  for (size_t i = 0; i < images.size(); ++i) {
    require(images[i]->channels == 3, ErrorCode::ShapeError, "embedder expects RGB images");
    const Image r = (images[i]->height == kInput && images[i]->width == kInput)
                        ? *images[i]
                        : resize_area(*images[i], kInput, kInput);
    nn::FeatureMap<float> x(1, 3, kInput, kInput);
    std::copy(r.pixels.begin(), r.pixels.end(), x.ptr(0, 0));
    const auto y = net_.forward(x, nullptr);
    const int cell_h = y.h / kPool, cell_w = y.w / kPool;
    for (int c = 0; c < y.c; ++c) {
      const float* p = y.ptr(0, c);
      for (int gy = 0; gy < kPool; ++gy)
        for (int gx = 0; gx < kPool; ++gx) {
          double s = 0.0;
          for (int yy = gy * cell_h; yy < (gy + 1) * cell_h; ++yy)
            for (int xx = gx * cell_w; xx < (gx + 1) * cell_w; ++xx) s += p[yy * y.w + xx];
          out(static_cast<Eigen::Index>(i), (c * kPool + gy) * kPool + gx) = s / (cell_h * cell_w);
        }
    }
  }
  return out;
}

std::vector<double> FeatureEmbedder::embed(const Image& image) const {
  const auto m = embed(std::vector<const Image*>{&image});
  return std::vector<double>(m.data(), m.data() + m.size());
}

double feature_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::ShapeError, "feature dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace e2eve::evalkit
