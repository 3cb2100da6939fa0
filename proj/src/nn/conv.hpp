#pragma once

#include <memory>
#include <vector>

#include "nn/param.hpp"

namespace e2eve::nn {

/// Batch of planar feature maps, N x C x H x W.
template <typename T>
struct FeatureMap {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_) {}

  size_t plane() const { return static_cast<size_t>(h) * w; }
  T* ptr(int i, int ch) { return data.data() + (static_cast<size_t>(i) * c + ch) * plane(); }
  const T* ptr(int i, int ch) const { return data.data() + (static_cast<size_t>(i) * c + ch) * plane(); }
};

/// Whatever a layer needs from its forward pass to run backward.
template <typename T>
struct LayerCache {
  Mat<T> cols;
  FeatureMap<T> saved;
  int in_n = 0, in_c = 0, in_h = 0, in_w = 0;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  /// Pure when `cache` is null, so frozen models can be shared across threads.
  virtual FeatureMap<T> forward(const FeatureMap<T>& x, LayerCache<T>* cache) const = 0;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  virtual FeatureMap<T> backward(const FeatureMap<T>& dy, const LayerCache<T>& cache) = 0;
  virtual void collect(std::vector<Param<T>*>& out) { (void)out; }
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng);

  FeatureMap<T> forward(const FeatureMap<T>& x, LayerCache<T>* cache) const override;
  FeatureMap<T> backward(const FeatureMap<T>& dy, const LayerCache<T>& cache) override;
  void collect(std::vector<Param<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

 private:
  void im2col(const FeatureMap<T>& x, Mat<T>& cols, int oh, int ow) const;

  int in_ch_, out_ch_, kernel_, stride_, pad_;
  Param<T> weight_;  // out_ch x (in_ch * k * k)
  Param<T> bias_;    // out_ch x 1
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  FeatureMap<T> forward(const FeatureMap<T>& x, LayerCache<T>* cache) const override;
  FeatureMap<T> backward(const FeatureMap<T>& dy, const LayerCache<T>& cache) override;
};

/// Nearest-neighbour 2x upsampling.
template <typename T>
class Upsample2x final : public Layer<T> {
 public:
  FeatureMap<T> forward(const FeatureMap<T>& x, LayerCache<T>* cache) const override;
  FeatureMap<T> backward(const FeatureMap<T>& dy, const LayerCache<T>& cache) override;
};

template <typename T>
class Sequential {
 public:
  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  FeatureMap<T> forward(const FeatureMap<T>& x, std::vector<LayerCache<T>>* caches) const {
    if (caches) caches->assign(layers_.size(), LayerCache<T>{});
    FeatureMap<T> h = x;
    for (size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, caches ? &(*caches)[i] : nullptr);
    return h;
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy, const std::vector<LayerCache<T>>& caches) {
    FeatureMap<T> g = dy;
    for (size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, caches[i]);
    return g;
  }

  void collect(std::vector<Param<T>*>& out) {
    for (auto& l : layers_) l->collect(out);
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class ReLU<float>;
extern template class ReLU<double>;
extern template class Upsample2x<float>;
extern template class Upsample2x<double>;

}  // namespace e2eve::nn
