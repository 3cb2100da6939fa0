#include "nn/conv.hpp"

#include <cmath>

#include "common/error.hpp"

namespace e2eve::nn {

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(name + ".weight", out_ch, static_cast<Eigen::Index>(in_ch) * kernel * kernel),
      bias_(name + ".bias", out_ch, 1, false) {
  // He initialisation for ReLU stacks.
  const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
  init_normal(weight_, std::sqrt(2.0 / fan_in), rng);
}

template <typename T>
void Conv2d<T>::im2col(const FeatureMap<T>& x, Mat<T>& cols, int oh, int ow) const {
  const Eigen::Index npos = static_cast<Eigen::Index>(oh) * ow;
  cols.resize(static_cast<Eigen::Index>(in_ch_) * kernel_ * kernel_, npos * x.n);
  for (int ci = 0; ci < in_ch_; ++ci)
    for (int ky = 0; ky < kernel_; ++ky)
      for (int kx = 0; kx < kernel_; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(ci) * kernel_ + ky) * kernel_ + kx;
        T* out = cols.row(row).data();
        for (int img = 0; img < x.n; ++img) {
          const T* src = x.ptr(img, ci);
          T* dst = out + img * npos;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              dst[oy * ow + ox] = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w) ? src[iy * x.w + ix] : T(0);
            }
          }
        }
      }
}

template <typename T>
FeatureMap<T> Conv2d<T>::forward(const FeatureMap<T>& x, LayerCache<T>* cache) const {
  require(x.c == in_ch_, ErrorCode::ShapeError, "conv input channels mismatch on " + weight_.name);
  const int oh = out_size(x.h), ow = out_size(x.w);
  require(oh > 0 && ow > 0, ErrorCode::ShapeError, "conv input too small");
  Mat<T> local;
  Mat<T>& cols = cache ? cache->cols : local;
  im2col(x, cols, oh, ow);
  Mat<T> y = weight_.value * cols;
  y.colwise() += bias_.value.col(0);
  FeatureMap<T> out(x.n, out_ch_, oh, ow);
  const size_t npos = out.plane();
  for (int img = 0; img < x.n; ++img)
    for (int co = 0; co < out_ch_; ++co)
      std::copy_n(y.row(co).data() + img * npos, npos, out.ptr(img, co));
  if (cache) {
    cache->in_n = x.n;
    cache->in_c = x.c;
    cache->in_h = x.h;
    cache->in_w = x.w;
  }
  return out;
}

template <typename T>
FeatureMap<T> Conv2d<T>::backward(const FeatureMap<T>& dy, const LayerCache<T>& cache) {
  const size_t npos = dy.plane();
  Mat<T> g(out_ch_, static_cast<Eigen::Index>(npos) * dy.n);
  for (int img = 0; img < dy.n; ++img)
    for (int co = 0; co < out_ch_; ++co) std::copy_n(dy.ptr(img, co), npos, g.row(co).data() + img * npos);
  weight_.grad.noalias() += g * cache.cols.transpose();
  bias_.grad.col(0) += g.rowwise().sum();
  const Mat<T> dcols = weight_.value.transpose() * g;

  FeatureMap<T> dx(cache.in_n, cache.in_c, cache.in_h, cache.in_w);
  std::fill(dx.data.begin(), dx.data.end(), T(0));
  const int oh = dy.h, ow = dy.w;
  for (int ci = 0; ci < in_ch_; ++ci)
    for (int ky = 0; ky < kernel_; ++ky)
      for (int kx = 0; kx < kernel_; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(ci) * kernel_ + ky) * kernel_ + kx;
        const T* src = dcols.row(row).data();
        for (int img = 0; img < dx.n; ++img) {
          T* dst = dx.ptr(img, ci);
          const T* s = src + img * npos;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= dx.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < dx.w) dst[iy * dx.w + ix] += s[oy * ow + ox];
            }
          }
        }
      }
  return dx;
}

template <typename T>
FeatureMap<T> ReLU<T>::forward(const FeatureMap<T>& x, LayerCache<T>* cache) const {
  FeatureMap<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  if (cache) cache->saved = y;
  return y;
}

template <typename T>
FeatureMap<T> ReLU<T>::backward(const FeatureMap<T>& dy, const LayerCache<T>& cache) {
  FeatureMap<T> dx = dy;
  for (size_t i = 0; i < dx.data.size(); ++i)
    if (cache.saved.data[i] <= T(0)) dx.data[i] = T(0);
  return dx;
}

template <typename T>
FeatureMap<T> Upsample2x<T>::forward(const FeatureMap<T>& x, LayerCache<T>* cache) const {
  FeatureMap<T> y(x.n, x.c, x.h * 2, x.w * 2);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* s = x.ptr(i, ch);
      T* d = y.ptr(i, ch);
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) d[yy * y.w + xx] = s[(yy / 2) * x.w + xx / 2];
    }
  if (cache) {
    cache->in_n = x.n;
    cache->in_c = x.c;
    cache->in_h = x.h;
    cache->in_w = x.w;
  }
  return y;
}

template <typename T>
FeatureMap<T> Upsample2x<T>::backward(const FeatureMap<T>& dy, const LayerCache<T>& cache) {
  FeatureMap<T> dx(cache.in_n, cache.in_c, cache.in_h, cache.in_w);
  std::fill(dx.data.begin(), dx.data.end(), T(0));
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch) {
      const T* s = dy.ptr(i, ch);
      T* d = dx.ptr(i, ch);
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) d[(yy / 2) * dx.w + xx / 2] += s[yy * dy.w + xx];
    }
  return dx;
}

template class Conv2d<float>;
template class Conv2d<double>;
template class ReLU<float>;
template class ReLU<double>;
template class Upsample2x<float>;
template class Upsample2x<double>;

}  // namespace e2eve::nn
