#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "common/rng.hpp"

namespace e2eve::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Trainable tensor with its gradient and AdamW moments.
template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  Mat<T> m;
  Mat<T> v;
  bool decay = true;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool apply_decay = true)
      : name(std::move(n)),
        value(Mat<T>::Zero(rows, cols)),
        grad(Mat<T>::Zero(rows, cols)),
        decay(apply_decay) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

template <typename T>
void init_normal(Param<T>& p, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void init_uniform(Param<T>& p, double lo, double hi, Rng& rng) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.uniform(lo, hi));
}

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global norm; <= 0 disables
};

/// Decoupled weight decay Adam, applied to a fixed parameter list.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Param<T>*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      if (p->m.size() != p->value.size()) p->m = Mat<T>::Zero(p->value.rows(), p->value.cols());
      if (p->v.size() != p->value.size()) p->v = Mat<T>::Zero(p->value.rows(), p->value.cols());
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  double grad_norm() const {
    double s = 0.0;
    for (auto* p : params_) s += static_cast<double>(p->grad.squaredNorm());
    return std::sqrt(s);
  }

  void step(double lr) {
    ++t_;
    double scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
      const double n = grad_norm();
      if (n > cfg_.grad_clip) scale = cfg_.grad_clip / n;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto* p : params_) {
      T* w = p->value.data();
      const T* g = p->grad.data();
      T* m = p->m.data();
      T* v = p->v.data();
      const double decay = p->decay ? cfg_.weight_decay : 0.0;
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * scale;
        m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
        v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] = static_cast<T>(w[i] - lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + decay * w[i]));
      }
    }
  }

  void step() { step(cfg_.lr); }

  long steps_taken() const { return t_; }
  void set_steps_taken(long t) { t_ = t; }

 private:
  std::vector<Param<T>*> params_;
  AdamWConfig cfg_;
  long t_ = 0;
};

}  // namespace e2eve::nn
