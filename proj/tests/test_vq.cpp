#include <cmath>
#include <random>

#include "common/error.hpp"
#include "dataio/dataio.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "vq/vq.hpp"

using namespace e2eve;
using namespace e2eve::vq;
using nn::Mat;

namespace {

template <typename T>
Mat<T> random_mat(int rows, int cols, std::mt19937_64& g, double scale = 1.0) {
  std::normal_distribution<double> n01;
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * n01(g));
  return m;
}

// Brute-force nearest row in long double.
int nearest(const Mat<float>& cb, const float* e) {
  int best = 0;
  long double bd = -1;
  for (Eigen::Index k = 0; k < cb.rows(); ++k) {
    long double d = 0;
    for (Eigen::Index j = 0; j < cb.cols(); ++j) {
      const long double diff = static_cast<long double>(e[j]) - cb(k, j);
      d += diff * diff;
    }
    if (bd < 0 || d < bd) {
      bd = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("grid arithmetic") {
  CodebookConfig c;
  CHECK(c.tokens() == 64);
  CodebookConfig p;
  p.image_height = p.image_width = 256;
  p.downsample = 16;
  CHECK(p.grid_height() == 16);
  CHECK(p.tokens() == 256);
  p.downsample = 12;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("quantize matches a brute-force scan") {
  std::mt19937_64 g(1);
  const auto cb = random_mat<float>(256, 64, g);
  const auto lat = random_mat<float>(10000, 64, g);
  const auto q = quantize(lat, cb);
  int mismatches = 0;
  for (Eigen::Index i = 0; i < lat.rows(); ++i)
    if (q.tokens[static_cast<size_t>(i)] != nearest(cb, lat.row(i).data())) ++mismatches;
  CHECK(mismatches == 0);
  CHECK(q.vectors.row(17) == cb.row(q.tokens[17]));

  const auto cb16 = random_mat<float>(16, 4, g);
  const auto lat16 = random_mat<float>(500, 4, g);
  const auto q16 = quantize(lat16, cb16);
  for (Eigen::Index i = 0; i < lat16.rows(); ++i) CHECK(q16.tokens[static_cast<size_t>(i)] == nearest(cb16, lat16.row(i).data()));
}

TEST_CASE("quantize exact hits, ties and K=1") {
  Mat<double> cb(5, 2);
  cb << 0, 0, 1, 0, 5, 5, 2, 2, -1, 0;
  Mat<double> lat(3, 2);
  lat << 2, 2, 0, 0, 0, 1;  // row 3 exactly; row 0 exactly; (0,1) is equidistant to rows 0, 1 and 4
  auto q = quantize(lat, cb);
  CHECK(q.tokens == std::vector<int>{3, 0, 0});
  Mat<double> lat2(1, 2);
  lat2 << 0.5, 0.5;  // equidistant to rows 0 and 1: lower index wins
  Mat<double> cb2 = cb;
  cb2.row(0) << 5, 6;
  cb2.row(4) << 0, 1;
  lat2 << 0.5, 0.5;  // now rows 1 and 4 tie
  CHECK(quantize(lat2, cb2).tokens == std::vector<int>{1});

  std::mt19937_64 g(2);
  const auto one = random_mat<double>(1, 3, g);
  const auto q1 = quantize(random_mat<double>(20, 3, g), one);
  for (int t : q1.tokens) CHECK(t == 0);
}

TEST_CASE("loss terms by hand") {
  // x = 0.5, x_hat = 0.2, e = 1.0, q = 0.4, beta = 0.25
  Mat<double> e(1, 1), q(1, 1);
  e << 1.0;
  q << 0.4;
  const auto l = vq_loss<double>({0.5}, {0.2}, e, q, 0.25);
  CHECK(std::abs(l.recon - 0.09) < 1e-9);
  CHECK(std::abs(l.codebook - 0.36) < 1e-9);
  CHECK(std::abs(l.commit - 0.36) < 1e-9);
  CHECK(std::abs(l.total - (0.09 + 0.36 + 0.25 * 0.36)) < 1e-9);

  // Scalar codes, K = 2: e = (0.3, -0.8), codebook {0.5, -1}: q = (0.5, -1).
  Mat<double> e2(2, 1), cb(2, 1);
  e2 << 0.3, -0.8;
  cb << 0.5, -1.0;
  const auto q2 = quantize(e2, cb);
  CHECK(q2.tokens == std::vector<int>{0, 1});
  const auto l2 = vq_loss<double>({0.1, 0.2, 0.3}, {0.1, 0.0, 0.6}, e2, q2.vectors, 0.25);
  CHECK(std::abs(l2.recon - (0.04 + 0.09) / 3.0) < 1e-9);
  CHECK(std::abs(l2.codebook - (0.04 + 0.04) / 2.0) < 1e-9);
  CHECK(std::abs(l2.total - ((0.13 / 3.0) + 1.25 * 0.04)) < 1e-9);

  CHECK(vq_loss<double>({1.0}, {1.0}, e, e, 0.25).total == 0.0);
}

TEST_CASE("straight-through gradient matches finite differences of the surrogate") {
  // 1-D codes on a tiny net. The surrogate freezes the quantizer's choice: the decoder sees
  // e - e0 + q0, the codebook term pulls C[idx0] toward sg[e0], the commitment term pulls e to q0.
  CodebookConfig c;
  c.codebook_size = 3;
  c.code_dim = 1;
  c.downsample = 2;
  c.hidden = 3;
  c.image_height = c.image_width = 4;
  c.channels = 1;
  VqNet<double> net(c, 5);
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nn::FeatureMap<double> x(2, 1, 4, 4);
  for (auto& v : x.data) v = u(g);
  net.codebook().value << -0.5, 0.2, 0.9;
  std::vector<nn::Param<double>*> ps;
  net.collect(ps);
  // Zero-initialised biases put pre-activations exactly on ReLU hinges; move off them.
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto* p : ps)
    if (p->name.find("bias") != std::string::npos)
      for (Eigen::Index i = 0; i < p->size(); ++i) p->value.data()[i] += jitter(g);
  const double beta = 0.25;

  const Mat<double> e0 = net.encode_latents(x, nullptr);
  const auto q0 = quantize(e0, net.codebook().value);
  auto surrogate = [&] {
    const Mat<double> e = net.encode_latents(x, nullptr);
    const auto xh = net.decode_latents(e - e0 + q0.vectors, x.n, nullptr);
    double rec = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) rec += (xh.data[i] - x.data[i]) * (xh.data[i] - x.data[i]);
    double cbk = 0.0, com = 0.0;
    for (Eigen::Index r = 0; r < e.rows(); ++r) {
      const double cq = net.codebook().value(q0.tokens[static_cast<size_t>(r)], 0);
      cbk += (e0(r, 0) - cq) * (e0(r, 0) - cq);
      com += (e(r, 0) - q0.vectors(r, 0)) * (e(r, 0) - q0.vectors(r, 0));
    }
    return rec / x.data.size() + cbk / e.size() + beta * com / e.size();
  };

  for (auto* p : ps) p->zero_grad();
  const auto loss = net.accumulate_gradients(x, beta);
  CHECK(loss.total == doctest::Approx(surrogate()).epsilon(1e-12));

  int checked = 0;
  for (auto* p : ps)
    for (Eigen::Index i = 0; i < p->size(); ++i) {
      double& w = p->value.data()[i];
      const double saved = w, h = 1e-6;
      w = saved + h;
      const double up = surrogate();
      w = saved - h;
      const double down = surrogate();
      w = saved;
      const double fd = (up - down) / (2 * h), bp = p->grad.data()[i];
      if (std::abs(fd) < 1e-8 && std::abs(bp) < 1e-8) continue;
      INFO(p->name << "[" << i << "] fd " << fd << " bp " << bp);
      CHECK(std::abs(fd - bp) <= 1e-3 * std::max(std::abs(fd), std::abs(bp)));
      ++checked;
    }
  CHECK(checked > 20);
}

TEST_CASE("encode, decode and checkpoints") {
  CodebookConfig c;
  c.image_height = c.image_width = 16;
  c.codebook_size = 32;
  c.code_dim = 8;
  c.hidden = 8;
  VqModel m("driver", c, 3);
  const Image img = dataio::render_toy_image(16, 16, 1, 0).image;
  const auto grid = encode(m, img);
  CHECK(grid.height == 2);
  CHECK(grid.tokens.size() == 4);
  const Image rec = decode(m, grid);
  CHECK(rec.same_shape(img));
  CHECK(rec.in_unit_range());
  CHECK(encode_batch(m, {&img, &img})[1] == grid);

  try {
    decode(m, TokenGrid{2, 2, {0, 1, 2, 32}});
    FAIL("expected InvalidToken");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidToken);
  }
  const Image wrong(3, 8, 8);
  try {
    encode(m, wrong);
    FAIL("expected ShapeError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeError);
  }

  std::vector<Image> pool;
  for (int i = 0; i < 8; ++i) pool.push_back(dataio::render_toy_image(16, 16, 1, i).image);
  TrainHyper zero;
  zero.steps = 0;
  VqModel z("driver", c, 3);
  CHECK(train_vq(z, pool, zero).empty());
  CHECK(z.net.codebook().value == m.net.codebook().value);

  TrainHyper h;
  h.steps = 200;
  h.batch = 4;
  h.seed = 2;
  const auto curve = train_vq(m, pool, h);
  CHECK(curve.back().recon <= 0.5 * curve.front().recon);

  const auto dir = testutil::scratch("vq_ckpt");
  save_vq(m, dir / "vq.ckpt", {{"echo", true}});
  const VqModel back = load_vq(dir / "vq.ckpt");
  CHECK(back.role == "driver");
  CHECK(back.step == 200);
  CHECK(encode(back, img) == encode(m, img));
  CHECK(decode(back, grid).pixels == decode(m, grid).pixels);
  CHECK(Archive::load(dir / "vq.ckpt").meta.at("effective_config").at("echo") == true);

  VqModel a("driver", c, 9), b("driver", c, 9);
  TrainHyper h10 = h;
  h10.steps = 10;
  const auto ca = train_vq(a, pool, h10);
  const auto cb = train_vq(b, pool, h10);
  for (size_t i = 0; i < ca.size(); ++i) CHECK(ca[i].total == cb[i].total);
  CHECK(a.net.codebook().value == b.net.codebook().value);
}
