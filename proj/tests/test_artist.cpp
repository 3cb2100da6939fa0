#include <cmath>
#include <numeric>
#include <random>

#include "artist/artist.hpp"
#include "common/error.hpp"
#include "doctest.h"

using namespace e2eve;
using namespace e2eve::artist;

namespace {

ArtistConfig tiny_config() {
  ArtistConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.src_h = c.src_w = 2;
  c.drv_h = 1;
  c.drv_w = 2;
  c.out_h = c.out_w = 2;
  c.k_img = 5;
  c.k_drv = 3;
  return c;
}

TrainExample random_example(const ArtistConfig& c, std::mt19937& g) {
  TrainExample ex;
  std::uniform_int_distribution<int> img(0, c.k_img - 1), drv(0, c.k_drv - 1);
  for (int i = 0; i < c.n_src(); ++i) ex.source.push_back(img(g));
  for (int i = 0; i < c.n_drv(); ++i) ex.driver.push_back(drv(g));
  for (int i = 0; i < c.n_out(); ++i) ex.target.push_back(img(g));
  return ex;
}

// Reference cross-entropy straight from the definition, in long double.
template <typename T>
double reference_nll(const nn::Mat<T>& logits, const std::vector<int>& targets) {
  long double total = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    long double z = 0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) z += std::exp(static_cast<long double>(logits(r, k)));
    total += std::log(z) - static_cast<long double>(logits(r, targets[static_cast<size_t>(r)]));
  }
  return static_cast<double>(total / logits.rows());
}

}  // namespace

TEST_CASE("sequence layout") {
  ArtistConfig toy;
  CHECK(toy.max_len() == 132);
  std::vector<int> src(64, 1), drv(4, 2), out(64, 3);
  CHECK(build_sequence(toy, src, std::span<const int>(drv), {}).size() == 68);
  const auto full = build_sequence(toy, src, std::span<const int>(drv), out);
  CHECK(full.size() == 132);
  CHECK(full.positions[64].segment == Segment::Driver);
  CHECK(full.positions[64 + 4 + 9].segment == Segment::Output);
  CHECK(full.positions[64 + 4 + 9].row == 1);
  CHECK(full.positions[64 + 4 + 9].col == 1);

  src[5] = 256;
  CHECK_THROWS_AS(build_sequence(toy, src, std::span<const int>(drv), {}), Error);
  try {
    build_sequence(toy, src, std::span<const int>(drv), {});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidToken);
  }
  src[5] = 0;
  std::vector<int> too_long(65, 0);
  try {
    build_sequence(toy, src, std::span<const int>(drv), too_long);
    FAIL("expected SequenceTooLong");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SequenceTooLong);
  }

  ArtistConfig paper;
  paper.src_h = paper.src_w = paper.out_h = paper.out_w = 16;
  paper.drv_h = paper.drv_w = 4;
  CHECK(paper.max_len() == 528);
}

TEST_CASE("histograms are normalized") {
  const ArtistConfig c = tiny_config();
  Transformer<float> net(c, 3);
  std::mt19937 g(1);
  const auto ex = random_example(c, g);
  const auto logits = net.forward({teacher_sequence(c, ex)}, nullptr);
  CHECK(logits.rows() == c.n_out());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto p = softmax<float>(std::span<const float>(logits.row(r).data(), static_cast<size_t>(logits.cols())));
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("causal probe") {
  const ArtistConfig c = tiny_config();
  Transformer<double> net(c, 11);
  std::mt19937 g(2);
  auto ex = random_example(c, g);
  const auto base = net.forward({teacher_sequence(c, ex)}, nullptr);
  // The sequence carries target[0..n_out-2]; histogram m is computed at the position before output token m.
  for (int j = 0; j + 1 < c.n_out(); ++j) {
    auto mod = ex;
    mod.target[static_cast<size_t>(j)] = (mod.target[static_cast<size_t>(j)] + 1) % c.k_img;
    const auto out = net.forward({teacher_sequence(c, mod)}, nullptr);
    for (int m = 0; m <= j; ++m) CHECK((out.row(m) - base.row(m)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((out.row(j + 1) - base.row(j + 1)).cwiseAbs().maxCoeff() > 1e-9);
  }
  // Conditioning reaches the very first output histogram.
  auto mod = ex;
  mod.driver[0] = (mod.driver[0] + 1) % c.k_drv;
  CHECK((net.forward({teacher_sequence(c, mod)}, nullptr).row(0) - base.row(0)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("incremental decoding matches the parallel pass") {
  const ArtistConfig c = tiny_config();
  Transformer<double> net(c, 5);
  std::mt19937 g(3);
  for (bool drop_driver : {false, true}) {
    auto ex = random_example(c, g);
    if (drop_driver) ex.driver.clear();
    const auto seq = teacher_sequence(c, ex);
    const auto par = net.forward({seq}, nullptr);
    auto st = net.new_state();
    const int n_cond = c.n_src() + c.n_drv();
    double stepwise = 0.0;
    for (int t = 0; t < static_cast<int>(seq.size()); ++t) {
      const auto lg = net.step(st, seq, t >= n_cond - 1);
      if (t < n_cond - 1) {
        CHECK(!lg);
        continue;
      }
      const int m = t - (n_cond - 1);
      for (int k = 0; k < c.k_img; ++k) CHECK(std::abs((*lg)[static_cast<size_t>(k)] - par(m, k)) < 1e-9);
      const auto p = softmax<double>(*lg);
      stepwise -= std::log(p[static_cast<size_t>(ex.target[static_cast<size_t>(m)])]);
    }
    CHECK(stepwise / c.n_out() == doctest::Approx(reference_nll(par, ex.target)).epsilon(1e-4));
  }
}

TEST_CASE("gradient check against finite differences") {
  const ArtistConfig c = tiny_config();
  Transformer<double> net(c, 9);
  std::mt19937 g(4);
  std::vector<TrainExample> batch{random_example(c, g), random_example(c, g)};
  batch[1].driver.clear();
  std::vector<TokenSequence> seqs;
  std::vector<int> targets;
  for (const auto& ex : batch) {
    seqs.push_back(teacher_sequence(c, ex));
    targets.insert(targets.end(), ex.target.begin(), ex.target.end());
  }
  auto loss = [&] { return reference_nll(net.forward(seqs, nullptr), targets); };

  std::vector<nn::Param<double>*> params;
  net.collect(params);
  for (auto* p : params) p->zero_grad();
  Transformer<double>::Cache cache;
  const auto logits = net.forward(seqs, &cache);
  nn::Mat<double> dl(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto p = softmax<double>(std::span<const double>(logits.row(r).data(), static_cast<size_t>(logits.cols())));
    for (Eigen::Index k = 0; k < logits.cols(); ++k)
      dl(r, k) = (p[static_cast<size_t>(k)] - (k == targets[static_cast<size_t>(r)] ? 1.0 : 0.0)) / logits.rows();
  }
  net.backward(dl, cache);

  int checked = 0;
  for (auto* p : params) {
    for (Eigen::Index i : {Eigen::Index{0}, p->size() / 2, p->size() - 1}) {
      double& w = p->value.data()[i];
      const double saved = w, h = 1e-5;
      w = saved + h;
      const double up = loss();
      w = saved - h;
      const double down = loss();
      w = saved;
      const double fd = (up - down) / (2 * h);
      const double bp = p->grad.data()[i];
      if (std::abs(fd) < 1e-7 && std::abs(bp) < 1e-7) continue;
      INFO(p->name << "[" << i << "] fd=" << fd << " bp=" << bp);
      CHECK(std::abs(fd - bp) / std::max(std::abs(fd), std::abs(bp)) < 1e-3);
      ++checked;
    }
  }
  CHECK(checked > 40);
}

TEST_CASE("initial NLL is near ln K and training loss matches independent cross-entropy") {
  ArtistConfig toy;  // K = 256
  Transformer<float> net(toy, 7);
  std::mt19937 g(5);
  std::vector<TrainExample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_example(toy, g));
  std::vector<TokenSequence> seqs;
  std::vector<int> targets;
  for (const auto& ex : batch) {
    seqs.push_back(teacher_sequence(toy, ex));
    targets.insert(targets.end(), ex.target.begin(), ex.target.end());
  }
  const auto logits = net.forward(seqs, nullptr);
  const double nll = cross_entropy(logits, targets, nullptr);
  CHECK(std::abs(nll - std::log(256.0)) < 0.1);
  CHECK(nll == doctest::Approx(reference_nll(logits, targets)).epsilon(1e-5));
}

TEST_CASE("single-example overfit and deterministic trajectory") {
  const ArtistConfig c = [] {
    ArtistConfig t;
    t.n_layers = 2;
    t.d_model = 32;
    t.n_heads = 2;
    t.src_h = t.src_w = t.out_h = t.out_w = 4;
    t.drv_h = t.drv_w = 2;
    t.k_img = t.k_drv = 16;
    return t;
  }();
  std::mt19937 g(6);
  const auto ex = random_example(c, g);
  ArtistHyper h;
  h.steps = 500;
  h.batch = 2;
  h.lr = 3e-3;
  h.driver_drop = 0.0;
  h.seed = 1;
  auto run = [&] {
    ArtistModel m(c, 1);
    auto curve = train_artist(m, {ex}, h);
    return std::make_pair(curve, eval_nll(m, {ex}));
  };
  const auto [curve_a, nll_a] = run();
  const auto [curve_b, nll_b] = run();
  CHECK(curve_a == curve_b);
  CHECK(nll_a == nll_b);
  CHECK(nll_a < 0.1);
  CHECK(curve_a.front() > nll_a);
}
