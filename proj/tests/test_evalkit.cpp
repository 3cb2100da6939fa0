#include <cmath>
#include <random>

#include "common/error.hpp"
#include "doctest.h"
#include "evalkit/evalkit.hpp"
#include "helpers.hpp"

using namespace e2eve;
using namespace e2eve::evalkit;

namespace {

nn::Mat<double> gaussian_1d(int n, double mu, double sigma, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> d(mu, sigma);
  nn::Mat<double> m(n, 1);
  for (int i = 0; i < n; ++i) m(i, 0) = d(g);
  return m;
}

Image random_image(int h, int w, std::mt19937& g) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(3, h, w);
  for (auto& p : img.pixels) p = u(g);
  return img;
}

}  // namespace

TEST_CASE("frechet distance closed forms") {
  std::mt19937_64 g(1);
  std::normal_distribution<double> n01;
  nn::Mat<double> a(300, 6), b(250, 6);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n01(g);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = 0.5 * n01(g) + 0.2;
  CHECK(frechet_distance(a, a) < 1e-6);
  CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-6);
  CHECK(frechet_distance(a, b) > 0.5);

  // (mu1 - mu2)^2 + (sigma1 - sigma2)^2
  CHECK(std::abs(frechet_distance(gaussian_1d(100000, 0, 1, 2), gaussian_1d(100000, 1, 1, 3)) - 1.0) < 0.05);
  CHECK(std::abs(frechet_distance(gaussian_1d(100000, 0, 1, 4), gaussian_1d(100000, 0, 2, 5)) - 1.0) < 0.05);

  try {
    frechet_distance(a, nn::Mat<double>::Zero(10, 5));
    FAIL("expected ShapeError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeError);
  }
}

TEST_CASE("locality arithmetic") {
  Image src(3, 2, 2, 0.2f);
  Image ed = src;
  const EditRegion r = make_block_region(2, 2, Rect{0, 0, 1, 1});
  CHECK(locality(ed, src, r).value == 0.0);
  ed.at(1, 1, 1) += 0.5f;  // one channel of one outside pixel
  CHECK(locality(ed, src, r).value == doctest::Approx(0.5 / (3 * 3)).epsilon(1e-6));
  const EditRegion full = make_block_region(2, 2, Rect{0, 0, 2, 2});
  const auto l = locality(ed, src, full);
  CHECK(l.empty_complement);
  CHECK(l.value == 0.0);
}

TEST_CASE("faithfulness ranks equal a brute-force scan") {
  std::mt19937_64 g(7);
  std::normal_distribution<double> n01;
  auto vec = [&](int d) {
    std::vector<double> v(static_cast<size_t>(d));
    for (auto& x : v) x = n01(g);
    return v;
  };
  for (int trial = 0; trial < 500; ++trial) {
    const auto q = vec(8), drv = vec(8);
    std::vector<std::vector<double>> ds;
    for (int i = 0; i < 10; ++i) ds.push_back(vec(8));
    // Brute force: sort every candidate by (distance, list index) and find the driver.
    std::vector<std::pair<double, int>> all{{feature_distance(q, drv), 0}};
    for (int i = 0; i < 10; ++i) all.emplace_back(feature_distance(q, ds[static_cast<size_t>(i)]), i + 1);
    std::sort(all.begin(), all.end());
    int expect = 0;
    for (size_t i = 0; i < all.size(); ++i)
      if (all[i].second == 0) expect = static_cast<int>(i) + 1;
    CHECK(faithfulness_rank(q, drv, ds) == expect);
  }
  const auto q = vec(4), drv = vec(4);
  CHECK(faithfulness_rank(q, drv, {vec(4), drv, vec(4)}) <= 2);
  CHECK(faithfulness_rank(drv, drv, {drv}) == 1);
}

TEST_CASE("diversity of a three-sample group") {
  FeatureEmbedder emb;
  std::mt19937 g(3);
  const Image a = random_image(32, 32, g), b = random_image(32, 32, g), c = random_image(32, 32, g);
  const auto fa = emb.embed(a), fb = emb.embed(b), fc = emb.embed(c);
  const double expect =
      (std::sqrt(feature_distance(fa, fb)) + std::sqrt(feature_distance(fa, fc)) + std::sqrt(feature_distance(fb, fc))) / 3.0;
  const auto d = diversity({{&a, &b, &c}, {&a}}, {}, emb, RegionMode::Image);
  CHECK(d.value == doctest::Approx(expect).epsilon(1e-9));
  CHECK(d.singleton_groups == 1);
  CHECK(diversity({{&a, &a, &a}}, {}, emb, RegionMode::Image).value == 0.0);
}

TEST_CASE("embedder is deterministic") {
  FeatureEmbedder e1, e2;
  std::mt19937 g(4);
  const Image a = random_image(64, 64, g);
  CHECK(e1.embed(a) == e2.embed(a));
  CHECK(static_cast<int>(e1.embed(a).size()) == e1.dim());
  CHECK(e1.descriptor() == e2.descriptor());
}

TEST_CASE("eval triplets and the copy-paste anchors") {
  const auto dir = testutil::scratch("evalkit_triplets");
  const auto m = dataio::make_toy_corpus(12, 64, 64, 5, dir, 0.25);
  TripletConfig tc;
  tc.n = 24;
  tc.seed = 9;
  const auto ts = build_eval_triplets(m, tc);
  REQUIRE(ts.size() == 24);
  for (const auto& t : ts) {
    CHECK(t.driver_source_id != t.source_id);
    const Rect& bb = t.region.bbox;
    const Rect& c = t.driver_crop;
    CHECK(c.height == static_cast<int>(std::lround(0.6 * bb.height)));
    CHECK(c.width == static_cast<int>(std::lround(0.6 * bb.width)));
    CHECK(std::abs((c.top + c.height / 2.0) - (bb.top + bb.height / 2.0)) <= 0.5);
    CHECK(std::abs((c.left + c.width / 2.0) - (bb.left + bb.width / 2.0)) <= 0.5);
    CHECK(c.area() < bb.area());
  }
  CHECK(build_eval_triplets(m, tc).front().driver.pixels == ts.front().driver.pixels);

  FeatureEmbedder emb;
  std::vector<const Image*> distractors;
  for (size_t i = 1; i < ts.size(); ++i) distractors.push_back(&ts[i].driver);
  for (const auto& t : ts) {
    const Image cp = baseline_copy_paste(t);
    CHECK(locality(cp, t.source, t.region).value == 0.0);
  }
  const Image cp0 = baseline_copy_paste(ts[0]);
  CHECK(faithfulness_rank(cp0, ts[0].region, ts[0].driver, distractors, emb) == 1);

  const auto ref = build_reference_set(m, tc);
  EvalConfig ec;
  const auto rep = evaluate(nullptr, Method::CopyPaste, ts, ref, ec, emb);
  CHECK(rep.locality_l1 == 0.0);
  CHECK(rep.r_at_1 == 1.0);
  CHECK(rep.n_samples == 24);
  CHECK(rep.r_at_1 <= rep.r_at_5);
  CHECK(rep.r_at_5 <= rep.r_at_20);
  CHECK(rep.fid_image > 0.0);
  CHECK(to_json(rep).dump() == to_json(evaluate(nullptr, Method::CopyPaste, ts, ref, ec, emb)).dump());

  dataio::DatasetManifest tiny = m;
  int kept_val = 0;
  for (auto& e : tiny.entries)
    if (e.split == dataio::Split::Val && ++kept_val > 1) e.split = dataio::Split::Train;
  try {
    build_eval_triplets(tiny, tc);
    FAIL("expected InsufficientData");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientData);
  }
}

TEST_CASE("free-form copy-paste tiles the driver inside the mask only") {
  Image src(3, 32, 32, 0.3f);
  Mask mk(32, 32);
  for (int y = 4; y < 24; ++y)
    for (int x = 6; x < 30 - y / 2; ++x) mk.bits[static_cast<size_t>(y) * 32 + x] = 1;
  EvalTriplet t;
  t.source = src;
  t.region = make_region_from_mask(mk, RegionKind::Freeform);
  std::mt19937 g(2);
  t.driver = random_image(16, 16, g);
  const Image out = baseline_copy_paste(t);
  CHECK(locality(out, src, t.region).value == 0.0);
  const Rect& bb = t.region.bbox;
  CHECK(out.at(0, bb.top, bb.left) == t.driver.at(0, 0, 0));
  CHECK(out.at(2, bb.top + 17, bb.left + 3) == t.driver.at(2, 1, 3));
}
