#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "common/error.hpp"
#include "doctest.h"
#include "sampler/sampler.hpp"

using namespace e2eve;
using namespace e2eve::sampler;

namespace {

std::vector<double> random_hist(std::mt19937_64& g, int k) {
  std::gamma_distribution<double> gam(0.3, 1.0);
  std::vector<double> h(static_cast<size_t>(k));
  double s = 0.0;
  for (auto& v : h) s += (v = gam(g) + 1e-12);
  for (auto& v : h) v /= s;
  return h;
}

// Oracle: enumerate prefix sizes of the (prob desc, index asc) order and take the first whose
// mass reaches p.
std::set<int> oracle_nucleus(const std::vector<double>& h, double p) {
  std::vector<std::pair<double, int>> v;
  for (size_t i = 0; i < h.size(); ++i) v.emplace_back(-h[i], static_cast<int>(i));
  std::sort(v.begin(), v.end());
  if (p >= 1.0) {
    std::set<int> all;
    for (size_t i = 0; i < h.size(); ++i) all.insert(static_cast<int>(i));
    return all;
  }
  for (size_t n = 1; n <= v.size(); ++n) {
    double mass = 0.0;
    for (size_t i = 0; i < n; ++i) mass -= v[i].first;
    if (mass >= p || n == v.size()) {
      std::set<int> s;
      for (size_t i = 0; i < n; ++i) s.insert(v[i].second);
      return s;
    }
  }
  return {};
}

std::set<int> oracle_topk(const std::vector<double>& h, int k) {
  std::vector<std::pair<double, int>> v;
  for (size_t i = 0; i < h.size(); ++i) v.emplace_back(-h[i], static_cast<int>(i));
  std::sort(v.begin(), v.end());
  std::set<int> s;
  for (int i = 0; i < k; ++i) s.insert(v[static_cast<size_t>(i)].second);
  return s;
}

std::set<int> support(const std::vector<double>& h) {
  std::set<int> s;
  for (size_t i = 0; i < h.size(); ++i)
    if (h[i] > 0.0) s.insert(static_cast<int>(i));
  return s;
}

double mass(const std::vector<double>& h) { return std::accumulate(h.begin(), h.end(), 0.0); }

}  // namespace

TEST_CASE("nucleus worked example") {
  const std::vector<double> h{0.5, 0.3, 0.15, 0.05};
  const auto r = nucleus_restrict(h, 0.9);
  CHECK(r[0] == doctest::Approx(0.5 / 0.95).epsilon(1e-12));
  CHECK(r[1] == doctest::Approx(0.3 / 0.95).epsilon(1e-12));
  CHECK(r[2] == doctest::Approx(0.15 / 0.95).epsilon(1e-12));
  CHECK(r[3] == 0.0);
  CHECK(r[0] == doctest::Approx(0.5263).epsilon(1e-4));
}

TEST_CASE("top-k worked example and ties") {
  const auto r = topk_restrict(std::vector<double>{0.4, 0.4, 0.2}, 2);
  CHECK(r == std::vector<double>{0.5, 0.5, 0.0});
  const auto t = topk_restrict(std::vector<double>{0.2, 0.4, 0.4}, 1);
  CHECK(t == std::vector<double>{0.0, 1.0, 0.0});
  const auto n = nucleus_restrict(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 0.0);
  CHECK(n == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("restrictions match exhaustive enumeration on random histograms") {
  std::mt19937_64 g(17);
  std::uniform_real_distribution<double> up(0.0, 1.0);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int k = 2 + static_cast<int>(g() % 40);
    const auto h = random_hist(g, k);
    const double p = (trial % 10 == 0) ? (trial % 20 == 0 ? 0.0 : 1.0) : up(g);
    const int kk = 1 + static_cast<int>(g() % static_cast<unsigned>(k));
    const auto rn = nucleus_restrict(h, p);
    const auto rk = topk_restrict(h, kk);
    if (support(rn) != oracle_nucleus(h, p)) ++mismatches;
    if (support(rk) != oracle_topk(h, kk)) ++mismatches;
    if (std::abs(mass(rn) - 1.0) > 1e-6 || std::abs(mass(rk) - 1.0) > 1e-6) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("p=0, greedy and k=1 coincide; p=1 keeps everything") {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto h = random_hist(g, 16);
    SamplingPolicy greedy;
    greedy.kind = PolicyKind::Greedy;
    const auto a = nucleus_restrict(h, 0.0);
    CHECK(a == topk_restrict(h, 1));
    CHECK(a == restrict_for(greedy, h));
    CHECK(support(nucleus_restrict(h, 1.0)).size() == h.size());
  }
}

TEST_CASE("support grows monotonically with p") {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto h = random_hist(g, 24);
    std::set<int> prev;
    for (double p = 0.0; p <= 1.0001; p += 0.05) {
      const auto s = support(nucleus_restrict(h, std::min(p, 1.0)));
      CHECK(std::includes(s.begin(), s.end(), prev.begin(), prev.end()));
      prev = s;
    }
  }
}

TEST_CASE("draws follow the restricted histogram") {
  Rng rng(9);
  const std::vector<double> h{0.0, 0.25, 0.0, 0.75};
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < 40000; ++i) ++counts[draw_token(h, rng)];
  CHECK(counts[0] == 0);
  CHECK(counts[2] == 0);
  CHECK(counts[3] / 40000.0 == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("policy validation") {
  SamplingPolicy p;
  p.p = 1.5;
  CHECK_THROWS_AS(p.validate(16), Error);
  p.p = 0.9;
  p.temperature = 0.0;
  CHECK_THROWS_AS(p.validate(16), Error);
  p.temperature = 1.0;
  p.kind = PolicyKind::TopK;
  p.k = 17;
  CHECK_THROWS_AS(p.validate(16), Error);
  p.k = 16;
  CHECK_NOTHROW(p.validate(16));
  CHECK(policy_from_json(to_json(p)).k == 16);
  CHECK(parse_policy_kind("top_p") == PolicyKind::TopP);
}

TEST_CASE("filter ordering") {
  const std::vector<double> sim{-3.0, -1.0, -1.0, 0.0, -2.0};
  CHECK(filter_by_driver(sim, 3) == std::vector<int>{3, 1, 2});
  CHECK(filter_by_driver(sim, 5) == std::vector<int>{3, 1, 2, 4, 0});
  try {
    filter_by_driver(sim, 6);
    FAIL("expected InvalidRequest");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidRequest);
  }
}
