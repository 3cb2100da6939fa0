#include "sampler/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "common/error.hpp"

namespace e2eve::sampler {

void SamplingPolicy::validate(int vocab) const {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorCode::InvalidArgument, "temperature must be > 0");
  if (kind == PolicyKind::TopP) require(p >= 0.0 && p <= 1.0, ErrorCode::InvalidArgument, "p must lie in [0,1]");
  if (kind == PolicyKind::TopK)
    require(k >= 1 && k <= vocab, ErrorCode::InvalidArgument, "k must lie in [1, " + std::to_string(vocab) + "]");
}

const char* policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Greedy: return "greedy";
    case PolicyKind::TopK: return "top_k";
    case PolicyKind::TopP: return "top_p";
  }
  return "?";
}

PolicyKind parse_policy_kind(const std::string& s) {
  if (s == "greedy") return PolicyKind::Greedy;
  if (s == "top_k" || s == "top-k" || s == "topk") return PolicyKind::TopK;
  if (s == "top_p" || s == "top-p" || s == "topp" || s == "nucleus") return PolicyKind::TopP;
  fail(ErrorCode::InvalidArgument, "unknown policy '" + s + "' (greedy, top_k, top_p)");
}

nlohmann::json to_json(const SamplingPolicy& p) {
  return {{"kind", policy_kind_name(p.kind)}, {"k", p.k}, {"p", p.p}, {"temperature", p.temperature}, {"seed", p.seed}};
}

SamplingPolicy policy_from_json(const nlohmann::json& j) {
  SamplingPolicy p;
  p.kind = parse_policy_kind(j.value("kind", std::string("top_p")));
  p.k = j.value("k", p.k);
  p.p = j.value("p", p.p);
  p.temperature = j.value("temperature", p.temperature);
  p.seed = j.value("seed", p.seed);
  return p;
}

namespace {

std::vector<int> sorted_order(std::span<const double> hist) {
  std::vector<int> idx(hist.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return hist[static_cast<size_t>(a)] > hist[static_cast<size_t>(b)]; });
  return idx;
}

std::vector<double> keep_first(std::span<const double> hist, const std::vector<int>& order, size_t n) {
  std::vector<double> out(hist.size(), 0.0);
  double mass = 0.0;
  for (size_t i = 0; i < n; ++i) mass += hist[static_cast<size_t>(order[i])];
  for (size_t i = 0; i < n; ++i) {
    const auto t = static_cast<size_t>(order[i]);
    out[t] = mass > 0.0 ? hist[t] / mass : 1.0 / static_cast<double>(n);
  }
  return out;
}

}  // namespace

std::vector<double> nucleus_restrict(std::span<const double> hist, double p) {
  require(!hist.empty(), ErrorCode::InvalidArgument, "empty histogram");
  const auto order = sorted_order(hist);
  if (p >= 1.0) return keep_first(hist, order, hist.size());
  size_t n = 0;
  double cum = 0.0;
  while (n < hist.size()) {
    cum += hist[static_cast<size_t>(order[n])];
    ++n;
    if (cum >= p) break;
  }
  return keep_first(hist, order, n);
}

std::vector<double> topk_restrict(std::span<const double> hist, int k) {
  require(k >= 1, ErrorCode::InvalidArgument, "k must be >= 1");
  return keep_first(hist, sorted_order(hist), std::min(hist.size(), static_cast<size_t>(k)));
}

std::vector<double> restrict_for(const SamplingPolicy& policy, std::span<const double> hist) {
  switch (policy.kind) {
    case PolicyKind::Greedy: return topk_restrict(hist, 1);
    case PolicyKind::TopK: return topk_restrict(hist, policy.k);
    case PolicyKind::TopP: return nucleus_restrict(hist, policy.p);
  }
  fail(ErrorCode::Internal, "unhandled policy");
}

int draw_token(std::span<const double> hist, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  int last = -1;
  for (size_t i = 0; i < hist.size(); ++i) {
    if (hist[i] <= 0.0) continue;
    cum += hist[i];
    last = static_cast<int>(i);
    if (u < cum) return last;
  }
  require(last >= 0, ErrorCode::Internal, "histogram has no mass");
  return last;
}

Image region_view(const Image& img, const EditRegion& region, int h, int w) {
  return resize_area(crop(img, region.bbox), h, w);
}

SampleResult sample_edit(const artist::ArtistModel& model, const EditRequest& req) {
  const auto& cfg = model.config;
  require(model.vq_image && model.vq_driver, ErrorCode::ModelMismatch, "artist has no quantizers attached");
  req.policy.validate(cfg.k_img);
  require(req.n_candidates >= 1, ErrorCode::InvalidRequest, "n_candidates must be >= 1");
  require(req.n_keep >= 0 && req.n_keep <= req.n_candidates, ErrorCode::InvalidRequest,
          "n_keep must not exceed n_candidates");
  const auto& icfg = model.vq_image->config;
  require(req.source.height == icfg.image_height && req.source.width == icfg.image_width, ErrorCode::ShapeError,
          "source must be " + std::to_string(icfg.image_height) + "x" + std::to_string(icfg.image_width));
  validate_region(req.region);
  require(req.region.height() == req.source.height && req.region.width() == req.source.width,
          ErrorCode::MaskShapeMismatch, "region and source sizes differ");

  const auto t0 = std::chrono::steady_clock::now();
  const Image masked = apply_hole(req.source, req.region.mask);
  const auto src = vq::encode(*model.vq_image, masked).tokens;
  std::vector<int> drv;
  if (req.driver) drv = vq::encode(*model.vq_driver, *req.driver).tokens;

  const std::vector<int> blank(static_cast<size_t>(cfg.n_out() - 1), 0);
  std::optional<std::span<const int>> drv_span;
  if (req.driver) drv_span = std::span<const int>(drv);
  const artist::TokenSequence base = artist::build_sequence(cfg, src, drv_span, blank);
  const int n_cond = cfg.n_src() + cfg.n_drv();

  // The conditioning prefix is shared by every candidate.
  auto prefix = model.net.new_state();
  for (int t = 0; t < n_cond - 1; ++t) model.net.step(prefix, base, false);

  SampleResult res;
  res.candidates.resize(static_cast<size_t>(req.n_candidates));
  for (int i = 0; i < req.n_candidates; ++i) {
    Rng rng(derive_seed(req.policy.seed, "candidate", static_cast<std::uint64_t>(i)));
    auto state = prefix;
    auto seq = base;
    Candidate& c = res.candidates[static_cast<size_t>(i)];
    c.index = i;
    c.tokens.resize(static_cast<size_t>(cfg.n_out()));
    double nll = 0.0;
    for (int m = 0; m < cfg.n_out(); ++m) {
      const auto logits = *model.net.step(state, seq, true);
      const std::span<const float> lg(logits);
      const auto model_p = artist::softmax<float>(lg, 1.0);
      const auto tempered = req.policy.temperature == 1.0 ? model_p : artist::softmax<float>(lg, req.policy.temperature);
      const int tok = draw_token(restrict_for(req.policy, tempered), rng);
      nll -= std::log(std::max(model_p[static_cast<size_t>(tok)], 1e-300));
      c.tokens[static_cast<size_t>(m)] = tok;
      if (m + 1 < cfg.n_out()) seq.tokens[static_cast<size_t>(n_cond + m)] = tok;
    }
    c.nll = nll / cfg.n_out();
    c.image = vq::decode(*model.vq_image, vq::TokenGrid{cfg.out_h, cfg.out_w, c.tokens});
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.images_per_second = res.seconds > 0.0 ? req.n_candidates / res.seconds : 0.0;
  return res;
}

std::vector<double> driver_similarity(const std::vector<const Image*>& candidates, const Image& driver,
                                      const EditRegion& region, const evalkit::FeatureEmbedder& embedder) {
  std::vector<Image> views;
  views.reserve(candidates.size());
  for (const auto* c : candidates) views.push_back(region_view(*c, region, driver.height, driver.width));
  std::vector<const Image*> ptrs;
  for (const auto& v : views) ptrs.push_back(&v);
  const auto f = embedder.embed(ptrs);
  const auto d = embedder.embed(driver);
  std::vector<double> sim(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i)
    sim[i] = -evalkit::feature_distance(std::span<const double>(f.row(static_cast<Eigen::Index>(i)).data(), d.size()), d);
  return sim;
}

std::vector<int> filter_by_driver(std::span<const double> similarity, int n_keep) {
  require(n_keep >= 0 && static_cast<size_t>(n_keep) <= similarity.size(), ErrorCode::InvalidRequest,
          "n_keep exceeds the number of candidates");
  std::vector<int> idx(similarity.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return similarity[static_cast<size_t>(a)] > similarity[static_cast<size_t>(b)];
  });
  idx.resize(static_cast<size_t>(n_keep));
  return idx;
}

std::vector<Candidate> sample_and_filter(const artist::ArtistModel& model, const EditRequest& request,
                                         const evalkit::FeatureEmbedder& embedder, SampleResult* all) {
  require(request.driver.has_value(), ErrorCode::InvalidRequest, "filtering needs a driver");
  SampleResult res = sample_edit(model, request);
  std::vector<const Image*> imgs;
  for (const auto& c : res.candidates) imgs.push_back(&c.image);
  const auto sim = driver_similarity(imgs, *request.driver, request.region, embedder);
  for (size_t i = 0; i < sim.size(); ++i) res.candidates[i].similarity = sim[i];
  const auto keep = filter_by_driver(sim, request.n_keep);
  std::vector<Candidate> kept;
  for (int i : keep) {
    res.candidates[static_cast<size_t>(i)].kept = true;
    kept.push_back(res.candidates[static_cast<size_t>(i)]);
  }
  if (all) *all = std::move(res);
  return kept;
}

}  // namespace e2eve::sampler
