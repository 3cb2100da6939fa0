#include "evalkit/evalkit.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace e2eve::evalkit {

nlohmann::json to_json(const TripletConfig& c) {
  return {{"n", c.n},
          {"regions", editsynth::to_json(c.regions)},
          {"crop_ratio", c.crop_ratio},
          {"driver", {c.driver_height, c.driver_width}},
          {"freeform", c.freeform},
          {"seed", c.seed}};
}

nlohmann::json to_json(const EvalConfig& c) {
  return {{"n_candidates", c.n_candidates},
          {"n_keep", c.n_keep},
          {"filter", c.filter},
          {"policy", sampler::to_json(c.policy)},
          {"n_distractors", c.n_distractors},
          {"seed", c.seed},
          {"edit_region_embedding", "bbox crop, area-resized to 32x32"},
          {"locality_normalization", "mean over outside pixels and channels"},
          {"inpaint_realization", "learned null-driver embedding (driver dropped with p=0.05 in training)"}};
}

namespace {

EditRegion triplet_region(const dataio::DatasetManifest& m, const dataio::ManifestEntry& e, const TripletConfig& cfg,
                          Rng& rng) {
  if (cfg.freeform) {
    require(e.mask_path.has_value(), ErrorCode::InvalidArgument, "free-form triplets need manifest masks");
    return dataio::load_mask(m.root / *e.mask_path, m.image_height, m.image_width);
  }
  return editsynth::sample_block_region(m.image_height, m.image_width, cfg.regions, rng);
}

}  // namespace

std::vector<EvalTriplet> build_eval_triplets(const dataio::DatasetManifest& manifest, const TripletConfig& cfg) {
  const auto val = manifest.split(dataio::Split::Val);
  require(val.size() >= 2, ErrorCode::InsufficientData,
          "evaluation needs at least two val images, have " + std::to_string(val.size()));
  require(cfg.n >= 0, ErrorCode::InvalidArgument, "negative triplet count");
  require(cfg.crop_ratio > 0.0 && cfg.crop_ratio < 1.0, ErrorCode::InvalidArgument, "crop_ratio must lie in (0,1)");
  Rng rng(derive_seed(cfg.seed, "eval-triplets"));
  const auto last = static_cast<std::int64_t>(val.size()) - 1;
  std::vector<EvalTriplet> out;
  out.reserve(static_cast<size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    const auto si = rng.uniform_int(0, last);
    auto di = rng.uniform_int(0, last - 1);
    if (di >= si) ++di;
    const auto& se = *val[static_cast<size_t>(si)];
    const auto& de = *val[static_cast<size_t>(di)];
    EvalTriplet t;
    t.source = dataio::load_image(manifest, se);
    t.region = triplet_region(manifest, se, cfg, rng);
    t.driver_crop = editsynth::centered_subcrop(t.region, cfg.crop_ratio).rect;
    require(t.driver_crop.area() < t.region.bbox.area(), ErrorCode::InfeasibleCrop,
            "driver crop is not smaller than the region");
    const Image other = dataio::load_image(manifest, de);
    t.driver = resize_area(crop(other, t.driver_crop), cfg.driver_height, cfg.driver_width);
    t.source_id = se.id;
    t.driver_source_id = de.id;
    out.push_back(std::move(t));
  }
  return out;
}

double frechet_distance(const nn::Mat<double>& a, const nn::Mat<double>& b) {
  require(a.cols() == b.cols(), ErrorCode::ShapeError, "feature dimensions differ");
  require(a.rows() >= 2 && b.rows() >= 2, ErrorCode::InvalidArgument, "need at least two samples per set");
  using M = Eigen::MatrixXd;
  auto stats = [](const nn::Mat<double>& x, Eigen::VectorXd& mu, M& cov) {
    mu = x.colwise().mean().transpose();
    const M c = x.rowwise() - mu.transpose();
    cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  };
  Eigen::VectorXd mu1, mu2;
  M s1, s2;
  stats(a, mu1, s1);
  stats(b, mu2, s2);
  auto psd_sqrt = [](const M& m) {
    Eigen::SelfAdjointEigenSolver<M> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return M(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };
  // Tr (S1 S2)^1/2 = Tr (S1^1/2 S2 S1^1/2)^1/2, which keeps everything symmetric.
  const M r1 = psd_sqrt(s1);
  const M inner = r1 * s2 * r1;
  Eigen::SelfAdjointEigenSolver<M> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

namespace {

nn::Mat<double> embed_set(const std::vector<const Image*>& imgs, const std::vector<const EditRegion*>& regions,
                          const FeatureEmbedder& embedder, RegionMode mode) {
  if (mode == RegionMode::Image) return embedder.embed(imgs);
  require(regions.size() == imgs.size(), ErrorCode::ShapeError, "one region per image required");
  std::vector<Image> views;
  views.reserve(imgs.size());
  for (size_t i = 0; i < imgs.size(); ++i)
    views.push_back(sampler::region_view(*imgs[i], *regions[i], FeatureEmbedder::kInput, FeatureEmbedder::kInput));
  std::vector<const Image*> ptrs;
  for (const auto& v : views) ptrs.push_back(&v);
  return embedder.embed(ptrs);
}

std::vector<double> row_vec(const nn::Mat<double>& m, Eigen::Index r) {
  return std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols());
}

}  // namespace

double naturalness(const std::vector<const Image*>& edited, const std::vector<const EditRegion*>& edited_regions,
                   const std::vector<const Image*>& reference, const std::vector<const EditRegion*>& reference_regions,
                   const FeatureEmbedder& embedder, RegionMode mode) {
  return frechet_distance(embed_set(edited, edited_regions, embedder, mode),
                          embed_set(reference, reference_regions, embedder, mode));
}

Locality locality(const Image& edited, const Image& source, const EditRegion& region) {
  require(edited.same_shape(source), ErrorCode::ShapeError, "edited and source sizes differ");
  require(region.height() == source.height && region.width() == source.width, ErrorCode::MaskShapeMismatch,
          "region and image sizes differ");
  double sum = 0.0;
  long outside = 0;
  for (int y = 0; y < source.height; ++y)
    for (int x = 0; x < source.width; ++x) {
      if (region.inside(y, x)) continue;
      ++outside;
      for (int c = 0; c < source.channels; ++c) sum += std::abs(static_cast<double>(edited.at(c, y, x)) - source.at(c, y, x));
    }
  if (outside == 0) return {0.0, true};
  return {sum / (static_cast<double>(outside) * source.channels), false};
}

int faithfulness_rank(const std::vector<double>& query, const std::vector<double>& driver,
                      const std::vector<std::vector<double>>& distractors) {
  const double dd = feature_distance(query, driver);
  int rank = 1;
  for (const auto& d : distractors)
    if (feature_distance(query, d) < dd) ++rank;
  return rank;
}

int faithfulness_rank(const Image& edited, const EditRegion& region, const Image& driver,
                      const std::vector<const Image*>& distractors, const FeatureEmbedder& embedder) {
  const Image view = sampler::region_view(edited, region, driver.height, driver.width);
  std::vector<const Image*> all{&view, &driver};
  all.insert(all.end(), distractors.begin(), distractors.end());
  const auto f = embedder.embed(all);
  std::vector<std::vector<double>> ds;
  for (Eigen::Index i = 2; i < f.rows(); ++i) ds.push_back(row_vec(f, i));
  return faithfulness_rank(row_vec(f, 0), row_vec(f, 1), ds);
}

Diversity diversity(const std::vector<std::vector<const Image*>>& groups, const std::vector<const EditRegion*>& regions,
                    const FeatureEmbedder& embedder, RegionMode mode) {
  require(mode == RegionMode::Image || regions.size() == groups.size(), ErrorCode::ShapeError,
          "one region per group required");
  Diversity d;
  double total = 0.0;
  for (size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    if (grp.size() < 2) {
      ++d.singleton_groups;
      continue;
    }
    std::vector<const EditRegion*> rs(grp.size(), mode == RegionMode::Image ? nullptr : regions[g]);
    const auto f = embed_set(grp, rs, embedder, mode);
    double s = 0.0;
    int pairs = 0;
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (Eigen::Index j = i + 1; j < f.rows(); ++j) {
        s += (f.row(i) - f.row(j)).norm();
        ++pairs;
      }
    total += s / pairs;
    ++d.groups_used;
  }
  d.value = d.groups_used ? total / d.groups_used : 0.0;
  return d;
}

Image baseline_copy_paste(const EvalTriplet& t) {
  Image out = t.source;
  const Rect& bb = t.region.bbox;
  if (t.region.kind == RegionKind::Block) {
    paste(out, resize_area(t.driver, bb.height, bb.width), bb);
    return out;
  }
  for (int y = bb.top; y < bb.bottom(); ++y)
    for (int x = bb.left; x < bb.right(); ++x) {
      if (!t.region.inside(y, x)) continue;
      const int dy = (y - bb.top) % t.driver.height, dx = (x - bb.left) % t.driver.width;
      for (int c = 0; c < out.channels; ++c) out.at(c, y, x) = t.driver.at(c, dy, dx);
    }
  return out;
}

std::vector<sampler::Candidate> baseline_inpaint(const artist::ArtistModel& model, const EvalTriplet& t,
                                                 const sampler::SamplingPolicy& policy, int n) {
  require(model.config.null_driver, ErrorCode::Unsupported, "artist was built without a null-driver embedding");
  sampler::EditRequest req{t.source, t.region, std::nullopt, n, n, policy};
  return sampler::sample_edit(model, req).candidates;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::E2EVE: return "e2eve";
    case Method::CopyPaste: return "copy_paste";
    case Method::Inpaint: return "inpaint";
  }
  return "?";
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& t : r.per_triplet)
    per.push_back({{"source_id", t.source_id},
                   {"driver_source_id", t.driver_source_id},
                   {"ranks", t.ranks},
                   {"locality", t.locality},
                   {"nll", t.nll},
                   {"diversity_image", t.diversity_image},
                   {"diversity_edit", t.diversity_edit}});
  nlohmann::json j = {{"method", r.method},
                      {"fid_image", r.fid_image},
                      {"fid_edit_region", r.fid_edit_region},
                      {"retrieval", {{"r_at_1", r.r_at_1}, {"r_at_5", r.r_at_5}, {"r_at_20", r.r_at_20}}},
                      {"mean_rank", r.mean_rank},
                      {"locality_l1", r.locality_l1},
                      {"diversity_image", r.diversity_image},
                      {"diversity_edit", r.diversity_edit},
                      {"n_samples", r.n_samples},
                      {"empty_complement", r.empty_complement},
                      {"singleton_groups", r.singleton_groups},
                      {"per_triplet", per}};
  j["nll"] = r.nll ? nlohmann::json(*r.nll) : nlohmann::json(nullptr);
  return j;
}

ReferenceSet build_reference_set(const dataio::DatasetManifest& manifest, const TripletConfig& cfg) {
  ReferenceSet ref;
  Rng rng(derive_seed(cfg.seed, "eval-reference"));
  for (const auto* e : manifest.split(dataio::Split::Val)) {
    ref.images.push_back(dataio::load_image(manifest, *e));
    ref.regions.push_back(triplet_region(manifest, *e, cfg, rng));
  }
  return ref;
}

MetricsReport score_samples(const std::string& method, const std::vector<EvalTriplet>& triplets,
                            const std::vector<std::vector<sampler::Candidate>>& samples, const ReferenceSet& reference,
                            const EvalConfig& cfg, const FeatureEmbedder& embedder) {
  require(samples.size() == triplets.size(), ErrorCode::ShapeError, "one sample list per triplet required");
  MetricsReport r;
  r.method = method;
  const size_t n = triplets.size();
  const size_t n_distract = std::min(static_cast<size_t>(std::max(cfg.n_distractors, 0)), n > 0 ? n - 1 : 0);

  // Driver features are reused as distractors for the other triplets.
  std::vector<const Image*> drivers;
  for (const auto& t : triplets) drivers.push_back(&t.driver);
  const auto driver_f = embedder.embed(drivers);

  std::vector<const Image*> all_imgs;
  std::vector<const EditRegion*> all_regions;
  std::vector<std::vector<const Image*>> groups;
  std::vector<const EditRegion*> group_regions;
  std::vector<int> all_ranks;
  double loc_sum = 0.0, nll_sum = 0.0;
  bool have_nll = false;
  for (size_t i = 0; i < n; ++i) {
    const auto& t = triplets[i];
    TripletResult tr;
    tr.source_id = t.source_id;
    tr.driver_source_id = t.driver_source_id;
    std::vector<std::vector<double>> distract;
    for (size_t k = 1; k <= n_distract; ++k) distract.push_back(row_vec(driver_f, static_cast<Eigen::Index>((i + k) % n)));
    std::vector<Image> views;
    for (const auto& c : samples[i]) views.push_back(sampler::region_view(c.image, t.region, t.driver.height, t.driver.width));
    std::vector<const Image*> vptr;
    for (const auto& v : views) vptr.push_back(&v);
    const auto qf = embedder.embed(vptr);
    std::vector<const Image*> grp;
    for (size_t s = 0; s < samples[i].size(); ++s) {
      const auto& c = samples[i][s];
      tr.ranks.push_back(faithfulness_rank(row_vec(qf, static_cast<Eigen::Index>(s)), row_vec(driver_f, static_cast<Eigen::Index>(i)), distract));
      const Locality loc = locality(c.image, t.source, t.region);
      if (loc.empty_complement) ++r.empty_complement;
      tr.locality.push_back(loc.value);
      loc_sum += loc.value;
      all_ranks.push_back(tr.ranks.back());
      if (method != "copy_paste") {
        tr.nll.push_back(c.nll);
        nll_sum += c.nll;
        have_nll = true;
      }
      all_imgs.push_back(&c.image);
      all_regions.push_back(&t.region);
      grp.push_back(&c.image);
    }
    const Diversity di = diversity({grp}, {&t.region}, embedder, RegionMode::Image);
    const Diversity de = diversity({grp}, {&t.region}, embedder, RegionMode::EditRegion);
    tr.diversity_image = di.value;
    tr.diversity_edit = de.value;
    groups.push_back(std::move(grp));
    group_regions.push_back(&t.region);
    r.per_triplet.push_back(std::move(tr));
  }
  r.n_samples = static_cast<int>(all_ranks.size());
  if (r.n_samples > 0) {
    auto frac = [&](int k) {
      return static_cast<double>(std::count_if(all_ranks.begin(), all_ranks.end(), [k](int x) { return x <= k; })) /
             static_cast<double>(all_ranks.size());
    };
    r.r_at_1 = frac(1);
    r.r_at_5 = frac(5);
    r.r_at_20 = frac(20);
    double rs = 0.0;
    for (int x : all_ranks) rs += x;
    r.mean_rank = rs / static_cast<double>(all_ranks.size());
    r.locality_l1 = loc_sum / r.n_samples;
    if (have_nll) r.nll = nll_sum / r.n_samples;
  }
  std::vector<const Image*> ref_imgs;
  std::vector<const EditRegion*> ref_regions;
  for (size_t i = 0; i < reference.images.size(); ++i) {
    ref_imgs.push_back(&reference.images[i]);
    ref_regions.push_back(&reference.regions[i]);
  }
  if (all_imgs.size() >= 2 && ref_imgs.size() >= 2) {
    r.fid_image = naturalness(all_imgs, all_regions, ref_imgs, ref_regions, embedder, RegionMode::Image);
    r.fid_edit_region = naturalness(all_imgs, all_regions, ref_imgs, ref_regions, embedder, RegionMode::EditRegion);
  }
  const Diversity di = diversity(groups, group_regions, embedder, RegionMode::Image);
  const Diversity de = diversity(groups, group_regions, embedder, RegionMode::EditRegion);
  r.diversity_image = di.value;
  r.diversity_edit = de.value;
  r.singleton_groups = di.singleton_groups;
  return r;
}

MetricsReport evaluate(const artist::ArtistModel* model, Method method, const std::vector<EvalTriplet>& triplets,
                       const ReferenceSet& reference, const EvalConfig& cfg, const FeatureEmbedder& embedder) {
  std::vector<std::vector<sampler::Candidate>> samples;
  samples.reserve(triplets.size());
  for (size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    sampler::SamplingPolicy pol = cfg.policy;
    pol.seed = derive_seed(cfg.seed, "eval-triplet", i);
    switch (method) {
      case Method::CopyPaste: {
        sampler::Candidate c;
        c.image = baseline_copy_paste(t);
        c.kept = true;
        samples.push_back({std::move(c)});
        break;
      }
      case Method::Inpaint:
        require(model != nullptr, ErrorCode::InvalidArgument, "inpaint needs a model");
        samples.push_back(baseline_inpaint(*model, t, pol, cfg.n_keep));
        break;
      case Method::E2EVE: {
        require(model != nullptr, ErrorCode::InvalidArgument, "e2eve needs a model");
        sampler::EditRequest req{t.source, t.region, t.driver, cfg.filter ? cfg.n_candidates : cfg.n_keep,
                                 cfg.n_keep, pol};
        if (cfg.filter) {
          samples.push_back(sampler::sample_and_filter(*model, req, embedder));
        } else {
          auto res = sampler::sample_edit(*model, req);
          samples.push_back(std::move(res.candidates));
        }
        break;
      }
    }
  }
  return score_samples(method_name(method), triplets, samples, reference, cfg, embedder);
}

}  // namespace e2eve::evalkit
