#include "artist/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace e2eve::artist {

void ArtistConfig::validate() const {
  require(n_layers >= 1 && n_heads >= 1 && d_model >= n_heads && d_model % n_heads == 0, ErrorCode::InvalidArgument,
          "d_model must be a positive multiple of n_heads");
  require(src_h > 0 && src_w > 0 && drv_h > 0 && drv_w > 0 && out_h > 0 && out_w > 0, ErrorCode::InvalidArgument,
          "segment grids must be non-empty");
  require(k_img >= 1 && k_drv >= 1, ErrorCode::InvalidArgument, "vocabularies must be non-empty");
}

nlohmann::json to_json(const ArtistConfig& c) {
  return {{"n_layers", c.n_layers},  {"n_heads", c.n_heads},         {"d_model", c.d_model},
          {"source_grid", {c.src_h, c.src_w}}, {"driver_grid", {c.drv_h, c.drv_w}},
          {"output_grid", {c.out_h, c.out_w}}, {"k_img", c.k_img},   {"k_drv", c.k_drv},
          {"null_driver", c.null_driver},      {"segment_order", {"source", "driver", "output"}},
          {"separator_token", false}};
}

ArtistConfig artist_config_from_json(const nlohmann::json& j) {
  ArtistConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.src_h = j.at("source_grid").at(0).get<int>();
  c.src_w = j.at("source_grid").at(1).get<int>();
  c.drv_h = j.at("driver_grid").at(0).get<int>();
  c.drv_w = j.at("driver_grid").at(1).get<int>();
  c.out_h = j.at("output_grid").at(0).get<int>();
  c.out_w = j.at("output_grid").at(1).get<int>();
  c.k_img = j.at("k_img").get<int>();
  c.k_drv = j.at("k_drv").get<int>();
  c.null_driver = j.value("null_driver", true);
  return c;
}

TokenSequence build_sequence(const ArtistConfig& cfg, std::span<const int> source,
                             std::optional<std::span<const int>> driver, std::span<const int> output_prefix) {
  require(source.size() == static_cast<size_t>(cfg.n_src()), ErrorCode::ShapeError, "source token count mismatch");
  require(!driver || driver->size() == static_cast<size_t>(cfg.n_drv()), ErrorCode::ShapeError,
          "driver token count mismatch");
  require(driver || cfg.null_driver, ErrorCode::Unsupported, "model has no null-driver embedding");
  require(output_prefix.size() <= static_cast<size_t>(cfg.n_out()), ErrorCode::SequenceTooLong,
          "output prefix longer than the output segment");
  TokenSequence s;
  s.tokens.reserve(static_cast<size_t>(cfg.max_len()));
  s.positions.reserve(static_cast<size_t>(cfg.max_len()));
  auto push = [&](int tok, int vocab, Segment seg, int i, int w) {
    require(tok >= 0 && tok < vocab, ErrorCode::InvalidToken, "token " + std::to_string(tok) + " outside vocab");
    s.tokens.push_back(tok);
    s.positions.push_back(Position{seg, i / w, i % w});
  };
  for (size_t i = 0; i < source.size(); ++i) push(source[i], cfg.k_img, Segment::Source, static_cast<int>(i), cfg.src_w);
  for (int i = 0; i < cfg.n_drv(); ++i)
    push(driver ? (*driver)[static_cast<size_t>(i)] : 0, cfg.k_drv, Segment::Driver, i, cfg.drv_w);
  for (size_t i = 0; i < output_prefix.size(); ++i)
    push(output_prefix[i], cfg.k_img, Segment::Output, static_cast<int>(i), cfg.out_w);
  s.null_driver = !driver.has_value();
  s.n_prefix = static_cast<int>(output_prefix.size());
  return s;
}

template <typename T>
std::vector<double> softmax(std::span<const T> logits, double temperature) {
  std::vector<double> p(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (auto v : logits) mx = std::max(mx, static_cast<double>(v) / temperature);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) / temperature - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template std::vector<double> softmax(std::span<const float>, double);
template std::vector<double> softmax(std::span<const double>, double);

namespace {

constexpr double kLnEps = 1e-5;

template <typename T>
void layernorm_forward(const nn::Mat<T>& x, const nn::Param<T>& g, const nn::Param<T>& b, nn::Mat<T>& xhat,
                       std::vector<T>& rstd, nn::Mat<T>& y) {
  const Eigen::Index n = x.rows(), d = x.cols();
  xhat.resize(n, d);
  y.resize(n, d);
  rstd.resize(static_cast<size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T rs = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + kLnEps));
    rstd[static_cast<size_t>(r)] = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
    y.row(r) = xhat.row(r).cwiseProduct(g.value.row(0)) + b.value.row(0);
  }
}

template <typename T>
nn::Mat<T> layernorm_backward(const nn::Mat<T>& dy, const nn::Mat<T>& xhat, const std::vector<T>& rstd,
                              nn::Param<T>& g, nn::Param<T>& b) {
  g.grad.row(0) += (dy.cwiseProduct(xhat)).colwise().sum();
  b.grad.row(0) += dy.colwise().sum();
  nn::Mat<T> dx(dy.rows(), dy.cols());
  const T inv_d = static_cast<T>(1.0 / static_cast<double>(dy.cols()));
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const auto dxhat = dy.row(r).cwiseProduct(g.value.row(0));
    const T m1 = dxhat.sum() * inv_d;
    const T m2 = dxhat.cwiseProduct(xhat.row(r)).sum() * inv_d;
    dx.row(r) = rstd[static_cast<size_t>(r)] * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

template <typename T>
T gelu(T x) {
  const double s = std::sqrt(2.0 / M_PI);
  const double xd = static_cast<double>(x);
  return static_cast<T>(0.5 * xd * (1.0 + std::tanh(s * (xd + 0.044715 * xd * xd * xd))));
}

template <typename T>
T gelu_grad(T x) {
  const double s = std::sqrt(2.0 / M_PI);
  const double xd = static_cast<double>(x);
  const double u = s * (xd + 0.044715 * xd * xd * xd);
  const double th = std::tanh(u);
  return static_cast<T>(0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * s * (1.0 + 3.0 * 0.044715 * xd * xd));
}

}  // namespace

template <typename T>
Transformer<T>::Transformer(const ArtistConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg.d_model;
  Rng rng(derive_seed(seed, "artist-init"));
  auto make = [&](const std::string& name, int rows, int cols, double stddev, bool decay) {
    nn::Param<T> p(name, rows, cols, decay);
    if (stddev > 0.0) init_normal(p, stddev, rng);
    return p;
  };
  const double s = 0.02;
  const double s_proj = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  tok_src_ = make("tok_src", cfg.k_img, d, s, false);
  tok_drv_ = make("tok_drv", cfg.k_drv, d, s, false);
  tok_out_ = make("tok_out", cfg.k_img, d, s, false);
  null_drv_ = make("null_driver", 1, d, s, false);
  pos_src_r_ = make("pos_src_row", cfg.src_h, d, s, false);
  pos_src_c_ = make("pos_src_col", cfg.src_w, d, s, false);
  pos_drv_r_ = make("pos_drv_row", cfg.drv_h, d, s, false);
  pos_drv_c_ = make("pos_drv_col", cfg.drv_w, d, s, false);
  pos_out_r_ = make("pos_out_row", cfg.out_h, d, s, false);
  pos_out_c_ = make("pos_out_col", cfg.out_w, d, s, false);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    Block b{make(p + "ln1_g", 1, d, 0, false),          make(p + "ln1_b", 1, d, 0, false),
            make(p + "w_qkv", d, 3 * d, s, true),       make(p + "b_qkv", 1, 3 * d, 0, false),
            make(p + "w_proj", d, d, s_proj, true),     make(p + "b_proj", 1, d, 0, false),
            make(p + "ln2_g", 1, d, 0, false),          make(p + "ln2_b", 1, d, 0, false),
            make(p + "w_fc", d, 4 * d, s, true),        make(p + "b_fc", 1, 4 * d, 0, false),
            make(p + "w_fc2", 4 * d, d, s_proj, true),  make(p + "b_fc2", 1, d, 0, false)};
    b.ln1_g.value.setOnes();
    b.ln2_g.value.setOnes();
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = make("lnf_g", 1, d, 0, false);
  lnf_g_.value.setOnes();
  lnf_b_ = make("lnf_b", 1, d, 0, false);
  w_head_ = make("w_head", d, cfg.k_img, s, true);
  b_head_ = make("b_head", 1, cfg.k_img, 0, false);
}

template <typename T>
void Transformer<T>::collect(std::vector<nn::Param<T>*>& out) {
  for (auto* p : {&tok_src_, &tok_drv_, &tok_out_, &null_drv_, &pos_src_r_, &pos_src_c_, &pos_drv_r_, &pos_drv_c_,
                  &pos_out_r_, &pos_out_c_})
    out.push_back(p);
  for (auto& b : blocks_)
    for (auto* p : {&b.ln1_g, &b.ln1_b, &b.w_qkv, &b.b_qkv, &b.w_proj, &b.b_proj, &b.ln2_g, &b.ln2_b, &b.w_fc, &b.b_fc,
                    &b.w_fc2, &b.b_fc2})
      out.push_back(p);
  for (auto* p : {&lnf_g_, &lnf_b_, &w_head_, &b_head_}) out.push_back(p);
}

template <typename T>
size_t Transformer<T>::parameter_count() const {
  std::vector<nn::Param<T>*> ps;
  const_cast<Transformer*>(this)->collect(ps);
  size_t n = 0;
  for (auto* p : ps) n += static_cast<size_t>(p->size());
  return n;
}

template <typename T>
void Transformer<T>::embed_row(const TokenSequence& seq, int t, T* out) const {
  const Position& pos = seq.positions[static_cast<size_t>(t)];
  const int tok = seq.tokens[static_cast<size_t>(t)];
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> row(out, cfg_.d_model);
  switch (pos.segment) {
    case Segment::Source:
      row = tok_src_.value.row(tok) + pos_src_r_.value.row(pos.row) + pos_src_c_.value.row(pos.col);
      break;
    case Segment::Driver:
      row = (seq.null_driver ? null_drv_.value.row(0) : tok_drv_.value.row(tok)) + pos_drv_r_.value.row(pos.row) +
            pos_drv_c_.value.row(pos.col);
      break;
    case Segment::Output:
      row = tok_out_.value.row(tok) + pos_out_r_.value.row(pos.row) + pos_out_c_.value.row(pos.col);
      break;
  }
}

template <typename T>
void Transformer<T>::embed_backward(const TokenSequence& seq, int t, const T* grad) {
  const Position& pos = seq.positions[static_cast<size_t>(t)];
  const int tok = seq.tokens[static_cast<size_t>(t)];
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> g(grad, cfg_.d_model);
  switch (pos.segment) {
    case Segment::Source:
      tok_src_.grad.row(tok) += g;
      pos_src_r_.grad.row(pos.row) += g;
      pos_src_c_.grad.row(pos.col) += g;
      break;
    case Segment::Driver:
      if (seq.null_driver)
        null_drv_.grad.row(0) += g;
      else
        tok_drv_.grad.row(tok) += g;
      pos_drv_r_.grad.row(pos.row) += g;
      pos_drv_c_.grad.row(pos.col) += g;
      break;
    case Segment::Output:
      tok_out_.grad.row(tok) += g;
      pos_out_r_.grad.row(pos.row) += g;
      pos_out_c_.grad.row(pos.col) += g;
      break;
  }
}

template <typename T>
typename Transformer<T>::Mat Transformer<T>::forward(const std::vector<TokenSequence>& seqs, Cache* cache) const {
  require(!seqs.empty(), ErrorCode::InvalidArgument, "empty batch");
  const int len = static_cast<int>(seqs.front().size());
  const int n_cond = cfg_.n_src() + cfg_.n_drv();
  require(len <= cfg_.max_len(), ErrorCode::SequenceTooLong,
          "sequence length " + std::to_string(len) + " exceeds " + std::to_string(cfg_.max_len()));
  require(len >= n_cond, ErrorCode::ShapeError, "sequence lacks its conditioning segments");
  for (const auto& s : seqs)
    require(static_cast<int>(s.size()) == len && s.positions.size() == s.tokens.size(), ErrorCode::ShapeError,
            "batch sequences must share one length");
  const int batch = static_cast<int>(seqs.size());
  const int d = cfg_.d_model, heads = cfg_.n_heads, dh = d / heads;
  const int n_hist = std::min(len - n_cond + 1, cfg_.n_out());
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * len;

  Mat x(rows, d);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < len; ++t) embed_row(seqs[static_cast<size_t>(b)], t, x.row(b * len + t).data());

  if (cache) {
    cache->batch = batch;
    cache->len = len;
    cache->n_hist = n_hist;
    cache->seqs = seqs;
    cache->blocks.assign(blocks_.size(), BlockCache{});
  }
  BlockCache scratch;
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const Block& blk = blocks_[l];
    BlockCache& c = cache ? cache->blocks[l] : scratch;
    c.x_in = x;
    layernorm_forward(x, blk.ln1_g, blk.ln1_b, c.xhat1, c.rstd1, c.h1);
    c.qkv.noalias() = c.h1 * blk.w_qkv.value;
    c.qkv.rowwise() += blk.b_qkv.value.row(0);
    c.attn.resize(rows, d);
    c.probs.assign(static_cast<size_t>(batch * heads), Mat());
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(b * len, h * dh, len, dh);
        const auto k = c.qkv.block(b * len, d + h * dh, len, dh);
        const auto v = c.qkv.block(b * len, 2 * d + h * dh, len, dh);
        Mat& p = c.probs[static_cast<size_t>(b * heads + h)];
        p.noalias() = (q * k.transpose()) * scale;
        for (int i = 0; i < len; ++i) {
          T mx = p(i, 0);
          for (int j = 1; j <= i; ++j) mx = std::max(mx, p(i, j));
          T sum = 0;
          for (int j = 0; j <= i; ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
          }
          for (int j = 0; j <= i; ++j) p(i, j) /= sum;
          for (int j = i + 1; j < len; ++j) p(i, j) = T(0);
        }
        c.attn.block(b * len, h * dh, len, dh).noalias() = p * v;
      }
    c.x_mid.noalias() = c.attn * blk.w_proj.value;
    c.x_mid.rowwise() += blk.b_proj.value.row(0);
    c.x_mid += x;
    layernorm_forward(c.x_mid, blk.ln2_g, blk.ln2_b, c.xhat2, c.rstd2, c.h2);
    c.f.noalias() = c.h2 * blk.w_fc.value;
    c.f.rowwise() += blk.b_fc.value.row(0);
    c.g = c.f.unaryExpr([](T v) { return gelu(v); });
    x.noalias() = c.g * blk.w_fc2.value;
    x.rowwise() += blk.b_fc2.value.row(0);
    x += c.x_mid;
  }

  Mat sel(static_cast<Eigen::Index>(batch) * n_hist, d);
  for (int b = 0; b < batch; ++b)
    for (int m = 0; m < n_hist; ++m) sel.row(b * n_hist + m) = x.row(b * len + n_cond - 1 + m);
  Mat xhat_f, h_f;
  std::vector<T> rstd_f;
  layernorm_forward(sel, lnf_g_, lnf_b_, xhat_f, rstd_f, h_f);
  Mat logits = h_f * w_head_.value;
  logits.rowwise() += b_head_.value.row(0);
  if (cache) {
    cache->x_final_sel = std::move(sel);
    cache->xhat_f = std::move(xhat_f);
    cache->h_f = std::move(h_f);
    cache->rstd_f = std::move(rstd_f);
  }
  return logits;
}

template <typename T>
void Transformer<T>::backward(const Mat& dlogits, const Cache& cache) {
  const int batch = cache.batch, len = cache.len, n_hist = cache.n_hist;
  const int d = cfg_.d_model, heads = cfg_.n_heads, dh = d / heads;
  const int n_cond = cfg_.n_src() + cfg_.n_drv();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  require(dlogits.rows() == static_cast<Eigen::Index>(batch) * n_hist && dlogits.cols() == cfg_.k_img,
          ErrorCode::ShapeError, "dlogits shape mismatch");

  w_head_.grad.noalias() += cache.h_f.transpose() * dlogits;
  b_head_.grad.row(0) += dlogits.colwise().sum();
  const Mat dh_f = dlogits * w_head_.value.transpose();
  const Mat dsel = layernorm_backward(dh_f, cache.xhat_f, cache.rstd_f, lnf_g_, lnf_b_);

  Mat dx = Mat::Zero(static_cast<Eigen::Index>(batch) * len, d);
  for (int b = 0; b < batch; ++b)
    for (int m = 0; m < n_hist; ++m) dx.row(b * len + n_cond - 1 + m) += dsel.row(b * n_hist + m);

  for (size_t l = blocks_.size(); l-- > 0;) {
    Block& blk = blocks_[l];
    const BlockCache& c = cache.blocks[l];
    // MLP branch: x_out = x_mid + gelu(LN2(x_mid) W_fc + b_fc) W_fc2 + b_fc2
    blk.w_fc2.grad.noalias() += c.g.transpose() * dx;
    blk.b_fc2.grad.row(0) += dx.colwise().sum();
    Mat df = dx * blk.w_fc2.value.transpose();
    df = df.cwiseProduct(c.f.unaryExpr([](T v) { return gelu_grad(v); }));
    blk.w_fc.grad.noalias() += c.h2.transpose() * df;
    blk.b_fc.grad.row(0) += df.colwise().sum();
    const Mat dh2 = df * blk.w_fc.value.transpose();
    Mat dmid = dx + layernorm_backward(dh2, c.xhat2, c.rstd2, blk.ln2_g, blk.ln2_b);

    // Attention branch: x_mid = x_in + attn W_proj + b_proj
    blk.w_proj.grad.noalias() += c.attn.transpose() * dmid;
    blk.b_proj.grad.row(0) += dmid.colwise().sum();
    const Mat dattn = dmid * blk.w_proj.value.transpose();
    Mat dqkv = Mat::Zero(c.qkv.rows(), c.qkv.cols());
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(b * len, h * dh, len, dh);
        const auto k = c.qkv.block(b * len, d + h * dh, len, dh);
        const auto v = c.qkv.block(b * len, 2 * d + h * dh, len, dh);
        const Mat& p = c.probs[static_cast<size_t>(b * heads + h)];
        const auto dout = dattn.block(b * len, h * dh, len, dh);
        const Mat dp = dout * v.transpose();
        dqkv.block(b * len, 2 * d + h * dh, len, dh).noalias() = p.transpose() * dout;
        Mat ds = p.cwiseProduct(dp);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = ds.rowwise().sum();
        ds -= p.cwiseProduct(rs.replicate(1, len));
        ds *= scale;
        dqkv.block(b * len, h * dh, len, dh).noalias() = ds * k;
        dqkv.block(b * len, d + h * dh, len, dh).noalias() = ds.transpose() * q;
      }
    blk.w_qkv.grad.noalias() += c.h1.transpose() * dqkv;
    blk.b_qkv.grad.row(0) += dqkv.colwise().sum();
    const Mat dh1 = dqkv * blk.w_qkv.value.transpose();
    dx = dmid + layernorm_backward(dh1, c.xhat1, c.rstd1, blk.ln1_g, blk.ln1_b);
  }

  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < len; ++t) embed_backward(cache.seqs[static_cast<size_t>(b)], t, dx.row(b * len + t).data());
}

template <typename T>
typename Transformer<T>::KvState Transformer<T>::new_state() const {
  KvState s;
  for (size_t l = 0; l < blocks_.size(); ++l) {
    s.k.emplace_back(cfg_.max_len(), cfg_.d_model);
    s.v.emplace_back(cfg_.max_len(), cfg_.d_model);
  }
  return s;
}

template <typename T>
std::optional<std::vector<T>> Transformer<T>::step(KvState& state, const TokenSequence& seq, bool want_logits) const {
  const int t = state.len;
  require(t < cfg_.max_len(), ErrorCode::SequenceTooLong, "incremental decoding past the maximum length");
  require(t < static_cast<int>(seq.size()), ErrorCode::ShapeError, "sequence shorter than the decoding state");
  const int d = cfg_.d_model, heads = cfg_.n_heads, dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat x(1, d);
  embed_row(seq, t, x.data());
  Mat xhat, h, qkv, attn(1, d), f;
  std::vector<T> rstd;
  std::vector<T> p(static_cast<size_t>(t + 1));
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const Block& blk = blocks_[l];
    layernorm_forward(x, blk.ln1_g, blk.ln1_b, xhat, rstd, h);
    qkv.noalias() = h * blk.w_qkv.value;
    qkv += blk.b_qkv.value;
    state.k[l].row(t) = qkv.block(0, d, 1, d);
    state.v[l].row(t) = qkv.block(0, 2 * d, 1, d);
    for (int hd = 0; hd < heads; ++hd) {
      const auto q = qkv.block(0, hd * dh, 1, dh);
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j <= t; ++j) {
        p[static_cast<size_t>(j)] = q.cwiseProduct(state.k[l].block(j, hd * dh, 1, dh)).sum() * scale;
        mx = std::max(mx, p[static_cast<size_t>(j)]);
      }
      T sum = 0;
      for (int j = 0; j <= t; ++j) {
        p[static_cast<size_t>(j)] = std::exp(p[static_cast<size_t>(j)] - mx);
        sum += p[static_cast<size_t>(j)];
      }
      auto out = attn.block(0, hd * dh, 1, dh);
      out.setZero();
      for (int j = 0; j <= t; ++j) out += (p[static_cast<size_t>(j)] / sum) * state.v[l].block(j, hd * dh, 1, dh);
    }
    Mat mid = attn * blk.w_proj.value + blk.b_proj.value + x;
    layernorm_forward(mid, blk.ln2_g, blk.ln2_b, xhat, rstd, h);
    f.noalias() = h * blk.w_fc.value;
    f += blk.b_fc.value;
    f = f.unaryExpr([](T v) { return gelu(v); });
    x = f * blk.w_fc2.value + blk.b_fc2.value + mid;
  }
  state.len = t + 1;
  if (!want_logits) return std::nullopt;
  layernorm_forward(x, lnf_g_, lnf_b_, xhat, rstd, h);
  const Mat logits = h * w_head_.value + b_head_.value;
  return std::vector<T>(logits.data(), logits.data() + logits.size());
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace e2eve::artist
