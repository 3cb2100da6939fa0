#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "nn/param.hpp"

namespace e2eve::artist {

struct ArtistConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int src_h = 8, src_w = 8;
  int drv_h = 2, drv_w = 2;
  int out_h = 8, out_w = 8;
  int k_img = 256;
  int k_drv = 256;
  bool null_driver = true;  // learned embedding standing in for a removed driver

  int n_src() const { return src_h * src_w; }
  int n_drv() const { return drv_h * drv_w; }
  int n_out() const { return out_h * out_w; }
  int max_len() const { return n_src() + n_drv() + n_out(); }
  void validate() const;
};

nlohmann::json to_json(const ArtistConfig& c);
ArtistConfig artist_config_from_json(const nlohmann::json& j);

enum class Segment { Source = 0, Driver = 1, Output = 2 };

/// Where a flattened sequence element lives.
struct Position {
  Segment segment;
  int row;
  int col;
};

/// Canonical flattened sequence [source | driver | output prefix].
struct TokenSequence {
  std::vector<int> tokens;
  std::vector<Position> positions;
  bool null_driver = false;  // driver slots carry the null embedding; their token values are ignored
  int n_prefix = 0;

  size_t size() const { return tokens.size(); }
};

/// Errors: InvalidToken on vocab violation, SequenceTooLong when the prefix overflows the output segment.
/// `driver` empty (nullopt) builds a driver-free sequence (requires cfg.null_driver).
TokenSequence build_sequence(const ArtistConfig& cfg, std::span<const int> source,
                             std::optional<std::span<const int>> driver, std::span<const int> output_prefix);

/// GPT-2 style pre-LN causal transformer over the three-segment sequence.
template <typename T>
class Transformer {
 public:
  using Mat = nn::Mat<T>;

  struct BlockCache {
    Mat x_in, xhat1, h1, qkv, attn, x_mid, xhat2, h2, f, g;
    std::vector<T> rstd1, rstd2;
    std::vector<Mat> probs;  // per (sequence, head)
  };

  struct Cache {
    int batch = 0, len = 0, n_hist = 0;
    std::vector<TokenSequence> seqs;
    std::vector<BlockCache> blocks;
    Mat x_final_sel, xhat_f, h_f;
    std::vector<T> rstd_f;
  };

  /// Key/value cache for incremental decoding.
  struct KvState {
    std::vector<Mat> k, v;
    int len = 0;
  };

  Transformer(const ArtistConfig& cfg, std::uint64_t seed);

  const ArtistConfig& config() const { return cfg_; }

  /// Parallel (teacher-forced) pass. All sequences must share one prefix length P.
  /// Returns logits for output positions m = 0..min(P, n_out-1), rows ordered (sequence, m).
  Mat forward(const std::vector<TokenSequence>& seqs, Cache* cache) const;

  /// Accumulates parameter gradients from d(loss)/d(logits).
  void backward(const Mat& dlogits, const Cache& cache);

  KvState new_state() const;
  /// Appends element `t` of `seq` (t == state.len) and, if requested, returns the
  /// next-token logits computed at that position.
  std::optional<std::vector<T>> step(KvState& state, const TokenSequence& seq, bool want_logits) const;

  void collect(std::vector<nn::Param<T>*>& out);
  size_t parameter_count() const;

 private:
  struct Block {
    nn::Param<T> ln1_g, ln1_b, w_qkv, b_qkv, w_proj, b_proj, ln2_g, ln2_b, w_fc, b_fc, w_fc2, b_fc2;
  };

  void embed_row(const TokenSequence& seq, int t, T* out) const;
  void embed_backward(const TokenSequence& seq, int t, const T* grad);

  ArtistConfig cfg_;
  nn::Param<T> tok_src_, tok_drv_, tok_out_, null_drv_;
  nn::Param<T> pos_src_r_, pos_src_c_, pos_drv_r_, pos_drv_c_, pos_out_r_, pos_out_c_;
  std::vector<Block> blocks_;
  nn::Param<T> lnf_g_, lnf_b_, w_head_, b_head_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

/// Numerically stable softmax of a logit row.
template <typename T>
std::vector<double> softmax(std::span<const T> logits, double temperature = 1.0);

}  // namespace e2eve::artist
