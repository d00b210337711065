#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "binalign/corpus.hpp"
#include "binalign/rng.hpp"

namespace binalign {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

enum class Direction { kForwardXtoY, kReverseYtoX };

inline const char* direction_name(Direction d) {
  return d == Direction::kForwardXtoY ? "forward" : "reverse";
}

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int ffn_dim = 128;
  int max_len = 256;
  int vocab_size = 0;
  double dropout_rate = 0.0;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || ffn_dim <= 0 ||
        vocab_size <= 0) {
      throw std::invalid_argument("model config: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
    if (max_len < 8) {
      throw std::invalid_argument("model config: max_len must be >= 8");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw std::invalid_argument("model config: dropout_rate must be in [0, 1)");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class S>
struct LayerParams {
  Mat<S> wq, wk, wv, wo;  // [d, d], no biases
  Mat<S> w1;              // [d, ffn]
  Vec<S> b1;              // [ffn]
  Mat<S> w2;              // [ffn, d]
  Vec<S> b2;              // [d]
  Vec<S> ln1_scale, ln1_offset;  // [d]
  Vec<S> ln2_scale, ln2_offset;  // [d]
};

// All tensors of the toy cross-encoder. `pos_enc` is the sinusoidal position
// table: it participates in the forward pass and receives a gradient, but the
// optimizer never updates it.
template <class S>
struct Parameters {
  Mat<S> tok_embed;  // [vocab, d]
  Mat<S> seg_embed;  // [2, d]
  Mat<S> pos_enc;    // [max_len, d]
  std::vector<LayerParams<S>> layers;
  Vec<S> w_head;  // [d]
  S b_head{0};
};

// Flat view over every tensor, in declaration order. Serialization, the
// optimizer and the gradient checker all walk this list.
template <class S>
struct BlockRef {
  std::string name;
  S* data = nullptr;
  Index size = 0;
  bool learned = true;
};

template <class S>
std::vector<BlockRef<S>> param_blocks(Parameters<S>& p) {
  std::vector<BlockRef<S>> blocks;
  auto add = [&](std::string name, auto& m, bool learned = true) {
    blocks.push_back({std::move(name), m.data(), m.size(), learned});
  };
  add("tok_embed", p.tok_embed);
  add("seg_embed", p.seg_embed);
  add("pos_enc", p.pos_enc, /*learned=*/false);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams<S>& lp = p.layers[l];
    add(pre + "wq", lp.wq);
    add(pre + "wk", lp.wk);
    add(pre + "wv", lp.wv);
    add(pre + "wo", lp.wo);
    add(pre + "w1", lp.w1);
    add(pre + "b1", lp.b1);
    add(pre + "w2", lp.w2);
    add(pre + "b2", lp.b2);
    add(pre + "ln1_scale", lp.ln1_scale);
    add(pre + "ln1_offset", lp.ln1_offset);
    add(pre + "ln2_scale", lp.ln2_scale);
    add(pre + "ln2_offset", lp.ln2_offset);
  }
  add("w_head", p.w_head);
  blocks.push_back({"b_head", &p.b_head, 1, true});
  return blocks;
}

template <class S>
std::vector<BlockRef<const S>> param_blocks(const Parameters<S>& p) {
  auto mut = param_blocks(const_cast<Parameters<S>&>(p));
  std::vector<BlockRef<const S>> blocks;
  blocks.reserve(mut.size());
  for (auto& b : mut) blocks.push_back({std::move(b.name), b.data, b.size, b.learned});
  return blocks;
}

template <class S>
Index param_count(const Parameters<S>& p) {
  Index n = 0;
  for (const auto& b : param_blocks(p)) n += b.size;
  return n;
}

// Sinusoidal position table, computed in double and cast.
template <class S>
Mat<S> sinusoidal_positions(int max_len, int d_model) {
  Mat<S> pe(max_len, d_model);
  for (int t = 0; t < max_len; ++t) {
    for (int f = 0; f < d_model; ++f) {
      const double exponent = static_cast<double>(2 * (f / 2)) / d_model;
      const double angle = t / std::pow(10000.0, exponent);
      pe(t, f) = static_cast<S>(f % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <class S>
Parameters<S> make_zero_params(const ModelConfig& cfg) {
  cfg.validate();
  Parameters<S> p;
  p.tok_embed = Mat<S>::Zero(cfg.vocab_size, cfg.d_model);
  p.seg_embed = Mat<S>::Zero(2, cfg.d_model);
  p.pos_enc = Mat<S>::Zero(cfg.max_len, cfg.d_model);
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& lp : p.layers) {
    lp.wq = Mat<S>::Zero(cfg.d_model, cfg.d_model);
    lp.wk = Mat<S>::Zero(cfg.d_model, cfg.d_model);
    lp.wv = Mat<S>::Zero(cfg.d_model, cfg.d_model);
    lp.wo = Mat<S>::Zero(cfg.d_model, cfg.d_model);
    lp.w1 = Mat<S>::Zero(cfg.d_model, cfg.ffn_dim);
    lp.b1 = Vec<S>::Zero(cfg.ffn_dim);
    lp.w2 = Mat<S>::Zero(cfg.ffn_dim, cfg.d_model);
    lp.b2 = Vec<S>::Zero(cfg.d_model);
    lp.ln1_scale = Vec<S>::Zero(cfg.d_model);
    lp.ln1_offset = Vec<S>::Zero(cfg.d_model);
    lp.ln2_scale = Vec<S>::Zero(cfg.d_model);
    lp.ln2_offset = Vec<S>::Zero(cfg.d_model);
  }
  p.w_head = Vec<S>::Zero(cfg.d_model);
  p.b_head = S(0);
  return p;
}

namespace detail {

template <class S>
void fill_uniform(Mat<S>& m, Rng& rng, double limit) {
  for (Index k = 0; k < m.size(); ++k) {
    m.data()[k] = static_cast<S>(rng.symmetric(limit));
  }
}

template <class S>
void fill_uniform(Vec<S>& v, Rng& rng, double limit) {
  for (Index k = 0; k < v.size(); ++k) {
    v.data()[k] = static_cast<S>(rng.symmetric(limit));
  }
}

inline double xavier_limit(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace detail

// Scaled-uniform init for weights, zeros for biases and layer-norm offsets,
// ones for layer-norm scales. Deterministic in (cfg, seed).
template <class S>
Parameters<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Parameters<S> p = make_zero_params<S>(cfg);
  Rng rng(seed);
  detail::fill_uniform(p.tok_embed, rng,
                       detail::xavier_limit(cfg.vocab_size, cfg.d_model));
  detail::fill_uniform(p.seg_embed, rng, detail::xavier_limit(2, cfg.d_model));
  p.pos_enc = sinusoidal_positions<S>(cfg.max_len, cfg.d_model);
  const double lim_attn = detail::xavier_limit(cfg.d_model, cfg.d_model);
  const double lim_w1 = detail::xavier_limit(cfg.d_model, cfg.ffn_dim);
  const double lim_w2 = detail::xavier_limit(cfg.ffn_dim, cfg.d_model);
  for (auto& lp : p.layers) {
    detail::fill_uniform(lp.wq, rng, lim_attn);
    detail::fill_uniform(lp.wk, rng, lim_attn);
    detail::fill_uniform(lp.wv, rng, lim_attn);
    detail::fill_uniform(lp.wo, rng, lim_attn);
    detail::fill_uniform(lp.w1, rng, lim_w1);
    detail::fill_uniform(lp.w2, rng, lim_w2);
    lp.ln1_scale.setOnes();
    lp.ln2_scale.setOnes();
  }
  detail::fill_uniform(p.w_head, rng, detail::xavier_limit(cfg.d_model, 1));
  return p;
}

template <class To, class From>
Parameters<To> cast_params(const Parameters<From>& p) {
  Parameters<To> out;
  out.tok_embed = p.tok_embed.template cast<To>();
  out.seg_embed = p.seg_embed.template cast<To>();
  out.pos_enc = p.pos_enc.template cast<To>();
  out.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& a = p.layers[l];
    auto& b = out.layers[l];
    b.wq = a.wq.template cast<To>();
    b.wk = a.wk.template cast<To>();
    b.wv = a.wv.template cast<To>();
    b.wo = a.wo.template cast<To>();
    b.w1 = a.w1.template cast<To>();
    b.b1 = a.b1.template cast<To>();
    b.w2 = a.w2.template cast<To>();
    b.b2 = a.b2.template cast<To>();
    b.ln1_scale = a.ln1_scale.template cast<To>();
    b.ln1_offset = a.ln1_offset.template cast<To>();
    b.ln2_scale = a.ln2_scale.template cast<To>();
    b.ln2_offset = a.ln2_offset.template cast<To>();
  }
  out.w_head = p.w_head.template cast<To>();
  out.b_head = static_cast<To>(p.b_head);
  return out;
}

// --- model input -------------------------------------------------------------

// One cross-encoded sequence: [CLS] marked-side [SEP] scored-side [SEP].
// Segment 0 covers everything through the first SEP, segment 1 the rest.
struct EncodedInput {
  std::vector<int> ids;
  std::vector<int> segments;
  std::vector<int> target_positions;  // positions of scored-side tokens

  int length() const { return static_cast<int>(ids.size()); }
  int n_targets() const { return static_cast<int>(target_positions.size()); }
  void validate(const ModelConfig& cfg) const;
};

// Inserts MARK_OPEN before the word's first token and MARK_CLOSE after its
// last; throws on an out-of-range word index.
std::vector<int> mark_span(const std::vector<int>& token_ids, int word,
                           const WordTokenMap& map);

// A sentence pair with both sides tokenized once.
struct TokenizedPair {
  SubwordTokenization src_tok, tgt_tok;
  WordTokenMap src_map, tgt_map;
};

TokenizedPair tokenize_pair(const SentencePair& pair,
                            const SubwordVocabulary& vocab);

// Cross-encoder input for one (direction, marked word). The marked side is
// the direction's source; logits are produced for the other side's tokens.
EncodedInput build_encoded_input(const TokenizedPair& tp, Direction dir,
                                 int marked_word, const ModelConfig& cfg);

// --- numerics ----------------------------------------------------------------

template <class S>
S stable_sigmoid(S z) {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

template <class S>
S softplus(S x) {
  return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865475)));
}

template <class S>
S gelu_grad(S x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return S(0.5) * (S(1) + std::erf(x * S(0.7071067811865475))) +
         x * static_cast<S>(inv_sqrt_2pi) * std::exp(S(-0.5) * x * x);
}

// --- forward / backward --------------------------------------------------------

template <class S>
struct LayerTrace {
  Mat<S> h_in;
  Mat<S> xhat1, ln1_out;
  Vec<S> istd1;
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;  // per head [L, L]
  Mat<S> concat;
  Mat<S> h_mid;
  Mat<S> xhat2, ln2_out;
  Vec<S> istd2;
  Mat<S> ffn_pre, ffn_act;  // [L, ffn]
};

template <class S>
struct ForwardTrace {
  Mat<S> h0;
  std::vector<LayerTrace<S>> layers;
  Mat<S> h_final;
};

// Inverted-dropout masks (entries are 0 or 1/(1-rate)); drawn up front so
// multi-threaded batches stay deterministic.
template <class S>
struct DropoutMasks {
  Mat<S> embed;
  std::vector<Mat<S>> attn_out, ffn_out;
};

template <class S>
DropoutMasks<S> draw_dropout_masks(Index len, const ModelConfig& cfg, Rng& rng) {
  const S keep = static_cast<S>(1.0 - cfg.dropout_rate);
  auto draw = [&](Index rows, Index cols) {
    Mat<S> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
      m.data()[i] = rng.uniform() < cfg.dropout_rate ? S(0) : S(1) / keep;
    }
    return m;
  };
  DropoutMasks<S> masks;
  masks.embed = draw(len, cfg.d_model);
  masks.attn_out.reserve(static_cast<std::size_t>(cfg.n_layers));
  masks.ffn_out.reserve(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    masks.attn_out.push_back(draw(len, cfg.d_model));
    masks.ffn_out.push_back(draw(len, cfg.d_model));
  }
  return masks;
}

namespace detail {

// Row-wise layer norm; returns the normalized-then-affine output and stores
// xhat and 1/std for the backward pass.
template <class S>
Mat<S> layer_norm(const Mat<S>& x, const Vec<S>& scale, const Vec<S>& offset,
                  Mat<S>& xhat, Vec<S>& istd) {
  constexpr S eps = S(1e-5);
  const Index d = x.cols();
  Vec<S> mu = x.rowwise().mean();
  Mat<S> centered = x.colwise() - mu;
  Vec<S> var = centered.array().square().rowwise().mean();
  istd = (var.array() + eps).sqrt().inverse();
  xhat = centered.array().colwise() * istd.array();
  Mat<S> y = xhat.array().rowwise() * scale.transpose().array();
  y.array().rowwise() += offset.transpose().array();
  (void)d;
  return y;
}

// dy -> dx for layer_norm; accumulates dscale/doffset.
template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat,
                           const Vec<S>& istd, const Vec<S>& scale,
                           Vec<S>& dscale, Vec<S>& doffset) {
  dscale += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
  doffset += dy.colwise().sum().transpose();
  Mat<S> dxhat = dy.array().rowwise() * scale.transpose().array();
  Vec<S> m1 = dxhat.rowwise().mean();
  Vec<S> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Mat<S> dx = dxhat;
  dx.colwise() -= m1;
  dx.array() -= xhat.array().colwise() * m2.array();
  dx.array().colwise() *= istd.array();
  return dx;
}

}  // namespace detail

// Runs the encoder over one (optionally PAD-extended) sequence. Positions
// whose id is PAD are masked out of attention as keys; they cannot influence
// any real position. Returns the final hidden states [L, d].
template <class S>
Mat<S> encode_hidden(const std::vector<int>& ids, const std::vector<int>& segs,
                     const Parameters<S>& p, const ModelConfig& cfg,
                     ForwardTrace<S>* trace = nullptr,
                     const DropoutMasks<S>* drop = nullptr) {
  const Index len = static_cast<Index>(ids.size());
  if (len > cfg.max_len) {
    throw std::runtime_error("sequence length " + std::to_string(len) +
                             " exceeds max_len " + std::to_string(cfg.max_len));
  }
  const Index d = cfg.d_model;
  const int heads = cfg.n_heads;
  const Index dh = d / heads;
  const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
  const S neg_inf = -std::numeric_limits<S>::infinity();

  Mat<S> h(len, d);
  for (Index t = 0; t < len; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= cfg.vocab_size) {
      throw std::runtime_error("token id " + std::to_string(id) +
                               " outside vocabulary of size " +
                               std::to_string(cfg.vocab_size));
    }
    h.row(t) = p.tok_embed.row(id) +
               p.seg_embed.row(segs[static_cast<std::size_t>(t)]) +
               p.pos_enc.row(t);
  }
  if (drop) h.array() *= drop->embed.array();
  if (trace) trace->h0 = h;

  std::vector<Index> masked;  // PAD key positions
  for (Index t = 0; t < len; ++t) {
    if (ids[static_cast<std::size_t>(t)] == SubwordVocabulary::kPad) {
      masked.push_back(t);
    }
  }

  if (trace) trace->layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParams<S>& lp = p.layers[l];
    LayerTrace<S> local;
    LayerTrace<S>& tr = trace ? trace->layers[l] : local;
    tr.h_in = h;

    Mat<S> x1 = detail::layer_norm(h, lp.ln1_scale, lp.ln1_offset, tr.xhat1,
                                   tr.istd1);
    tr.ln1_out = x1;
    tr.q = x1 * lp.wq;
    tr.k = x1 * lp.wk;
    tr.v = x1 * lp.wv;

    tr.concat.resize(len, d);
    tr.probs.assign(static_cast<std::size_t>(heads), Mat<S>());
    for (int hd = 0; hd < heads; ++hd) {
      auto qh = tr.q.middleCols(hd * dh, dh);
      auto kh = tr.k.middleCols(hd * dh, dh);
      auto vh = tr.v.middleCols(hd * dh, dh);
      Mat<S> scores = (qh * kh.transpose()) * inv_sqrt_dh;
      for (Index t : masked) scores.col(t).setConstant(neg_inf);
      Vec<S> rowmax = scores.rowwise().maxCoeff();
      Mat<S> e = (scores.colwise() - rowmax).array().exp();
      Vec<S> rowsum = e.rowwise().sum();
      tr.probs[static_cast<std::size_t>(hd)] =
          e.array().colwise() / rowsum.array();
      tr.concat.middleCols(hd * dh, dh).noalias() =
          tr.probs[static_cast<std::size_t>(hd)] * vh;
    }
    Mat<S> attn_out = tr.concat * lp.wo;
    if (drop) attn_out.array() *= drop->attn_out[l].array();
    tr.h_mid = h + attn_out;

    Mat<S> x2 = detail::layer_norm(tr.h_mid, lp.ln2_scale, lp.ln2_offset,
                                   tr.xhat2, tr.istd2);
    tr.ln2_out = x2;
    tr.ffn_pre = x2 * lp.w1;
    tr.ffn_pre.array().rowwise() += lp.b1.transpose().array();
    tr.ffn_act = tr.ffn_pre.unaryExpr([](S u) { return gelu(u); });
    Mat<S> f = tr.ffn_act * lp.w2;
    f.array().rowwise() += lp.b2.transpose().array();
    if (drop) f.array() *= drop->ffn_out[l].array();
    h = tr.h_mid + f;
  }
  if (trace) trace->h_final = h;
  return h;
}

// Backpropagates dh (gradient at the final hidden states) through the
// encoder, accumulating into g. Must be given the trace of the matching
// forward call.
template <class S>
void encode_backward(const ForwardTrace<S>& trace, const std::vector<int>& ids,
                     const std::vector<int>& segs, Mat<S> dh,
                     const Parameters<S>& p, const ModelConfig& cfg,
                     Parameters<S>& g, const DropoutMasks<S>* drop = nullptr) {
  const Index len = static_cast<Index>(ids.size());
  const Index d = cfg.d_model;
  const int heads = cfg.n_heads;
  const Index dh_cols = d / heads;
  const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh_cols));

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const LayerParams<S>& lp = p.layers[li];
    LayerParams<S>& gl = g.layers[li];
    const LayerTrace<S>& tr = trace.layers[li];

    // FFN block: h_out = h_mid + f
    Mat<S> df = dh;
    if (drop) df.array() *= drop->ffn_out[li].array();
    Mat<S> dh_mid = dh;
    gl.w2.noalias() += tr.ffn_act.transpose() * df;
    gl.b2 += df.colwise().sum().transpose();
    Mat<S> dact = df * lp.w2.transpose();
    Mat<S> du =
        dact.array() * tr.ffn_pre.unaryExpr([](S u) { return gelu_grad(u); }).array();
    gl.w1.noalias() += tr.ln2_out.transpose() * du;
    gl.b1 += du.colwise().sum().transpose();
    Mat<S> dx2 = du * lp.w1.transpose();
    dh_mid += detail::layer_norm_backward(dx2, tr.xhat2, tr.istd2, lp.ln2_scale,
                                          gl.ln2_scale, gl.ln2_offset);

    // Attention block: h_mid = h_in + attn_out
    Mat<S> dao = dh_mid;
    if (drop) dao.array() *= drop->attn_out[li].array();
    Mat<S> dh_in = dh_mid;
    gl.wo.noalias() += tr.concat.transpose() * dao;
    Mat<S> dconcat = dao * lp.wo.transpose();

    Mat<S> dq(len, d), dk(len, d), dv(len, d);
    for (int hd = 0; hd < heads; ++hd) {
      const Mat<S>& probs = tr.probs[static_cast<std::size_t>(hd)];
      auto kh = tr.k.middleCols(hd * dh_cols, dh_cols);
      auto qh = tr.q.middleCols(hd * dh_cols, dh_cols);
      auto vh = tr.v.middleCols(hd * dh_cols, dh_cols);
      auto dch = dconcat.middleCols(hd * dh_cols, dh_cols);

      Mat<S> dprobs = dch * vh.transpose();
      dv.middleCols(hd * dh_cols, dh_cols).noalias() =
          probs.transpose() * dch;
      Vec<S> rowdot = (dprobs.array() * probs.array()).rowwise().sum();
      Mat<S> dscores =
          probs.array() * (dprobs.colwise() - rowdot).array() * inv_sqrt_dh;
      dq.middleCols(hd * dh_cols, dh_cols).noalias() = dscores * kh;
      dk.middleCols(hd * dh_cols, dh_cols).noalias() =
          dscores.transpose() * qh;
    }
    gl.wq.noalias() += tr.ln1_out.transpose() * dq;
    gl.wk.noalias() += tr.ln1_out.transpose() * dk;
    gl.wv.noalias() += tr.ln1_out.transpose() * dv;
    Mat<S> dx1 = dq * lp.wq.transpose();
    dx1.noalias() += dk * lp.wk.transpose();
    dx1.noalias() += dv * lp.wv.transpose();
    dh_in += detail::layer_norm_backward(dx1, tr.xhat1, tr.istd1, lp.ln1_scale,
                                         gl.ln1_scale, gl.ln1_offset);
    dh = std::move(dh_in);
  }

  if (drop) dh.array() *= drop->embed.array();
  for (Index t = 0; t < len; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id == SubwordVocabulary::kPad) continue;
    g.tok_embed.row(id) += dh.row(t);
    g.seg_embed.row(segs[static_cast<std::size_t>(t)]) += dh.row(t);
    g.pos_enc.row(t) += dh.row(t);
  }
}

// Logits over the scored-side token positions, one per target token.
template <class S>
Vec<S> forward(const EncodedInput& in, const Parameters<S>& p,
               const ModelConfig& cfg) {
  in.validate(cfg);
  Mat<S> h = encode_hidden(in.ids, in.segments, p, cfg);
  Vec<S> z(in.n_targets());
  for (int k = 0; k < in.n_targets(); ++k) {
    z(k) = h.row(in.target_positions[static_cast<std::size_t>(k)]).dot(
               p.w_head.transpose()) +
           p.b_head;
  }
  return z;
}

template <class S>
struct LossGrad {
  S loss{0};
  Parameters<S> grads;
};

namespace detail {

constexpr double kLogClamp = 30.0;  // -log clamp for BCE terms

// Per-token BCE with the clamp applied; also writes dloss/dz (unscaled).
template <class S>
S bce_term(S z, S label, S& dz) {
  const S sp_neg = softplus(-z);  // -log sigmoid(z)
  const S sp_pos = softplus(z);   // -log(1 - sigmoid(z))
  const S clamp = S(kLogClamp);
  const S sig = stable_sigmoid(z);
  S loss = S(0);
  dz = S(0);
  if (label > S(0)) {
    loss += label * std::min(sp_neg, clamp);
    if (sp_neg < clamp) dz += label * (sig - S(1));
  }
  if (label < S(1)) {
    loss += (S(1) - label) * std::min(sp_pos, clamp);
    if (sp_pos < clamp) dz += (S(1) - label) * sig;
  }
  return loss;
}

}  // namespace detail

// Mean binary cross-entropy over every (item, target token) in the batch and
// its exact analytic gradient. Items are padded to the longest sequence in
// the batch; PAD positions are masked out of attention and never enter the
// loss. When n_threads > 1, per-item work runs in parallel and partial
// results are reduced in item order, so results are independent of the
// thread count.
template <class S>
LossGrad<S> loss_and_grad(const std::vector<const EncodedInput*>& inputs,
                          const std::vector<const Vec<S>*>& labels,
                          const Parameters<S>& p, const ModelConfig& cfg,
                          int n_threads = 1, Rng* dropout_rng = nullptr);

namespace detail {

template <class S>
struct ItemResult {
  S loss_sum{0};
  Parameters<S> grads;
};

template <class S>
void item_loss_grad(const std::vector<int>& ids, const std::vector<int>& segs,
                    const std::vector<int>& target_positions,
                    const Vec<S>& label, const Parameters<S>& p,
                    const ModelConfig& cfg, const DropoutMasks<S>* drop,
                    ItemResult<S>& out) {
  ForwardTrace<S> trace;
  Mat<S> h = encode_hidden(ids, segs, p, cfg, &trace, drop);
  out.grads = make_zero_params<S>(cfg);
  Mat<S> dh = Mat<S>::Zero(h.rows(), h.cols());
  for (Index k = 0; k < label.size(); ++k) {
    const Index pos = target_positions[static_cast<std::size_t>(k)];
    const S z = h.row(pos).dot(p.w_head.transpose()) + p.b_head;
    S dz;
    out.loss_sum += bce_term(z, label(k), dz);
    dh.row(pos) += dz * p.w_head.transpose();
    out.grads.w_head += dz * h.row(pos).transpose();
    out.grads.b_head += dz;
  }
  encode_backward(trace, ids, segs, std::move(dh), p, cfg, out.grads, drop);
}

}  // namespace detail

template <class S>
LossGrad<S> loss_and_grad(const std::vector<const EncodedInput*>& inputs,
                          const std::vector<const Vec<S>*>& labels,
                          const Parameters<S>& p, const ModelConfig& cfg,
                          int n_threads, Rng* dropout_rng) {
  if (inputs.empty() || inputs.size() != labels.size()) {
    throw std::invalid_argument("loss_and_grad: batch inputs and labels must "
                                "be non-empty and the same size");
  }
  const std::size_t n = inputs.size();
  std::size_t padded_len = 0;
  long long total_tokens = 0;
  for (std::size_t i = 0; i < n; ++i) {
    inputs[i]->validate(cfg);
    if (labels[i]->size() != inputs[i]->n_targets()) {
      throw std::invalid_argument(
          "loss_and_grad: label vector of item " + std::to_string(i) +
          " has size " + std::to_string(labels[i]->size()) + ", expected " +
          std::to_string(inputs[i]->n_targets()));
    }
    padded_len = std::max(padded_len, inputs[i]->ids.size());
    total_tokens += inputs[i]->n_targets();
  }

  std::vector<std::vector<int>> pad_ids(n), pad_segs(n);
  for (std::size_t i = 0; i < n; ++i) {
    pad_ids[i] = inputs[i]->ids;
    pad_ids[i].resize(padded_len, SubwordVocabulary::kPad);
    pad_segs[i] = inputs[i]->segments;
    pad_segs[i].resize(padded_len, 0);
  }

  const bool dropping = cfg.dropout_rate > 0.0 && dropout_rng != nullptr;
  std::vector<DropoutMasks<S>> masks;
  if (dropping) {
    masks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      masks.push_back(draw_dropout_masks<S>(static_cast<Index>(padded_len),
                                            cfg, *dropout_rng));
    }
  }

  std::vector<detail::ItemResult<S>> results(n);
  auto run_item = [&](std::size_t i) {
    detail::item_loss_grad(pad_ids[i], pad_segs[i],
                           inputs[i]->target_positions, *labels[i], p, cfg,
                           dropping ? &masks[i] : nullptr, results[i]);
  };
  const int workers =
      std::min<int>(std::max(1, n_threads), static_cast<int>(n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_item(i);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < n;
             i += static_cast<std::size_t>(workers)) {
          run_item(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  LossGrad<S> out;
  out.grads = make_zero_params<S>(cfg);
  auto acc = param_blocks(out.grads);
  S loss_sum = S(0);
  for (std::size_t i = 0; i < n; ++i) {
    loss_sum += results[i].loss_sum;
    auto gb = param_blocks(results[i].grads);
    for (std::size_t b = 0; b < acc.size(); ++b) {
      Eigen::Map<Vec<S>>(acc[b].data, acc[b].size) +=
          Eigen::Map<const Vec<S>>(gb[b].data, gb[b].size);
    }
  }
  const S scale = S(1) / static_cast<S>(total_tokens);
  out.loss = loss_sum * scale;
  for (auto& b : acc) {
    Eigen::Map<Vec<S>>(b.data, b.size) *= scale;
  }
  return out;
}

// --- optimizer ---------------------------------------------------------------

template <class S>
struct AdamState {
  Parameters<S> m, v;
  long long step = 0;

  static AdamState zeros(const ModelConfig& cfg) {
    AdamState st;
    st.m = make_zero_params<S>(cfg);
    st.v = make_zero_params<S>(cfg);
    return st;
  }
};

// Standard Adam with bias correction. The position table is fixed and
// skipped. Throws on non-finite gradients.
template <class S>
void adam_step(Parameters<S>& p, const Parameters<S>& g, AdamState<S>& st,
               S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8)) {
  auto pb = param_blocks(p);
  auto gb = param_blocks(g);
  auto mb = param_blocks(st.m);
  auto vb = param_blocks(st.v);
  st.step += 1;
  const S bc1 = S(1) - std::pow(beta1, static_cast<S>(st.step));
  const S bc2 = S(1) - std::pow(beta2, static_cast<S>(st.step));
  for (std::size_t b = 0; b < pb.size(); ++b) {
    for (Index k = 0; k < gb[b].size; ++k) {
      if (!std::isfinite(gb[b].data[k])) {
        throw std::runtime_error("non-finite gradient in block " + gb[b].name);
      }
    }
    if (!pb[b].learned) continue;
    for (Index k = 0; k < pb[b].size; ++k) {
      const S grad = gb[b].data[k];
      S& m = mb[b].data[k];
      S& v = vb[b].data[k];
      m = beta1 * m + (S(1) - beta1) * grad;
      v = beta2 * v + (S(1) - beta2) * grad * grad;
      const S mhat = m / bc1;
      const S vhat = v / bc2;
      pb[b].data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace binalign
