#pragma once

// SASRec-style causal multi-head self-attention encoder with hand-derived
// backward passes.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fame/error.hpp"
#include "fame/numerics.hpp"

namespace fame {

struct BackboneConfig {
  std::size_t items = 0;
  std::size_t d = 64;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t max_len = 50;
  double dropout = 0.2;
  double eps = kLayerNormEps;

  std::size_t head_dim() const noexcept { return heads == 0 ? 0 : d / heads; }

  void validate() const {
    if (items == 0) throw ParameterError("backbone needs a non-empty item catalog");
    if (d == 0 || heads == 0) throw ParameterError("d and heads must be positive");
    if (d % heads != 0) {
      throw ParameterError("d=" + std::to_string(d) + " is not divisible by heads=" +
                           std::to_string(heads));
    }
    if (layers == 0) throw ParameterError("backbone needs at least one layer");
    if (max_len == 0) throw ParameterError("max_len must be positive");
    if (!(dropout >= 0.0) || dropout >= 1.0) throw ParameterError("dropout must be in [0, 1)");
    if (!(eps > 0.0)) throw ParameterError("eps must be positive");
  }

  bool operator==(const BackboneConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Item embeddings: either a free table or, for raw text initialization, a
// frozen text matrix mapped to d by a trainable affine layer.

template <typename T>
struct ItemEmbedding {
  Param<T> table;
  Matrix<T> text;
  Param<T> proj_w;
  Param<T> proj_b;

  bool projected() const noexcept { return !text.empty(); }

  std::size_t count() const noexcept { return projected() ? text.rows() : table.rows(); }
  std::size_t dim() const noexcept { return projected() ? proj_w.cols() : table.cols(); }

  Matrix<T> materialize() const {
    if (!projected()) return table.value;
    Matrix<T> out = matmul(text, proj_w.value);
    add_row_broadcast(out, proj_b.value);
    return out;
  }

  void backward(const Matrix<T>& d_table) {
    if (!projected()) {
      add_inplace(table.grad, d_table);
      return;
    }
    add_matmul_at_b(proj_w.grad, text, d_table);
    add_column_sums(proj_b.grad, d_table);
  }

  std::vector<Param<T>*> params() {
    if (projected()) return {&proj_w, &proj_b};
    return {&table};
  }
};

template <typename T>
struct AttentionLayerParams {
  // Head h owns columns [h*d', (h+1)*d') of wq, wk and wv.
  Param<T> wq, wk, wv;
  Param<T> ln1_gain, ln1_bias;
  Param<T> w1, b1, w2, b2;
  Param<T> ln2_gain, ln2_bias;

  static AttentionLayerParams init(std::size_t d, Rng& rng) {
    AttentionLayerParams p;
    for (Param<T>* m : {&p.wq, &p.wk, &p.wv, &p.w1, &p.w2}) {
      *m = Param<T>(d, d);
      fill_xavier_uniform(m->value, rng);
    }
    p.b1 = Param<T>(1, d);
    p.b2 = Param<T>(1, d);
    p.ln1_gain = Param<T>(1, d, T(1));
    p.ln1_bias = Param<T>(1, d);
    p.ln2_gain = Param<T>(1, d, T(1));
    p.ln2_bias = Param<T>(1, d);
    return p;
  }

  std::vector<Param<T>*> params() {
    return {&wq, &wk, &wv, &ln1_gain, &ln1_bias, &w1, &b1, &w2, &b2, &ln2_gain, &ln2_bias};
  }
};

template <typename T>
struct BackboneParams {
  ItemEmbedding<T> items;
  Param<T> pos;
  std::vector<AttentionLayerParams<T>> layers;

  std::vector<Param<T>*> params() {
    auto out = items.params();
    out.push_back(&pos);
    for (auto& l : layers)
      for (auto* p : l.params()) out.push_back(p);
    return out;
  }
};

// Normal(0, 0.02^2) tables, Xavier-uniform projections, zero biases, unit gains.
template <typename T>
BackboneParams<T> init_backbone_params(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  BackboneParams<T> p;
  p.items.table = Param<T>(cfg.items, cfg.d);
  fill_normal(p.items.table.value, 0.02, rng);
  p.pos = Param<T>(cfg.max_len, cfg.d);
  fill_normal(p.pos.value, 0.02, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    p.layers.push_back(AttentionLayerParams<T>::init(cfg.d, rng));
  return p;
}

namespace detail {
template <typename T>
Matrix<T> maybe_dropout(Matrix<T> x, double p, Rng* rng, bool training, Matrix<T>* mask) {
  if (!training || p == 0.0) {
    if (mask) *mask = Matrix<T>();
    return x;
  }
  if (!rng) throw ParameterError("training-mode dropout needs an Rng");
  return dropout(std::move(x), p, *rng, true, mask);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Embedding lookup.

template <typename T>
struct EmbedCache {
  std::vector<std::size_t> items;
  Matrix<T> mask;
};

template <typename T>
Matrix<T> embed_sequence(std::span<const std::size_t> items, const Matrix<T>& table,
                         const Matrix<T>& pos, double p, Rng* rng, bool training,
                         EmbedCache<T>* cache) {
  if (items.size() > pos.rows()) {
    throw IndexError("sequence of length " + std::to_string(items.size()) +
                     " exceeds max_len " + std::to_string(pos.rows()));
  }
  Matrix<T> x(items.size(), table.cols());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i] >= table.rows()) {
      throw IndexError("item index " + std::to_string(items[i]) + " outside catalog of " +
                       std::to_string(table.rows()));
    }
    auto dst = x.row(i);
    auto src = table.row(items[i]);
    auto ps = pos.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] + ps[j];
  }
  Matrix<T> mask;
  x = detail::maybe_dropout(std::move(x), p, rng, training, &mask);
  if (cache) {
    cache->items.assign(items.begin(), items.end());
    cache->mask = std::move(mask);
  }
  return x;
}

template <typename T>
void embed_sequence_backward(const EmbedCache<T>& cache, Matrix<T> dx, Matrix<T>& d_table,
                             Matrix<T>& d_pos) {
  dx = dropout_backward(cache.mask, std::move(dx));
  for (std::size_t i = 0; i < cache.items.size(); ++i) {
    auto src = dx.row(i);
    auto t = d_table.row(cache.items[i]);
    auto p = d_pos.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) {
      t[j] += src[j];
      p[j] += src[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention for one head with a causal mask: row i only
// sees keys j <= i. `probs` receives the t x t weights (zero above the
// diagonal).

template <typename T>
Matrix<T> causal_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                           Matrix<T>* probs) {
  const std::size_t t = q.rows();
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  Matrix<T> a(t, t);
  for (std::size_t i = 0; i < t; ++i) {
    auto qi = q.row(i);
    for (std::size_t j = 0; j <= i; ++j) a(i, j) = dot<T>(qi, k.row(j)) * scale;
    softmax_inplace(a.row(i).first(i + 1));
  }
  Matrix<T> out = matmul(a, v);
  if (probs) *probs = std::move(a);
  return out;
}

template <typename T>
void causal_attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                               const Matrix<T>& probs, const Matrix<T>& d_out, Matrix<T>& dq,
                               Matrix<T>& dk, Matrix<T>& dv) {
  const std::size_t t = q.rows();
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  add_matmul_at_b(dv, probs, d_out);
  Matrix<T> da = matmul_a_bt(d_out, v);
  for (std::size_t i = 0; i < t; ++i) {
    softmax_backward_inplace<T>(probs.row(i).first(i + 1), da.row(i).first(i + 1));
    for (std::size_t j = i + 1; j < t; ++j) da(i, j) = T(0);
  }
  scale_inplace(da, scale);
  add_matmul(dq, da, k);
  add_matmul_at_b(dk, da, q);
}

// ---------------------------------------------------------------------------
// One transformer block:
//   A = concat_h CausalAttention(X Wq_h, X Wk_h, X Wv_h)
//   Y = LN1(X + Dropout(A))
//   Z = LN2(Y + Dropout(ReLU(Y W1 + b1) W2 + b2))

template <typename T>
struct AttentionCache {
  Matrix<T> x, q, k, v;
  std::vector<Matrix<T>> probs;
  Matrix<T> attn;  // concatenated head outputs before dropout
  Matrix<T> attn_mask;
  LayerNormCache<T> ln1;
  Matrix<T> y;
  Matrix<T> hidden_pre;
  Matrix<T> hidden;
  Matrix<T> ffn_mask;
  LayerNormCache<T> ln2;
};

template <typename T>
Matrix<T> attention_layer_forward(const Matrix<T>& x, const AttentionLayerParams<T>& p,
                                  std::size_t heads, double dropout_p, T eps, Rng* rng,
                                  bool training, AttentionCache<T>* cache) {
  const std::size_t d = x.cols();
  if (p.wq.rows() != d) throw DimensionError("attention layer width mismatch");
  if (heads == 0 || d % heads != 0) throw DimensionError("heads must divide d");
  const std::size_t dh = d / heads;
  Matrix<T> q = matmul(x, p.wq.value);
  Matrix<T> k = matmul(x, p.wk.value);
  Matrix<T> v = matmul(x, p.wv.value);
  Matrix<T> attn(x.rows(), d);
  std::vector<Matrix<T>> probs(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix<T> oh = causal_attention(column_block(q, h * dh, dh), column_block(k, h * dh, dh),
                                    column_block(v, h * dh, dh), &probs[h]);
    set_column_block(attn, h * dh, oh);
  }
  Matrix<T> attn_mask;
  Matrix<T> s1 = detail::maybe_dropout(attn, dropout_p, rng, training, &attn_mask);
  add_inplace(s1, x);
  LayerNormCache<T> ln1;
  Matrix<T> y = layer_norm_rows(s1, p.ln1_gain.value, p.ln1_bias.value, eps, &ln1);

  Matrix<T> hidden_pre = matmul(y, p.w1.value);
  add_row_broadcast(hidden_pre, p.b1.value);
  Matrix<T> hidden = relu(hidden_pre);
  Matrix<T> f = matmul(hidden, p.w2.value);
  add_row_broadcast(f, p.b2.value);
  Matrix<T> ffn_mask;
  Matrix<T> s2 = detail::maybe_dropout(std::move(f), dropout_p, rng, training, &ffn_mask);
  add_inplace(s2, y);
  LayerNormCache<T> ln2;
  Matrix<T> z = layer_norm_rows(s2, p.ln2_gain.value, p.ln2_bias.value, eps, &ln2);

  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->attn = std::move(attn);
    cache->attn_mask = std::move(attn_mask);
    cache->ln1 = std::move(ln1);
    cache->y = std::move(y);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->ffn_mask = std::move(ffn_mask);
    cache->ln2 = std::move(ln2);
  }
  return z;
}

// Accumulates parameter gradients into `p` and returns dL/dX.
template <typename T>
Matrix<T> attention_layer_backward(const AttentionCache<T>& c, AttentionLayerParams<T>& p,
                                   std::size_t heads, const Matrix<T>& dz) {
  const std::size_t d = c.x.cols();
  const std::size_t dh = d / heads;
  Matrix<T> ds2 = layer_norm_rows_backward(dz, c.ln2, p.ln2_gain.value, p.ln2_gain.grad,
                                           p.ln2_bias.grad);
  Matrix<T> dy = ds2;
  Matrix<T> df = dropout_backward(c.ffn_mask, std::move(ds2));
  add_matmul_at_b(p.w2.grad, c.hidden, df);
  add_column_sums(p.b2.grad, df);
  Matrix<T> dhidden = relu_backward(c.hidden_pre, matmul_a_bt(df, p.w2.value));
  add_matmul_at_b(p.w1.grad, c.y, dhidden);
  add_column_sums(p.b1.grad, dhidden);
  add_matmul_a_bt(dy, dhidden, p.w1.value);

  Matrix<T> ds1 = layer_norm_rows_backward(dy, c.ln1, p.ln1_gain.value, p.ln1_gain.grad,
                                           p.ln1_bias.grad);
  Matrix<T> dx = ds1;
  Matrix<T> dattn = dropout_backward(c.attn_mask, std::move(ds1));
  Matrix<T> dq(c.x.rows(), d), dk(c.x.rows(), d), dv(c.x.rows(), d);
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix<T> dqh(c.x.rows(), dh), dkh(c.x.rows(), dh), dvh(c.x.rows(), dh);
    causal_attention_backward(column_block(c.q, h * dh, dh), column_block(c.k, h * dh, dh),
                              column_block(c.v, h * dh, dh), c.probs[h],
                              column_block(dattn, h * dh, dh), dqh, dkh, dvh);
    set_column_block(dq, h * dh, dqh);
    set_column_block(dk, h * dh, dkh);
    set_column_block(dv, h * dh, dvh);
  }
  add_matmul_at_b(p.wq.grad, c.x, dq);
  add_matmul_at_b(p.wk.grad, c.x, dk);
  add_matmul_at_b(p.wv.grad, c.x, dv);
  add_matmul_a_bt(dx, dq, p.wq.value);
  add_matmul_a_bt(dx, dk, p.wk.value);
  add_matmul_a_bt(dx, dv, p.wv.value);
  return dx;
}

// ---------------------------------------------------------------------------
// Embedding + the first `layer_count` blocks. Shared by SASRec and the trunk
// of the FAME model.

template <typename T>
struct TrunkTrace {
  EmbedCache<T> embed;
  std::vector<AttentionCache<T>> layers;
};

template <typename T>
Matrix<T> trunk_forward(const Matrix<T>& table, const BackboneParams<T>& p,
                        const BackboneConfig& cfg, std::size_t layer_count,
                        std::span<const std::size_t> seq, Rng* rng, bool training,
                        TrunkTrace<T>* trace) {
  if (seq.empty()) throw InputError("cannot encode an empty sequence");
  if (layer_count > p.layers.size()) throw DimensionError("trunk has too few layers");
  if (trace) trace->layers.assign(layer_count, AttentionCache<T>{});
  Matrix<T> x = embed_sequence(seq, table, p.pos.value, cfg.dropout, rng, training,
                               trace ? &trace->embed : nullptr);
  for (std::size_t l = 0; l < layer_count; ++l) {
    x = attention_layer_forward(x, p.layers[l], cfg.heads, cfg.dropout, static_cast<T>(cfg.eps),
                                rng, training, trace ? &trace->layers[l] : nullptr);
  }
  return x;
}

template <typename T>
void trunk_backward(BackboneParams<T>& p, const BackboneConfig& cfg, const TrunkTrace<T>& trace,
                    Matrix<T> dx, Matrix<T>& d_table) {
  for (std::size_t l = trace.layers.size(); l-- > 0;) {
    dx = attention_layer_backward(trace.layers[l], p.layers[l], cfg.heads, dx);
  }
  embed_sequence_backward(trace.embed, std::move(dx), d_table, p.pos.grad);
}

// logit_v = x_v . F for every catalog item.
template <typename T>
std::vector<T> sasrec_scores(std::span<const T> representation, const Matrix<T>& item_table) {
  if (representation.size() != item_table.cols()) {
    throw DimensionError("representation width differs from item embedding width");
  }
  std::vector<T> out(item_table.rows());
  for (std::size_t v = 0; v < item_table.rows(); ++v)
    out[v] = dot<T>(item_table.row(v), representation);
  return out;
}

// ---------------------------------------------------------------------------
// SASRec: all layers, scores against the item table.
//
// Usage per optimisation step: prepare(); then forward/backward per sequence;
// then flush_gradients() pushes the accumulated item-table gradient into the
// embedding parameters.

template <typename T>
class SasRec {
 public:
  struct Trace {
    TrunkTrace<T> trunk;
    Matrix<T> output;
  };

  BackboneConfig config;
  BackboneParams<T> params;

  SasRec() = default;
  SasRec(BackboneConfig cfg, BackboneParams<T> p) : config(cfg), params(std::move(p)) {
    config.validate();
    prepare();
  }

  static SasRec create(const BackboneConfig& cfg, Rng& rng) {
    return SasRec(cfg, init_backbone_params<T>(cfg, rng));
  }

  void prepare() {
    table_ = params.items.materialize();
    table_grad_ = Matrix<T>(table_.rows(), table_.cols());
  }

  const Matrix<T>& item_table() const noexcept { return table_; }

  // All position outputs (t x d) after the final block.
  Matrix<T> encode(std::span<const std::size_t> seq, Rng* rng, bool training,
                   Trace* trace) const {
    Matrix<T> out = trunk_forward(table_, params, config, params.layers.size(), seq, rng,
                                  training, trace ? &trace->trunk : nullptr);
    if (trace) trace->output = out;
    return out;
  }

  // Logits for every position (t x |V|).
  Matrix<T> forward(std::span<const std::size_t> seq, Rng* rng, bool training,
                    Trace* trace) const {
    return matmul_a_bt(encode(seq, rng, training, trace), table_);
  }

  // Scores of the next item after the whole sequence (eval mode).
  std::vector<T> score_next(std::span<const std::size_t> seq) const {
    Matrix<T> out = encode(tail(seq), nullptr, false, nullptr);
    return sasrec_scores<T>(out.row(out.rows() - 1), table_);
  }

  void backward(const Trace& trace, const Matrix<T>& d_logits) {
    add_matmul_at_b(table_grad_, d_logits, trace.output);
    Matrix<T> d_out = matmul(d_logits, table_);
    trunk_backward(params, config, trace.trunk, std::move(d_out), table_grad_);
  }

  void flush_gradients() {
    params.items.backward(table_grad_);
    table_grad_.set_zero();
  }

  std::vector<Param<T>*> parameters() { return params.params(); }

  // Sequences longer than max_len are scored on their most recent items.
  std::span<const std::size_t> tail(std::span<const std::size_t> seq) const {
    return seq.size() > config.max_len ? seq.last(config.max_len) : seq;
  }

 private:
  Matrix<T> table_;
  Matrix<T> table_grad_;
};

}  // namespace fame
