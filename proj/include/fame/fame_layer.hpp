#pragma once

// Facet-aware final layer: per-head mixture-of-experts query attention, a
// router over expert outputs, a reduced-width FFN shared by every head,
// per-head item scoring through facet sub-embeddings, and a gate that fuses
// the per-head scores.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fame/backbone.hpp"
#include "fame/error.hpp"
#include "fame/numerics.hpp"

namespace fame {

struct FameConfig {
  std::size_t heads = 2;
  std::size_t experts = 2;
  std::size_t d = 64;
  double dropout = 0.2;
  double eps = kLayerNormEps;
  // Std-dev of the noise added to the pretrained query slice for each expert.
  double expert_noise = 0.01;
  // Draw experts from Xavier-uniform instead of warm-starting them.
  bool random_experts = false;
  // Initialise W_f^(h) as the selector of columns [h*d', (h+1)*d').
  bool slice_facet_proj = false;

  std::size_t head_dim() const noexcept { return heads == 0 ? 0 : d / heads; }

  void validate() const {
    if (heads == 0 || d == 0) throw ParameterError("heads and d must be positive");
    if (d % heads != 0) {
      throw ParameterError("d=" + std::to_string(d) + " is not divisible by heads=" +
                           std::to_string(heads));
    }
    if (experts == 0) throw ParameterError("experts must be >= 1");
    if (!(dropout >= 0.0) || dropout >= 1.0) throw ParameterError("dropout must be in [0, 1)");
    if (!(expert_noise >= 0.0)) throw ParameterError("expert noise must be non-negative");
  }

  bool operator==(const FameConfig&) const = default;
};

template <typename T>
struct FameHeadParams {
  std::vector<Param<T>> expert_query;  // N of d x d'
  Param<T> key;                        // d x d'
  Param<T> value;                      // d x d'
  Param<T> facet_proj;                 // W_f, d x d'
  Param<T> router;                     // (N*d') x N

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& q : expert_query) out.push_back(&q);
    for (Param<T>* p : {&key, &value, &facet_proj, &router}) out.push_back(p);
    return out;
  }
};

template <typename T>
struct FameParams {
  std::vector<FameHeadParams<T>> heads;
  // FFN' shared by all heads, plus its layer norm.
  Param<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Param<T> ln_gain, ln_bias;
  Param<T> gate_w;  // d x H
  Param<T> gate_b;  // 1 x H

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& h : heads)
      for (auto* p : h.params()) out.push_back(p);
    for (Param<T>* p : {&ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2, &ln_gain, &ln_bias, &gate_w, &gate_b})
      out.push_back(p);
    return out;
  }
};

// Fresh parameters for everything the final layer introduces. Key/value and
// expert matrices are random here; init_from_backbone overwrites them.
template <typename T>
FameParams<T> init_fame_params(const FameConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d, dh = cfg.head_dim(), n = cfg.experts;
  FameParams<T> p;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    FameHeadParams<T> hp;
    for (std::size_t e = 0; e < n; ++e) {
      hp.expert_query.emplace_back(d, dh);
      fill_xavier_uniform(hp.expert_query.back().value, rng);
    }
    hp.key = Param<T>(d, dh);
    fill_xavier_uniform(hp.key.value, rng);
    hp.value = Param<T>(d, dh);
    fill_xavier_uniform(hp.value.value, rng);
    hp.facet_proj = Param<T>(d, dh);
    if (cfg.slice_facet_proj) {
      for (std::size_t j = 0; j < dh; ++j) hp.facet_proj.value(h * dh + j, j) = T(1);
    } else {
      fill_xavier_uniform(hp.facet_proj.value, rng);
    }
    hp.router = Param<T>(n * dh, n);
    fill_xavier_uniform(hp.router.value, rng);
    p.heads.push_back(std::move(hp));
  }
  p.ffn_w1 = Param<T>(dh, dh);
  fill_xavier_uniform(p.ffn_w1.value, rng);
  p.ffn_b1 = Param<T>(1, dh);
  p.ffn_w2 = Param<T>(dh, dh);
  fill_xavier_uniform(p.ffn_w2.value, rng);
  p.ffn_b2 = Param<T>(1, dh);
  p.ln_gain = Param<T>(1, dh, T(1));
  p.ln_bias = Param<T>(1, dh);
  p.gate_w = Param<T>(d, cfg.heads);
  fill_xavier_uniform(p.gate_w.value, rng);
  p.gate_b = Param<T>(1, cfg.heads);
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks, each usable on its own.

// q_(n) = x^T W_Q(n) for every expert of one head.
template <typename T>
std::vector<std::vector<T>> expert_queries(std::span<const T> x, const FameHeadParams<T>& head) {
  std::vector<std::vector<T>> out;
  const Matrix<T> row = Matrix<T>::row_vector(x);
  for (const auto& q : head.expert_query) {
    Matrix<T> r = matmul(row, q.value);
    out.emplace_back(r.values().begin(), r.values().end());
  }
  return out;
}

template <typename T>
struct MoeHeadCache {
  Matrix<T> keys, values;
  std::vector<Matrix<T>> queries;
  std::vector<Matrix<T>> probs;
  std::vector<Matrix<T>> expert_out;  // f_(n), t x d'
};

// Per-expert causal attention for one head; returns f_(n) for n = 1..N.
template <typename T>
std::vector<Matrix<T>> moe_head_attention(const Matrix<T>& x, const FameHeadParams<T>& head,
                                          MoeHeadCache<T>* cache) {
  if (x.rows() == 0) throw InputError("MoE attention needs at least one position");
  Matrix<T> keys = matmul(x, head.key.value);
  Matrix<T> values = matmul(x, head.value.value);
  std::vector<Matrix<T>> outs, queries, probs;
  for (const auto& wq : head.expert_query) {
    Matrix<T> q = matmul(x, wq.value);
    Matrix<T> pr;
    outs.push_back(causal_attention(q, keys, values, &pr));
    queries.push_back(std::move(q));
    probs.push_back(std::move(pr));
  }
  if (cache) {
    cache->keys = std::move(keys);
    cache->values = std::move(values);
    cache->queries = std::move(queries);
    cache->probs = std::move(probs);
    cache->expert_out = outs;
  }
  return outs;
}

template <typename T>
struct Routed {
  Matrix<T> weights;  // beta, t x N
  Matrix<T> mixed;    // sum_n beta_n f_(n), t x d'
  Matrix<T> router_in;
};

// beta = softmax([f_(1) | ... | f_(N)] W_exp); output = sum_n beta_n f_(n).
template <typename T>
Routed<T> route_experts(const std::vector<Matrix<T>>& expert_out, const Matrix<T>& router) {
  const std::size_t n = expert_out.size();
  if (n == 0) throw DimensionError("route_experts needs at least one expert");
  const std::size_t t = expert_out[0].rows(), dh = expert_out[0].cols();
  if (router.rows() != n * dh || router.cols() != n) {
    throw DimensionError("router must be " + shape_str(n * dh, n));
  }
  Routed<T> r;
  r.router_in = Matrix<T>(t, n * dh);
  for (std::size_t e = 0; e < n; ++e) set_column_block(r.router_in, e * dh, expert_out[e]);
  r.weights = softmax_rows(matmul(r.router_in, router));
  r.mixed = Matrix<T>(t, dh);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t e = 0; e < n; ++e)
      for (std::size_t j = 0; j < dh; ++j) r.mixed(i, j) += r.weights(i, e) * expert_out[e](i, j);
  return r;
}

template <typename T>
struct HeadFfnCache {
  Matrix<T> input, hidden_pre, hidden, mask;
  LayerNormCache<T> ln;
};

// F = LayerNorm(f + Dropout(ReLU(f W1' + b1') W2' + b2')), shared parameters.
template <typename T>
Matrix<T> head_ffn(const Matrix<T>& f, const FameParams<T>& p, double dropout_p, T eps, Rng* rng,
                   bool training, HeadFfnCache<T>* cache) {
  Matrix<T> hidden_pre = matmul(f, p.ffn_w1.value);
  add_row_broadcast(hidden_pre, p.ffn_b1.value);
  Matrix<T> hidden = relu(hidden_pre);
  Matrix<T> out = matmul(hidden, p.ffn_w2.value);
  add_row_broadcast(out, p.ffn_b2.value);
  Matrix<T> mask;
  Matrix<T> s = detail::maybe_dropout(std::move(out), dropout_p, rng, training, &mask);
  add_inplace(s, f);
  LayerNormCache<T> ln;
  Matrix<T> y = layer_norm_rows(s, p.ln_gain.value, p.ln_bias.value, eps, &ln);
  if (cache) {
    cache->input = f;
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->mask = std::move(mask);
    cache->ln = std::move(ln);
  }
  return y;
}

// x_v^(h) = x_v^T W_f^(h) for every item.
template <typename T>
Matrix<T> facet_subembeddings(const Matrix<T>& item_table, const Matrix<T>& facet_proj) {
  return matmul(item_table, facet_proj);
}

// P^(h)_v = x_v^(h) . F^(h), one row per position.
template <typename T>
Matrix<T> head_scores(const Matrix<T>& head_repr, const Matrix<T>& subembeddings) {
  return matmul_a_bt(head_repr, subembeddings);
}

// g~ = softmax([F^(1) | ... | F^(H)] W_g + b_g), one row per position.
template <typename T>
Matrix<T> gate_heads(const std::vector<Matrix<T>>& head_repr, const Matrix<T>& gate_w,
                     const Matrix<T>& gate_b, Matrix<T>* gate_in = nullptr) {
  const std::size_t h = head_repr.size();
  if (h == 0) throw DimensionError("gate needs at least one head");
  const std::size_t t = head_repr[0].rows(), dh = head_repr[0].cols();
  if (gate_w.rows() != h * dh || gate_w.cols() != h) {
    throw DimensionError("gate weight must be " + shape_str(h * dh, h));
  }
  Matrix<T> in(t, h * dh);
  for (std::size_t k = 0; k < h; ++k) set_column_block(in, k * dh, head_repr[k]);
  Matrix<T> g = matmul(in, gate_w);
  add_row_broadcast(g, gate_b);
  if (gate_in) *gate_in = std::move(in);
  return softmax_rows(std::move(g));
}

// ---------------------------------------------------------------------------
// Full model: backbone trunk (first L-1 blocks) followed by the FAME layer.

template <typename T>
class FameModel {
 public:
  struct Trace {
    TrunkTrace<T> trunk;
    Matrix<T> x;
    std::vector<MoeHeadCache<T>> moe;
    std::vector<Routed<T>> routed;
    std::vector<HeadFfnCache<T>> ffn;
    std::vector<Matrix<T>> head_repr;    // F^(h), t x d'
    Matrix<T> gate_in;
    Matrix<T> gate;                      // t x H
    std::vector<Matrix<T>> head_logits;  // t x |V|
  };

  // Last-position breakdown used by reports.
  struct Breakdown {
    std::vector<T> fused;
    std::vector<std::vector<T>> per_head;
    std::vector<T> gate;
  };

  BackboneConfig backbone;  // layers counts the FAME layer
  FameConfig config;
  BackboneParams<T> trunk;  // holds backbone.layers - 1 blocks
  FameParams<T> fame;

  FameModel() = default;
  FameModel(BackboneConfig b, FameConfig f, BackboneParams<T> tr, FameParams<T> fp)
      : backbone(b), config(f), trunk(std::move(tr)), fame(std::move(fp)) {
    backbone.validate();
    config.validate();
    if (config.d != backbone.d) throw DimensionError("FAME d differs from backbone d");
    if (trunk.layers.size() + 1 != backbone.layers) {
      throw DimensionError("trunk must hold all but the final backbone layer");
    }
    prepare();
  }

  void prepare() {
    table_ = trunk.items.materialize();
    table_grad_ = Matrix<T>(table_.rows(), table_.cols());
    sub_.clear();
    sub_grad_.clear();
    for (const auto& h : fame.heads) {
      sub_.push_back(facet_subembeddings(table_, h.facet_proj.value));
      sub_grad_.emplace_back(table_.rows(), config.head_dim());
    }
  }

  const Matrix<T>& item_table() const noexcept { return table_; }
  const Matrix<T>& subembeddings(std::size_t h) const { return sub_.at(h); }

  // Fused logits for every position (t x |V|).
  Matrix<T> forward(std::span<const std::size_t> seq, Rng* rng, bool training,
                    Trace* trace) const {
    Trace local;
    Trace& tr = trace ? *trace : local;
    tr.x = trunk_forward(table_, trunk, backbone, trunk.layers.size(), seq, rng, training,
                         &tr.trunk);
    const std::size_t heads = config.heads;
    tr.moe.assign(heads, {});
    tr.routed.assign(heads, {});
    tr.ffn.assign(heads, {});
    tr.head_repr.assign(heads, {});
    tr.head_logits.assign(heads, {});
    const T eps = static_cast<T>(config.eps);
    for (std::size_t h = 0; h < heads; ++h) {
      auto outs = moe_head_attention(tr.x, fame.heads[h], &tr.moe[h]);
      tr.routed[h] = route_experts(outs, fame.heads[h].router.value);
      tr.head_repr[h] = head_ffn(tr.routed[h].mixed, fame, config.dropout, eps, rng, training,
                                 &tr.ffn[h]);
      tr.head_logits[h] = head_scores(tr.head_repr[h], sub_[h]);
    }
    tr.gate = gate_heads(tr.head_repr, fame.gate_w.value, fame.gate_b.value, &tr.gate_in);
    Matrix<T> fused(seq.size(), table_.rows());
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < fused.rows(); ++i) {
        const T g = tr.gate(i, h);
        auto src = tr.head_logits[h].row(i);
        auto dst = fused.row(i);
        for (std::size_t v = 0; v < dst.size(); ++v) dst[v] += g * src[v];
      }
    return fused;
  }

  std::vector<T> score_next(std::span<const std::size_t> seq) const {
    Matrix<T> logits = forward(tail(seq), nullptr, false, nullptr);
    auto last = logits.row(logits.rows() - 1);
    return {last.begin(), last.end()};
  }

  Breakdown breakdown_next(std::span<const std::size_t> seq) const {
    Trace tr;
    Matrix<T> logits = forward(tail(seq), nullptr, false, &tr);
    const std::size_t last = logits.rows() - 1;
    Breakdown b;
    b.fused.assign(logits.row(last).begin(), logits.row(last).end());
    for (const auto& hl : tr.head_logits) b.per_head.emplace_back(hl.row(last).begin(), hl.row(last).end());
    b.gate.assign(tr.gate.row(last).begin(), tr.gate.row(last).end());
    return b;
  }

  void backward(const Trace& tr, const Matrix<T>& d_fused) {
    const std::size_t heads = config.heads, dh = config.head_dim();
    const std::size_t t = d_fused.rows();
    // Gate fusion.
    Matrix<T> d_gate(t, heads);
    std::vector<Matrix<T>> d_repr(heads, Matrix<T>(t, dh));
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix<T> d_logits(t, d_fused.cols());
      for (std::size_t i = 0; i < t; ++i) {
        const T g = tr.gate(i, h);
        auto src = d_fused.row(i);
        auto hl = tr.head_logits[h].row(i);
        auto dst = d_logits.row(i);
        T acc = T(0);
        for (std::size_t v = 0; v < src.size(); ++v) {
          dst[v] = g * src[v];
          acc += src[v] * hl[v];
        }
        d_gate(i, h) = acc;
      }
      add_matmul(d_repr[h], d_logits, sub_[h]);
      add_matmul_at_b(sub_grad_[h], d_logits, tr.head_repr[h]);
    }
    Matrix<T> d_g = softmax_rows_backward(tr.gate, std::move(d_gate));
    add_matmul_at_b(fame.gate_w.grad, tr.gate_in, d_g);
    add_column_sums(fame.gate_b.grad, d_g);
    Matrix<T> d_gate_in = matmul_a_bt(d_g, fame.gate_w.value);
    for (std::size_t h = 0; h < heads; ++h) add_inplace(d_repr[h], column_block(d_gate_in, h * dh, dh));

    Matrix<T> dx(tr.x.rows(), tr.x.cols());
    for (std::size_t h = 0; h < heads; ++h) {
      auto& hp = fame.heads[h];
      const auto& fc = tr.ffn[h];
      // Shared FFN'.
      Matrix<T> ds = layer_norm_rows_backward(d_repr[h], fc.ln, fame.ln_gain.value,
                                              fame.ln_gain.grad, fame.ln_bias.grad);
      Matrix<T> d_mixed = ds;
      Matrix<T> df = dropout_backward(fc.mask, std::move(ds));
      add_matmul_at_b(fame.ffn_w2.grad, fc.hidden, df);
      add_column_sums(fame.ffn_b2.grad, df);
      Matrix<T> d_hidden = relu_backward(fc.hidden_pre, matmul_a_bt(df, fame.ffn_w2.value));
      add_matmul_at_b(fame.ffn_w1.grad, fc.input, d_hidden);
      add_column_sums(fame.ffn_b1.grad, d_hidden);
      add_matmul_a_bt(d_mixed, d_hidden, fame.ffn_w1.value);

      // Router.
      const auto& rt = tr.routed[h];
      const auto& outs = tr.moe[h].expert_out;
      const std::size_t n = outs.size();
      std::vector<Matrix<T>> d_out(n, Matrix<T>(t, dh));
      Matrix<T> d_beta(t, n);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t e = 0; e < n; ++e) {
          const T b = rt.weights(i, e);
          T acc = T(0);
          for (std::size_t j = 0; j < dh; ++j) {
            d_out[e](i, j) += b * d_mixed(i, j);
            acc += d_mixed(i, j) * outs[e](i, j);
          }
          d_beta(i, e) = acc;
        }
      Matrix<T> d_r = softmax_rows_backward(rt.weights, std::move(d_beta));
      add_matmul_at_b(hp.router.grad, rt.router_in, d_r);
      Matrix<T> d_router_in = matmul_a_bt(d_r, hp.router.value);
      for (std::size_t e = 0; e < n; ++e) add_inplace(d_out[e], column_block(d_router_in, e * dh, dh));

      // Expert attention.
      const auto& mc = tr.moe[h];
      Matrix<T> dk(t, dh), dv(t, dh);
      for (std::size_t e = 0; e < n; ++e) {
        Matrix<T> dq(t, dh);
        causal_attention_backward(mc.queries[e], mc.keys, mc.values, mc.probs[e], d_out[e], dq,
                                  dk, dv);
        add_matmul_at_b(hp.expert_query[e].grad, tr.x, dq);
        add_matmul_a_bt(dx, dq, hp.expert_query[e].value);
      }
      add_matmul_at_b(hp.key.grad, tr.x, dk);
      add_matmul_at_b(hp.value.grad, tr.x, dv);
      add_matmul_a_bt(dx, dk, hp.key.value);
      add_matmul_a_bt(dx, dv, hp.value.value);
    }
    trunk_backward(trunk, backbone, tr.trunk, std::move(dx), table_grad_);
  }

  void flush_gradients() {
    for (std::size_t h = 0; h < config.heads; ++h) {
      auto& wf = fame.heads[h].facet_proj;
      add_matmul_at_b(wf.grad, table_, sub_grad_[h]);
      add_matmul_a_bt(table_grad_, sub_grad_[h], wf.value);
      sub_grad_[h].set_zero();
    }
    trunk.items.backward(table_grad_);
    table_grad_.set_zero();
  }

  std::vector<Param<T>*> parameters() {
    auto out = trunk.params();
    for (auto* p : fame.params()) out.push_back(p);
    return out;
  }

  std::span<const std::size_t> tail(std::span<const std::size_t> seq) const {
    return seq.size() > backbone.max_len ? seq.last(backbone.max_len) : seq;
  }

 private:
  Matrix<T> table_;
  Matrix<T> table_grad_;
  std::vector<Matrix<T>> sub_;
  std::vector<Matrix<T>> sub_grad_;
};

// Replaces the final block of a trained backbone with the FAME layer. Key and
// value matrices are copied from the final block's head slices; each expert
// starts at that block's query slice plus Normal(0, noise^2). The rest of the
// FAME layer is freshly initialised from `rng`.
template <typename T>
FameModel<T> init_from_backbone(const SasRec<T>& backbone, FameConfig cfg, Rng& rng) {
  cfg.validate();
  const auto& bc = backbone.config;
  if (cfg.d != bc.d) {
    throw DimensionError("FAME d=" + std::to_string(cfg.d) + " but backbone d=" +
                         std::to_string(bc.d));
  }
  if (cfg.heads != bc.heads) {
    throw DimensionError("FAME heads=" + std::to_string(cfg.heads) + " but backbone heads=" +
                         std::to_string(bc.heads));
  }
  BackboneParams<T> trunk = backbone.params;
  const AttentionLayerParams<T> last = trunk.layers.back();
  trunk.layers.pop_back();
  FameParams<T> fp = init_fame_params<T>(cfg, rng);
  const std::size_t dh = cfg.head_dim();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    auto& hp = fp.heads[h];
    hp.key = Param<T>(column_block(last.wk.value, h * dh, dh));
    hp.value = Param<T>(column_block(last.wv.value, h * dh, dh));
    if (cfg.random_experts) continue;
    const Matrix<T> q = column_block(last.wq.value, h * dh, dh);
    for (auto& e : hp.expert_query) {
      Matrix<T> w = q;
      if (cfg.expert_noise > 0.0)
        for (auto& v : w.values()) v += static_cast<T>(cfg.expert_noise * rng.normal());
      e = Param<T>(std::move(w));
    }
  }
  return FameModel<T>(bc, cfg, std::move(trunk), std::move(fp));
}

}  // namespace fame
