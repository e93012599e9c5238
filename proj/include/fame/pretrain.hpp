#pragma once

// Facet-aware pre-training of item text embeddings: a shared MLP followed by
// one affine head per facet, each projecting onto the unit sphere, trained
// with supervised contrastive loss on fair P x K batches, one facet at a time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fame/data.hpp"
#include "fame/error.hpp"
#include "fame/numerics.hpp"

namespace fame {

inline constexpr double kNormEps = 1e-12;

struct PretrainConfig {
  double tau = 0.1;
  std::size_t P = 4;
  std::size_t K = 8;
  std::size_t epochs = 300;
  AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
    if (P < 2) throw ParameterError("P must be >= 2");
    if (K < 2) throw ParameterError("K must be >= 2");
    if (epochs == 0) throw ParameterError("pretrain epochs must be positive");
  }
};

template <typename T>
struct ProjectorParams {
  Param<T> shared_w;  // D_T x D_mid
  Param<T> shared_b;  // 1 x D_mid
  std::vector<Param<T>> head_w;  // D_mid x D/H
  std::vector<Param<T>> head_b;  // 1 x D/H

  std::size_t heads() const noexcept { return head_w.size(); }
  std::size_t head_dim() const { return head_w.at(0).cols(); }
  std::size_t out_dim() const { return heads() * head_dim(); }

  static ProjectorParams init(std::size_t text_dim, std::size_t mid_dim, std::size_t out_dim,
                              std::size_t heads, Rng& rng) {
    if (text_dim == 0 || mid_dim == 0 || out_dim == 0 || heads == 0) {
      throw ParameterError("projector dimensions must be positive");
    }
    if (out_dim % heads != 0) {
      throw ParameterError("output dim " + std::to_string(out_dim) +
                           " is not divisible by " + std::to_string(heads) + " heads");
    }
    ProjectorParams p;
    p.shared_w = Param<T>(text_dim, mid_dim);
    fill_xavier_uniform(p.shared_w.value, rng);
    p.shared_b = Param<T>(1, mid_dim);
    for (std::size_t h = 0; h < heads; ++h) {
      p.head_w.emplace_back(mid_dim, out_dim / heads);
      fill_xavier_uniform(p.head_w.back().value, rng);
      p.head_b.emplace_back(1, out_dim / heads);
    }
    return p;
  }

  // Parameters touched by a step on facet h.
  std::vector<Param<T>*> active(std::size_t h) {
    return {&shared_w, &shared_b, &head_w.at(h), &head_b.at(h)};
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out{&shared_w, &shared_b};
    for (std::size_t h = 0; h < heads(); ++h) {
      out.push_back(&head_w[h]);
      out.push_back(&head_b[h]);
    }
    return out;
  }
};

// ReLU(E W_shared + b_shared), row-wise.
template <typename T>
Matrix<T> encode_items(const Matrix<T>& e, const ProjectorParams<T>& p, Matrix<T>* pre = nullptr) {
  Matrix<T> a = matmul(e, p.shared_w.value);
  add_row_broadcast(a, p.shared_b.value);
  if (pre) *pre = a;
  return relu(std::move(a));
}

// x / (||x|| + eps)
template <typename T>
std::vector<T> l2_normalize(std::span<const T> x) {
  T n = T(0);
  for (T v : x) n += v * v;
  const T denom = std::sqrt(n) + static_cast<T>(kNormEps);
  std::vector<T> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] / denom;
  return out;
}

template <typename T>
std::vector<T> project_facet(std::span<const T> h, const ProjectorParams<T>& p, std::size_t head) {
  if (head >= p.heads()) throw IndexError("projector head " + std::to_string(head) + " out of range");
  Matrix<T> a = matmul(Matrix<T>::row_vector(h), p.head_w[head].value);
  add_row_broadcast(a, p.head_b[head].value);
  return l2_normalize<T>(a.row(0));
}

template <typename T>
struct ProjectionCache {
  Matrix<T> hidden;  // encoded rows
  Matrix<T> affine;  // pre-normalisation head output
  std::vector<T> norms;
};

template <typename T>
Matrix<T> project_rows(const Matrix<T>& hidden, const ProjectorParams<T>& p, std::size_t head,
                       ProjectionCache<T>* cache) {
  Matrix<T> a = matmul(hidden, p.head_w.at(head).value);
  add_row_broadcast(a, p.head_b[head].value);
  Matrix<T> z(a.rows(), a.cols());
  std::vector<T> norms(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T n = T(0);
    for (T v : a.row(i)) n += v * v;
    norms[i] = std::sqrt(n);
    const T denom = norms[i] + static_cast<T>(kNormEps);
    for (std::size_t k = 0; k < a.cols(); ++k) z(i, k) = a(i, k) / denom;
  }
  if (cache) {
    cache->hidden = hidden;
    cache->affine = std::move(a);
    cache->norms = std::move(norms);
  }
  return z;
}

// M[i][j] = 1 iff labels match and i != j.
inline Matrix<double> build_mask(std::span<const std::uint32_t> labels) {
  Matrix<double> m(labels.size(), labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (i != j && labels[i] == labels[j]) m(i, j) = 1.0;
  return m;
}

template <typename T>
struct SupConResult {
  T loss = T(0);
  std::size_t anchors = 0;  // anchors with at least one positive
};

// Mean over anchors with positives of
//   -1/|P(i)| sum_p log( exp(z_i.z_p/tau) / sum_{a != i} exp(z_i.z_a/tau) ).
template <typename T>
SupConResult<T> supcon_loss(const Matrix<T>& z, std::span<const std::uint32_t> labels, double tau,
                            Matrix<T>* dz = nullptr) {
  const std::size_t b = z.rows();
  if (b < 2) throw BatchError("SupCon needs a batch of at least 2, got " + std::to_string(b));
  if (labels.size() != b) throw DimensionError("one label per row required");
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  const T inv_tau = static_cast<T>(1.0 / tau);
  Matrix<T> s = matmul_a_bt(z, z);
  scale_inplace(s, inv_tau);
  Matrix<T> ds(b, b);
  SupConResult<T> r;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t pos = 0;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) ++pos;
    if (pos == 0) continue;
    ++r.anchors;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) mx = std::max(mx, s(i, j));
    T sum = T(0);
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) sum += std::exp(s(i, j) - mx);
    const T log_den = mx + std::log(sum);
    T li = T(0);
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) li += log_den - s(i, j);
    r.loss += li / static_cast<T>(pos);
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      T g = std::exp(s(i, j) - log_den);
      if (labels[j] == labels[i]) g -= T(1) / static_cast<T>(pos);
      ds(i, j) = g;
    }
  }
  if (r.anchors == 0) {
    if (dz) *dz = Matrix<T>(z.rows(), z.cols());
    return r;
  }
  const T inv_m = T(1) / static_cast<T>(r.anchors);
  r.loss *= inv_m;
  if (dz) {
    scale_inplace(ds, inv_m * inv_tau);
    // s_ij depends on z_i and z_j.
    *dz = matmul(ds, z);
    add_matmul_at_b(*dz, ds, z);
  }
  return r;
}

// Backward through normalisation, head affine map and the shared MLP.
template <typename T>
void project_rows_backward(const ProjectionCache<T>& c, const Matrix<T>& shared_pre,
                           const Matrix<T>& input, ProjectorParams<T>& p, std::size_t head,
                           const Matrix<T>& dz) {
  Matrix<T> da(dz.rows(), dz.cols());
  for (std::size_t i = 0; i < dz.rows(); ++i) {
    const T n = c.norms[i];
    const T r = n + static_cast<T>(kNormEps);
    T proj = T(0);
    for (std::size_t k = 0; k < dz.cols(); ++k) proj += c.affine(i, k) * dz(i, k);
    for (std::size_t k = 0; k < dz.cols(); ++k) {
      da(i, k) = dz(i, k) / r;
      if (n > T(0)) da(i, k) -= c.affine(i, k) * proj / (r * r * n);
    }
  }
  add_matmul_at_b(p.head_w[head].grad, c.hidden, da);
  add_column_sums(p.head_b[head].grad, da);
  Matrix<T> dh = relu_backward(shared_pre, matmul_a_bt(da, p.head_w[head].value));
  add_matmul_at_b(p.shared_w.grad, input, dh);
  add_column_sums(p.shared_b.grad, dh);
}

// Loss of one facet batch; accumulates gradients into shared + head params.
template <typename T>
T supcon_step_loss(const Matrix<T>& text, std::span<const std::size_t> indices,
                   std::span<const std::uint32_t> labels, ProjectorParams<T>& p, std::size_t head,
                   double tau, bool accumulate) {
  Matrix<T> input(indices.size(), text.cols());
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy(text.row(indices[r]).begin(), text.row(indices[r]).end(), input.row(r).begin());
  Matrix<T> pre;
  Matrix<T> hidden = encode_items(input, p, &pre);
  ProjectionCache<T> cache;
  Matrix<T> z = project_rows(hidden, p, head, &cache);
  Matrix<T> dz;
  auto res = supcon_loss(z, labels, tau, accumulate ? &dz : nullptr);
  if (accumulate) project_rows_backward(cache, pre, input, p, head, dz);
  return res.loss;
}

// ---------------------------------------------------------------------------
// Fair P x K sampler.

struct SupConBatch {
  std::vector<std::size_t> indices;
  std::vector<std::uint32_t> labels;
  std::size_t head = 0;
};

class FairSampler {
 public:
  FairSampler(std::span<const std::uint32_t> labels, std::size_t P, std::size_t K,
              const std::string& facet, std::uint64_t seed)
      : P_(P), K_(K), rng_(seed) {
    if (P < 2 || K < 2) throw ParameterError("sampler needs P >= 2 and K >= 2");
    std::uint32_t max_label = 0;
    for (auto l : labels) max_label = std::max(max_label, l);
    members_.assign(static_cast<std::size_t>(max_label) + 1, {});
    for (std::size_t i = 0; i < labels.size(); ++i) members_[labels[i]].push_back(i);
    // Class 0 marks a missing value and never forms positives.
    for (std::uint32_t c = 1; c < members_.size(); ++c)
      if (members_[c].size() >= K) valid_.push_back(c);
    if (valid_.size() < P) {
      throw SamplerError("facet '" + facet + "' has " + std::to_string(valid_.size()) +
                         " classes with at least " + std::to_string(K) + " items; need " +
                         std::to_string(P));
    }
  }

  const std::vector<std::uint32_t>& valid_classes() const noexcept { return valid_; }

  // Batches per fair epoch: enough to visit every valid class once.
  std::size_t epoch_batches() const noexcept { return (valid_.size() + P_ - 1) / P_; }

  SupConBatch next() {
    SupConBatch b;
    std::vector<std::uint32_t> chosen;
    std::vector<std::uint32_t> deferred;
    while (chosen.size() < P_) {
      if (cycle_.empty()) refill();
      const std::uint32_t c = cycle_.front();
      cycle_.pop_front();
      if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) {
        deferred.push_back(c);
        continue;
      }
      chosen.push_back(c);
    }
    for (auto it = deferred.rbegin(); it != deferred.rend(); ++it) cycle_.push_front(*it);
    for (auto c : chosen) {
      std::vector<std::size_t> pool = members_[c];
      // Partial Fisher-Yates: K distinct members.
      for (std::size_t k = 0; k < K_; ++k) {
        std::size_t j = k + static_cast<std::size_t>(rng_.below(pool.size() - k));
        std::swap(pool[k], pool[j]);
        b.indices.push_back(pool[k]);
        b.labels.push_back(c);
      }
    }
    return b;
  }

 private:
  void refill() {
    std::vector<std::uint32_t> order = valid_;
    rng_.shuffle(order.begin(), order.end());
    cycle_.assign(order.begin(), order.end());
  }

  std::size_t P_, K_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::uint32_t> valid_;
  std::deque<std::uint32_t> cycle_;
};

// ---------------------------------------------------------------------------
// Alternating optimisation.

struct PretrainLogEntry {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t head = 0;
  double loss = 0.0;
};

// Steps cycle heads 0..H-1; each epoch runs, per head, as many batches as its
// largest facet needs for a fair pass. Only the shared MLP and the active head
// are updated on a step.
template <typename T>
std::vector<PretrainLogEntry> alternating_pretrain(
    const Matrix<T>& text, const FacetTable& facets, ProjectorParams<T>& proj,
    const PretrainConfig& cfg, const std::function<void(const PretrainLogEntry&)>& on_step = {}) {
  cfg.validate();
  if (facets.facet_count() != proj.heads()) {
    throw ConfigError("facet table has " + std::to_string(facets.facet_count()) +
                      " facets but projector has " + std::to_string(proj.heads()) + " heads");
  }
  if (facets.item_count() != text.rows()) {
    throw ConsistencyError("facet table covers " + std::to_string(facets.item_count()) +
                           " items but text matrix has " + std::to_string(text.rows()) + " rows");
  }
  if (proj.shared_w.rows() != text.cols()) throw DimensionError("projector input width mismatch");
  Rng seeds(cfg.seed);
  std::vector<FairSampler> samplers;
  std::size_t per_head = 0;
  for (std::size_t h = 0; h < proj.heads(); ++h) {
    samplers.emplace_back(facets.labels[h], cfg.P, cfg.K, facets.facet_names[h], seeds.next_u64());
    per_head = std::max(per_head, samplers.back().epoch_batches());
  }
  std::vector<PretrainLogEntry> log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t b = 0; b < per_head; ++b) {
      for (std::size_t h = 0; h < proj.heads(); ++h, ++step) {
        auto batch = samplers[h].next();
        auto active = proj.active(h);
        zero_grads(active);
        const T loss = supcon_step_loss(text, batch.indices, batch.labels, proj, h, cfg.tau, true);
        for (auto* p : active) adam_step(*p, cfg.adam);
        PretrainLogEntry e{step, epoch, h, static_cast<double>(loss)};
        if (on_step) on_step(e);
        log.push_back(e);
      }
    }
  }
  return log;
}

// e'_i = [z^(1) | ... | z^(H)]
template <typename T>
Matrix<T> export_item_embeddings(const ProjectorParams<T>& proj, const Matrix<T>& text) {
  Matrix<T> hidden = encode_items(text, proj);
  const std::size_t dh = proj.head_dim();
  Matrix<T> out(text.rows(), proj.out_dim());
  for (std::size_t h = 0; h < proj.heads(); ++h)
    set_column_block(out, h * dh, project_rows(hidden, proj, h, static_cast<ProjectionCache<T>*>(nullptr)));
  return out;
}

// Mean pairwise cosine between items sharing / not sharing a class in one
// facet subspace; sentinel-labelled items are skipped.
struct ClusterStats {
  double intra = 0.0;
  double inter = 0.0;
};

template <typename T>
ClusterStats facet_cluster_stats(const Matrix<T>& embeddings, std::size_t start, std::size_t width,
                                 std::span<const std::uint32_t> labels) {
  ClusterStats s;
  double intra_n = 0, inter_n = 0;
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    if (labels[i] == 0) continue;
    auto a = embeddings.row(i).subspan(start, width);
    for (std::size_t j = i + 1; j < embeddings.rows(); ++j) {
      if (labels[j] == 0) continue;
      auto b = embeddings.row(j).subspan(start, width);
      double dotv = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < width; ++k) {
        dotv += double(a[k]) * b[k];
        na += double(a[k]) * a[k];
        nb += double(b[k]) * b[k];
      }
      const double cos = dotv / (std::sqrt(na * nb) + kNormEps);
      if (labels[i] == labels[j]) {
        s.intra += cos;
        ++intra_n;
      } else {
        s.inter += cos;
        ++inter_n;
      }
    }
  }
  if (intra_n > 0) s.intra /= intra_n;
  if (inter_n > 0) s.inter /= inter_n;
  return s;
}

}  // namespace fame
