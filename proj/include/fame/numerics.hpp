#pragma once

// Dense row-major matrices, the handful of kernels the models are built from,
// hand-derived backward passes for each, Adam, and a central-difference
// gradient oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fame/error.hpp"

namespace fame {

template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged initializer for matrix");
      std::copy(row.begin(), row.end(), m.row(i).begin());
      ++i;
    }
    return m;
  }

  static Matrix row_vector(std::span<const T> values) {
    return Matrix(1, values.size(), std::vector<T>(values.begin(), values.end()));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }
  T& operator[](std::size_t k) noexcept { return data_[k]; }
  const T& operator[](std::size_t k) const noexcept { return data_[k]; }

  std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T(0)); }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  template <typename U>
  Matrix<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a.rows(), a.cols()) +
                         " vs " + shape_str(b.rows(), b.cols()));
  }
}

// ---------------------------------------------------------------------------
// Random numbers. splitmix64 so a seed means the same stream everywhere; the
// std:: distributions are implementation-defined and therefore avoided.

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection keeps it unbiased.
  std::size_t below(std::size_t n) {
    if (n == 0) throw ParameterError("Rng::below called with n = 0");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  // Box-Muller, one draw per call (the second variate is discarded so the
  // stream position does not depend on call history).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  // Independent child stream; the parent advances by one draw.
  Rng fork() noexcept { return Rng(next_u64()); }

 private:
  std::uint64_t state_;
};

template <typename T>
void fill_normal(Matrix<T>& m, double stddev, Rng& rng) {
  for (auto& v : m.values()) v = static_cast<T>(stddev * rng.normal());
}

template <typename T>
void fill_xavier_uniform(Matrix<T>& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (auto& v : m.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------------------
// Products. The add_* forms accumulate into an existing output, which is what
// the backward passes need.

template <typename T>
void add_matmul(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols()) {
    throw DimensionError("matmul: " + shape_str(a.rows(), a.cols()) + " x " +
                         shape_str(b.rows(), b.cols()) + " -> " +
                         shape_str(c.rows(), c.cols()));
  }
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c.row(i).data();
    const T* ai = a.row(i).data();
    for (std::size_t k = 0; k < m; ++k) {
      const T aik = ai[k];
      if (aik == T(0)) continue;
      const T* bk = b.row(k).data();
      for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

// c += a^T b
template <typename T>
void add_matmul_at_b(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols()) {
    throw DimensionError("matmul_at_b: " + shape_str(a.rows(), a.cols()) + "^T x " +
                         shape_str(b.rows(), b.cols()));
  }
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const T* ak = a.row(k).data();
    const T* bk = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T aki = ak[i];
      if (aki == T(0)) continue;
      T* ci = c.row(i).data();
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
}

// c += a b^T
template <typename T>
void add_matmul_a_bt(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows()) {
    throw DimensionError("matmul_a_bt: " + shape_str(a.rows(), a.cols()) + " x " +
                         shape_str(b.rows(), b.cols()) + "^T");
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ai = a.row(i).data();
    T* ci = c.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* bj = b.row(j).data();
      T acc = T(0);
      for (std::size_t k = 0; k < a.cols(); ++k) acc += ai[k] * bj[k];
      ci[j] += acc;
    }
  }
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" +
                         shape_str(a.rows(), a.cols()) + " x " +
                         shape_str(b.rows(), b.cols()) + ")");
  }
  Matrix<T> c(a.rows(), b.cols());
  add_matmul(c, a, b);
  return c;
}

template <typename T>
Matrix<T> matmul_at_b(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.cols(), b.cols());
  add_matmul_at_b(c, a, b);
  return c;
}

template <typename T>
Matrix<T> matmul_a_bt(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows(), b.rows());
  add_matmul_a_bt(c, a, b);
  return c;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// ---------------------------------------------------------------------------
// Elementwise helpers.

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t k = 0; k < av.size(); ++k) av[k] += bv[k];
}

template <typename T>
Matrix<T> add(Matrix<T> a, const Matrix<T>& b) {
  add_inplace(a, b);
  return a;
}

template <typename T>
void scale_inplace(Matrix<T>& a, T s) {
  for (auto& v : a.values()) v *= s;
}

template <typename T>
Matrix<T> hadamard(Matrix<T> a, const Matrix<T>& b) {
  require_same_shape(a, b, "hadamard");
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t k = 0; k < av.size(); ++k) av[k] *= bv[k];
  return a;
}

// a += row vector broadcast over rows
template <typename T>
void add_row_broadcast(Matrix<T>& a, const Matrix<T>& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw DimensionError("bias " + shape_str(bias.rows(), bias.cols()) +
                         " cannot broadcast over " + shape_str(a.rows(), a.cols()));
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

// bias_grad (1 x n) += column sums of g
template <typename T>
void add_column_sums(Matrix<T>& bias_grad, const Matrix<T>& g) {
  for (std::size_t i = 0; i < g.rows(); ++i) {
    auto r = g.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) bias_grad[j] += r[j];
  }
}

template <typename T>
Matrix<T> column_block(const Matrix<T>& m, std::size_t start, std::size_t width) {
  if (start + width > m.cols()) throw DimensionError("column block out of range");
  Matrix<T> out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i).subspan(start, width);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
void set_column_block(Matrix<T>& m, std::size_t start, const Matrix<T>& block) {
  if (block.rows() != m.rows() || start + block.cols() > m.cols()) {
    throw DimensionError("column block does not fit");
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::copy(block.row(i).begin(), block.row(i).end(), m.row(i).begin() + start);
  }
}

template <typename T>
void add_column_block(Matrix<T>& m, std::size_t start, const Matrix<T>& block) {
  if (block.rows() != m.rows() || start + block.cols() > m.cols()) {
    throw DimensionError("column block does not fit");
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto dst = m.row(i).subspan(start, block.cols());
    auto src = block.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc = T(0);
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Softmax.

template <typename T>
void softmax_inplace(std::span<T> x) {
  if (x.empty()) return;
  const T mx = *std::max_element(x.begin(), x.end());
  T sum = T(0);
  for (auto& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : x) v /= sum;
}

template <typename T>
Matrix<T> softmax_rows(Matrix<T> m) {
  for (std::size_t i = 0; i < m.rows(); ++i) softmax_inplace(m.row(i));
  return m;
}

// Given y = softmax(x) on a row and dL/dy, returns dL/dx in place of dy.
template <typename T>
void softmax_backward_inplace(std::span<const T> y, std::span<T> dy) {
  T inner = T(0);
  for (std::size_t k = 0; k < y.size(); ++k) inner += y[k] * dy[k];
  for (std::size_t k = 0; k < y.size(); ++k) dy[k] = y[k] * (dy[k] - inner);
}

template <typename T>
Matrix<T> softmax_rows_backward(const Matrix<T>& y, Matrix<T> dy) {
  for (std::size_t i = 0; i < y.rows(); ++i) softmax_backward_inplace(y.row(i), dy.row(i));
  return dy;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis, population variance.

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> gamma,
                          std::span<const T> beta, T eps = T(kLayerNormEps)) {
  if (gamma.size() != x.size() || beta.size() != x.size()) {
    throw DimensionError("layer_norm: gamma/beta length differs from input");
  }
  if (!(eps > T(0))) throw ParameterError("layer_norm: eps must be positive");
  const T n = static_cast<T>(x.size());
  T mean = std::accumulate(x.begin(), x.end(), T(0)) / n;
  T var = T(0);
  for (T v : x) var += (v - mean) * (v - mean);
  var /= n;
  const T inv = T(1) / std::sqrt(var + eps);
  std::vector<T> y(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = gamma[k] * (x[k] - mean) * inv + beta[k];
  return y;
}

template <typename T>
struct LayerNormCache {
  Matrix<T> normalized;     // (x - mean) / sqrt(var + eps), per row
  std::vector<T> inv_std;   // per row
};

template <typename T>
Matrix<T> layer_norm_rows(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                          T eps, LayerNormCache<T>* cache) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw DimensionError("layer_norm: gamma/beta length differs from input width");
  }
  Matrix<T> y(x.rows(), x.cols());
  Matrix<T> xhat(x.rows(), x.cols());
  std::vector<T> inv_std(x.rows());
  const T n = static_cast<T>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    T mean = std::accumulate(r.begin(), r.end(), T(0)) / n;
    T var = T(0);
    for (T v : r) var += (v - mean) * (v - mean);
    var /= n;
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < r.size(); ++j) {
      xhat(i, j) = (r[j] - mean) * inv;
      y(i, j) = gamma[j] * xhat(i, j) + beta[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_rows_backward(const Matrix<T>& dy, const LayerNormCache<T>& cache,
                                   const Matrix<T>& gamma, Matrix<T>& dgamma,
                                   Matrix<T>& dbeta) {
  const auto& xhat = cache.normalized;
  Matrix<T> dx(dy.rows(), dy.cols());
  const T n = static_cast<T>(dy.cols());
  std::vector<T> dxhat(dy.cols());
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    T mean_d = T(0), mean_dx = T(0);
    for (std::size_t j = 0; j < dy.cols(); ++j) {
      dgamma[j] += dy(i, j) * xhat(i, j);
      dbeta[j] += dy(i, j);
      dxhat[j] = dy(i, j) * gamma[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * xhat(i, j);
    }
    mean_d /= n;
    mean_dx /= n;
    for (std::size_t j = 0; j < dy.cols(); ++j) {
      dx(i, j) = cache.inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Activations and dropout.

template <typename T>
Matrix<T> relu(Matrix<T> x) {
  for (auto& v : x.values()) v = std::max(v, T(0));
  return x;
}

template <typename T>
std::vector<T> relu(std::span<const T> x) {
  std::vector<T> y(x.begin(), x.end());
  for (auto& v : y) v = std::max(v, T(0));
  return y;
}

// Gradient through relu given the pre-activation.
template <typename T>
Matrix<T> relu_backward(const Matrix<T>& pre, Matrix<T> dy) {
  require_same_shape(pre, dy, "relu_backward");
  for (std::size_t k = 0; k < dy.size(); ++k)
    if (!(pre[k] > T(0))) dy[k] = T(0);
  return dy;
}

// Inverted dropout. When `mask` is given it receives the per-entry multiplier
// (0 or 1/(1-p)), or stays empty when the op was the identity.
template <typename T>
Matrix<T> dropout(Matrix<T> x, double p, Rng& rng, bool training, Matrix<T>* mask = nullptr) {
  if (!(p >= 0.0) || p >= 1.0) {
    throw ParameterError("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (mask) *mask = Matrix<T>();
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Matrix<T> m(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) {
    m[k] = rng.uniform() < p ? T(0) : keep_scale;
    x[k] *= m[k];
  }
  if (mask) *mask = std::move(m);
  return x;
}

template <typename T>
Matrix<T> dropout_backward(const Matrix<T>& mask, Matrix<T> dy) {
  if (mask.empty()) return dy;
  return hadamard(std::move(dy), mask);
}

// ---------------------------------------------------------------------------
// Cross-entropy.

template <typename T>
struct CrossEntropy {
  T loss;
  std::vector<T> grad;  // d loss / d logits
};

template <typename T>
CrossEntropy<T> cross_entropy_from_logits(std::span<const T> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) +
                     " outside logits of length " + std::to_string(logits.size()));
  }
  std::vector<T> p(logits.begin(), logits.end());
  const T mx = *std::max_element(p.begin(), p.end());
  T sum = T(0);
  for (auto& v : p) sum += std::exp(v - mx);
  const T log_z = mx + std::log(sum);
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(logits[k] - log_z);
  T loss = log_z - logits[target];
  p[target] -= T(1);
  return {loss, std::move(p)};
}

// Row-wise cross-entropy; returns the summed loss and writes
// d(sum)/d(logits) * grad_scale into `dlogits`.
template <typename T>
T cross_entropy_rows(const Matrix<T>& logits, std::span<const std::size_t> targets,
                     Matrix<T>* dlogits, T grad_scale = T(1)) {
  if (targets.size() != logits.rows()) {
    throw DimensionError("cross_entropy_rows: one target per row required");
  }
  if (dlogits) *dlogits = Matrix<T>(logits.rows(), logits.cols());
  T total = T(0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto ce = cross_entropy_from_logits(logits.row(i), targets[i]);
    total += ce.loss;
    if (dlogits) {
      auto dst = dlogits->row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = ce.grad[j] * grad_scale;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Trainable parameters and Adam.

template <typename T>
struct Param {
  Matrix<T> value;
  Matrix<T> grad;
  Matrix<T> adam_m;
  Matrix<T> adam_v;
  std::uint64_t step_count = 0;

  Param() = default;
  Param(std::size_t rows, std::size_t cols, T fill = T(0))
      : value(rows, cols, fill), grad(rows, cols), adam_m(rows, cols), adam_v(rows, cols) {}
  explicit Param(Matrix<T> v)
      : value(std::move(v)),
        grad(value.rows(), value.cols()),
        adam_m(value.rows(), value.cols()),
        adam_v(value.rows(), value.cols()) {}

  std::size_t rows() const noexcept { return value.rows(); }
  std::size_t cols() const noexcept { return value.cols(); }
  void zero_grad() { grad.set_zero(); }
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
void adam_step(Param<T>& p, const AdamConfig& cfg) {
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t k = 0; k < p.value.size(); ++k) {
    const T g = p.grad[k];
    p.adam_m[k] = b1 * p.adam_m[k] + (T(1) - b1) * g;
    p.adam_v[k] = b2 * p.adam_v[k] + (T(1) - b2) * g * g;
    const double mhat = static_cast<double>(p.adam_m[k]) / bc1;
    const double vhat = static_cast<double>(p.adam_v[k]) / bc2;
    p.value[k] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
  p.zero_grad();
}

template <typename T>
void zero_grads(const std::vector<Param<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Finite-difference oracle.

template <typename T>
std::vector<Matrix<T>> finite_difference_gradient(const std::function<T()>& f,
                                                  const std::vector<Param<T>*>& params,
                                                  T h) {
  if (!(h > T(0))) throw ParameterError("finite difference step must be positive");
  std::vector<Matrix<T>> out;
  out.reserve(params.size());
  for (auto* p : params) {
    Matrix<T> g(p->rows(), p->cols());
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const T saved = p->value[k];
      p->value[k] = saved + h;
      const T up = f();
      p->value[k] = saved - h;
      const T down = f();
      p->value[k] = saved;
      g[k] = (up - down) / (T(2) * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// max |a - b| / max(max|a|, max|b|, floor). The floor keeps tensors whose
// true gradient is ~0 from being judged on central-difference round-off.
template <typename T>
T relative_error(const Matrix<T>& analytic, const Matrix<T>& numeric, T floor = T(1e-7)) {
  require_same_shape(analytic, numeric, "relative_error");
  T diff = T(0), scale = T(0);
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff = std::max(diff, std::abs(analytic[k] - numeric[k]));
    scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
  }
  return diff / std::max(scale, floor);
}

}  // namespace fame
