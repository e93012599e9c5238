#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <vector>

#include "fame/numerics.hpp"
#include "fame/pretrain.hpp"

namespace fame::testing {

template <typename T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix<T> m(r, c);
  for (auto& v : m.values()) v = static_cast<T>(rng.uniform(-scale, scale));
  return m;
}

// Summed next-item cross-entropy over all positions in eval mode.
template <typename Model>
double sequence_loss(Model& model, std::span<const std::size_t> seq,
                     std::span<const std::size_t> targets) {
  model.prepare();
  auto logits = model.forward(seq, nullptr, false, nullptr);
  return cross_entropy_rows<double>(logits, targets, nullptr);
}

// Largest per-tensor relative error between the hand-derived backward pass
// and central differences.
template <typename Model>
double max_gradient_error(Model& model, std::span<const std::size_t> seq,
                          std::span<const std::size_t> targets, double h = 1e-4) {
  auto params = model.parameters();
  zero_grads(params);
  model.prepare();
  typename Model::Trace trace;
  auto logits = model.forward(seq, nullptr, false, &trace);
  Matrix<double> dlogits;
  cross_entropy_rows<double>(logits, targets, &dlogits);
  model.backward(trace, dlogits);
  model.flush_gradients();
  std::vector<Matrix<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  auto numeric = finite_difference_gradient<double>(
      [&] { return sequence_loss(model, seq, targets); }, params, h);
  model.prepare();
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k)
    worst = std::max(worst, relative_error(analytic[k], numeric[k]));
  return worst;
}

// Same check for the contrastive loss of one facet batch.
inline double supcon_gradient_error(const Matrix<double>& text, std::span<const std::size_t> idx,
                                    std::span<const std::uint32_t> labels,
                                    ProjectorParams<double>& proj, std::size_t head, double tau,
                                    double h = 1e-4) {
  auto params = proj.active(head);
  zero_grads(params);
  supcon_step_loss(text, idx, labels, proj, head, tau, true);
  std::vector<Matrix<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  auto numeric = finite_difference_gradient<double>(
      [&] { return supcon_step_loss(text, idx, labels, proj, head, tau, false); }, params, h);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k)
    worst = std::max(worst, relative_error(analytic[k], numeric[k]));
  return worst;
}

}  // namespace fame::testing
