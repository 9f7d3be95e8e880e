// SPDX-License-Identifier: Apache-2.0
//
// Differentiable conformal surrogates: pinball loss, soft quantile, soft
// inclusion indicator, and the set-size / true-label training objectives.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icfcp/numerics/ops.hpp"
#include "icfcp/tasks/episode.hpp"

namespace icfcp::soft {

using num::Tensor;

struct SoftCpHyper {
  double alpha = 0.1;
  double c_q = 0.1;     // soft-quantile temperature
  double kappa = 0.1;   // indicator temperature
  double lambda = 1.0;  // weight of the true-label term

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (!(c_q > 0.0)) throw std::invalid_argument("c_q must be positive");
    if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");
  }
};

/// α·Σ[z − z_j]₊ + (1−α)·Σ[z_j − z]₊.
inline double pinball(double z, std::span<const double> zs, double alpha) {
  double below = 0.0, above = 0.0;
  for (const double zj : zs) {
    below += std::max(z - zj, 0.0);
    above += std::max(zj - z, 0.0);
  }
  return alpha * below + (1.0 - alpha) * above;
}

/// Pinball loss of every entry of `zs` against the whole set, as a [1 × n] row.
template <class T>
Tensor<T> pinball_losses(const Tensor<T>& zs, double alpha) {
  const auto a = static_cast<T>(alpha);
  auto d = num::pairwise_diff(zs);  // d[i][j] = z_i − z_j
  return num::add(num::scale(num::sum_rows(num::relu(d)), a),
                  num::scale(num::sum_rows(num::relu(num::neg(d))), T(1) - a));
}

/// Σ_j z_j · softmax(−ρ(z_j; zs)/c_q)_j over the n entries of `zs`.
template <class T>
Tensor<T> soft_quantile(const Tensor<T>& zs, double alpha, double c_q) {
  if (zs.size() == 0) throw std::invalid_argument("soft_quantile: empty set");
  const auto row = num::reshape(zs, {1, zs.size()});
  const auto w = num::softmax_rows(num::scale(pinball_losses(row, alpha), static_cast<T>(-1.0 / c_q)));
  return num::sum(num::mul(w, row));
}

inline double soft_quantile(std::span<const double> zs, double alpha, double c_q) {
  num::NoGradGuard no_grad;
  auto t = Tensor<double>::from({1, zs.size()}, std::vector<double>(zs.begin(), zs.end()));
  return soft_quantile(t, alpha, c_q).item();
}

/// 1 / (1 + exp((r − τ)/κ)): tends to 𝟙(r ≤ τ) as κ → 0.
template <class T>
Tensor<T> soft_indicator(const Tensor<T>& r, const Tensor<T>& tau, double kappa) {
  return num::sigmoid(num::scale(num::sub(tau, r), static_cast<T>(1.0 / kappa)));
}

inline double soft_indicator(double r, double tau, double kappa) {
  num::NoGradGuard no_grad;
  return soft_indicator(Tensor<double>::scalar(r), Tensor<double>::scalar(tau), kappa).item();
}

namespace detail {

template <class T>
void check_matrix(const Tensor<T>& s) {
  if (s.rank() != 2 || s.cols() < 1 || s.rows() < 1) {
    throw num::DimensionError("score matrix must be K × (n+1), got " + num::shape_str(s.shape()));
  }
}

/// σ(s_{n+1}^y, Q̂(row y)) for label y of a K × (n+1) score matrix.
template <class T>
Tensor<T> label_inclusion(const Tensor<T>& scores, std::size_t y, const SoftCpHyper& h) {
  const std::size_t n1 = scores.cols();
  const auto row = num::slice_rows(scores, y, 1);
  const auto tau = soft_quantile(row, h.alpha, h.c_q);
  const auto test = num::reshape(num::gather(row, {n1 - 1}), {1});
  return soft_indicator(test, tau, h.kappa);
}

}  // namespace detail

/// Σ_t Σ_y σ(s_{n+1}^{t,y}, Q̂({s_i^{t,y}})), the soft total set size.
template <class T>
Tensor<T> loss_ineff(const std::vector<Tensor<T>>& score_matrices, const SoftCpHyper& h) {
  if (score_matrices.empty()) throw std::invalid_argument("loss_ineff: empty batch");
  std::vector<Tensor<T>> terms;
  for (const auto& s : score_matrices) {
    detail::check_matrix(s);
    if (s.rows() != score_matrices.front().rows()) throw num::DimensionError("loss_ineff: label count mismatch");
    for (std::size_t y = 0; y < s.rows(); ++y) terms.push_back(detail::label_inclusion(s, y, h));
  }
  return num::sum(num::concat_rows(terms));
}

/// Σ_t (1 − σ(s_{n+1}^{t,y*}, Q̂({s_i^{t,y*}}))) with y* the true test label.
template <class T>
Tensor<T> loss_class(const std::vector<Tensor<T>>& score_matrices, std::span<const int> true_labels,
                     const SoftCpHyper& h) {
  if (score_matrices.size() != true_labels.size()) {
    throw num::DimensionError("loss_class: one true label per score matrix required");
  }
  if (score_matrices.empty()) throw std::invalid_argument("loss_class: empty batch");
  std::vector<Tensor<T>> terms;
  for (std::size_t t = 0; t < score_matrices.size(); ++t) {
    detail::check_matrix(score_matrices[t]);
    check_label(true_labels[t], score_matrices[t].rows());
    terms.push_back(detail::label_inclusion(score_matrices[t], static_cast<std::size_t>(true_labels[t]), h));
  }
  const auto included = num::sum(num::concat_rows(terms));
  return num::add_scalar(num::neg(included), static_cast<T>(terms.size()));
}

/// L_ineff + λ·L_class.
template <class T>
Tensor<T> loss_total(const std::vector<Tensor<T>>& score_matrices, std::span<const int> true_labels,
                     const SoftCpHyper& h) {
  const auto ineff = loss_ineff(score_matrices, h);
  if (h.lambda == 0.0) return ineff;
  return num::add(ineff, num::scale(loss_class(score_matrices, true_labels, h), static_cast<T>(h.lambda)));
}

struct SoftLossTerms {
  double ineff = 0.0;
  double cls = 0.0;
};

/// Split-CP variant for one task: the soft threshold is the soft quantile of
/// the m calibration scores and the test row holds K candidate scores.
template <class T>
Tensor<T> loss_scp_soft(const Tensor<T>& calibration_scores, const Tensor<T>& test_row, int true_label,
                        const SoftCpHyper& h, SoftLossTerms* terms = nullptr) {
  const std::size_t K = test_row.size();
  check_label(true_label, K);
  const auto tau = soft_quantile(calibration_scores, h.alpha, h.c_q);
  const auto row = num::reshape(test_row, {1, K});
  std::vector<Tensor<T>> inclusions;
  for (std::size_t y = 0; y < K; ++y) {
    inclusions.push_back(soft_indicator(num::reshape(num::gather(row, {y}), {1}), tau, h.kappa));
  }
  const auto ineff = num::sum(num::concat_rows(inclusions));
  const auto cls = num::add_scalar(num::neg(inclusions[static_cast<std::size_t>(true_label)]), T(1));
  if (terms) {
    terms->ineff = static_cast<double>(ineff.item());
    terms->cls = static_cast<double>(cls.item());
  }
  if (h.lambda == 0.0) return ineff;
  return num::add(ineff, num::scale(cls, static_cast<T>(h.lambda)));
}

}  // namespace icfcp::soft
