// SPDX-License-Identifier: Apache-2.0
//
// Split and full conformal prediction over precomputed non-conformity scores.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icfcp/tasks/episode.hpp"

namespace icfcp::cp {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Log-loss score −log(max(p[y], 1e-12)).
inline double ncs_logloss(std::span<const double> p, int y) {
  check_label(y, p.size());
  return -std::log(std::max(p[static_cast<std::size_t>(y)], kProbFloor));
}

/// 1-based rank ⌈(1−α)·N⌉ of the conformal quantile, clamped to [1, N].
inline std::size_t quantile_rank(std::size_t n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
  // The slack absorbs representation error in products such as 0.9 * 20.
  const double raw = std::ceil((1.0 - alpha) * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n);
}

/// ⌈(1−α)N⌉-th smallest element of the multiset (duplicates count separately).
inline double conformal_quantile(std::vector<double> scores, double alpha) {
  if (scores.empty()) throw std::invalid_argument("conformal_quantile: empty score set");
  const std::size_t k = quantile_rank(scores.size(), alpha);
  std::sort(scores.begin(), scores.end());
  return scores[k - 1];
}

/// SCP threshold: conformal quantile of the calibration scores plus one +∞.
inline double scp_calibrate(std::span<const double> cal_scores, double alpha) {
  if (cal_scores.empty()) throw std::invalid_argument("scp_calibrate: empty calibration set");
  std::vector<double> s(cal_scores.begin(), cal_scores.end());
  s.push_back(kInf);
  return conformal_quantile(std::move(s), alpha);
}

/// Prediction set with the threshold that decided each label.
/// Invariant: y ∈ members ⇔ test_scores[y] ≤ thresholds[y].
struct PredictionSet {
  std::vector<int> members;
  std::vector<double> thresholds;
  std::vector<double> test_scores;

  bool contains(int y) const {
    return std::find(members.begin(), members.end(), y) != members.end();
  }
  std::size_t size() const { return members.size(); }
};

inline PredictionSet scp_predict(double threshold, std::span<const double> test_scores) {
  PredictionSet set;
  set.test_scores.assign(test_scores.begin(), test_scores.end());
  set.thresholds.assign(test_scores.size(), threshold);
  for (std::size_t y = 0; y < test_scores.size(); ++y) {
    if (test_scores[y] <= threshold) set.members.push_back(static_cast<int>(y));
  }
  return set;
}

/// K × (n+1) scores: row y holds s_1^y..s_n^y followed by the test score s_{n+1}^y.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(std::size_t num_labels, std::size_t num_points)
      : labels_(num_labels), points_(num_points), values_(num_labels * num_points, 0.0) {}

  std::size_t num_labels() const { return labels_; }
  /// n + 1.
  std::size_t num_points() const { return points_; }

  double& at(std::size_t y, std::size_t i) { return values_[y * points_ + i]; }
  double at(std::size_t y, std::size_t i) const { return values_[y * points_ + i]; }
  std::span<const double> row(std::size_t y) const {
    return std::span<const double>(values_).subspan(y * points_, points_);
  }
  double test_score(std::size_t y) const { return at(y, points_ - 1); }

 private:
  std::size_t labels_ = 0;
  std::size_t points_ = 0;
  std::vector<double> values_;
};

/// Full CP: label y is admitted iff its test score is no greater than the
/// conformal quantile of its own augmented row.
inline PredictionSet fcp_predict(const ScoreMatrix& scores, double alpha) {
  if (scores.num_labels() == 0 || scores.num_points() == 0) {
    throw std::invalid_argument("fcp_predict: empty score matrix");
  }
  PredictionSet set;
  for (std::size_t y = 0; y < scores.num_labels(); ++y) {
    const auto row = scores.row(y);
    const double q = conformal_quantile(std::vector<double>(row.begin(), row.end()), alpha);
    const double s = scores.test_score(y);
    set.thresholds.push_back(q);
    set.test_scores.push_back(s);
    if (s <= q) set.members.push_back(static_cast<int>(y));
  }
  return set;
}

}  // namespace icfcp::cp
