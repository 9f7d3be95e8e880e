// SPDX-License-Identifier: Apache-2.0
//
// Classical full CP with actual refitting per candidate label, using small
// order-free predictors. Serves as ground truth for fcp_predict and for the
// in-context route.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <vector>

#include "icfcp/cp/conformal.hpp"

namespace icfcp::cp {

template <class P>
concept TrainablePredictor = requires(const P& p, const Dataset& d, const Point& x) {
  { p.num_classes() } -> std::convertible_to<std::size_t>;
  { p.fit(d).predict(x) } -> std::convertible_to<std::vector<double>>;
};

/// Laplace-smoothed label frequencies, optionally kept separately per
/// quadrant of the first two input coordinates.
class FrequencyPredictor {
 public:
  explicit FrequencyPredictor(std::size_t num_classes, bool per_quadrant = false)
      : classes_(num_classes), per_quadrant_(per_quadrant) {}

  std::size_t num_classes() const { return classes_; }

  class Fitted {
   public:
    std::vector<double> predict(const Point& x) const {
      const std::size_t b = bin(x);
      std::vector<double> p(classes_);
      double total = 0.0;
      for (std::size_t y = 0; y < classes_; ++y) total += counts_[b * classes_ + y] + 1.0;
      for (std::size_t y = 0; y < classes_; ++y) p[y] = (counts_[b * classes_ + y] + 1.0) / total;
      return p;
    }

   private:
    friend class FrequencyPredictor;
    std::size_t bin(const Point& x) const {
      if (!per_quadrant_ || x.size() < 2) return 0;
      return (x[0] >= 0.0 ? 1u : 0u) + (x[1] >= 0.0 ? 2u : 0u);
    }
    std::size_t classes_ = 0;
    bool per_quadrant_ = false;
    std::vector<double> counts_;
  };

  Fitted fit(const Dataset& data) const {
    Fitted f;
    f.classes_ = classes_;
    f.per_quadrant_ = per_quadrant_;
    f.counts_.assign((per_quadrant_ ? 4 : 1) * classes_, 0.0);
    for (const auto& p : data) {
      check_label(p.y, classes_);
      f.counts_[f.bin(p.x) * classes_ + static_cast<std::size_t>(p.y)] += 1.0;
    }
    return f;
  }

 private:
  std::size_t classes_;
  bool per_quadrant_;
};

/// Softmax over negative squared distances to class means; each mean is
/// shrunk toward the origin by one pseudo-observation.
class CentroidPredictor {
 public:
  explicit CentroidPredictor(std::size_t num_classes, double temperature = 1.0)
      : classes_(num_classes), temperature_(temperature) {}

  std::size_t num_classes() const { return classes_; }

  class Fitted {
   public:
    std::vector<double> predict(const Point& x) const {
      std::vector<double> logits(means_.size());
      for (std::size_t y = 0; y < means_.size(); ++y) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) d2 += (x[j] - means_[y][j]) * (x[j] - means_[y][j]);
        logits[y] = -d2 / temperature_;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (auto& l : logits) l /= z;
      return logits;
    }

   private:
    friend class CentroidPredictor;
    std::vector<Point> means_;
    double temperature_ = 1.0;
  };

  Fitted fit(const Dataset& data) const {
    Fitted f;
    f.temperature_ = temperature_;
    const std::size_t dim = data.empty() ? 0 : data.front().x.size();
    f.means_.assign(classes_, Point(dim, 0.0));
    std::vector<double> counts(classes_, 1.0);
    for (const auto& p : data) {
      check_label(p.y, classes_);
      const auto y = static_cast<std::size_t>(p.y);
      for (std::size_t j = 0; j < dim; ++j) f.means_[y][j] += p.x[j];
      counts[y] += 1.0;
    }
    for (std::size_t y = 0; y < classes_; ++y)
      for (auto& v : f.means_[y]) v /= counts[y];
    return f;
  }

 private:
  std::size_t classes_;
  double temperature_;
};

/// Score matrix from refitting the predictor on each augmented dataset D ∪ {(x, y)}.
template <TrainablePredictor P>
ScoreMatrix fcp_refit_scores(const P& predictor, const Dataset& data, const Point& x_test) {
  const std::size_t K = predictor.num_classes(), n = data.size();
  ScoreMatrix s(K, n + 1);
  Dataset augmented = data;
  augmented.push_back({x_test, 0});
  for (std::size_t y = 0; y < K; ++y) {
    augmented.back().y = static_cast<int>(y);
    const auto model = predictor.fit(augmented);
    for (std::size_t i = 0; i <= n; ++i) {
      s.at(y, i) = ncs_logloss(model.predict(augmented[i].x), augmented[i].y);
    }
  }
  return s;
}

/// Full CP executed from its definition: refit per candidate label, then admit
/// y when fewer than ⌈(1−α)(n+1)⌉ augmented scores lie strictly below the
/// test score (equivalent to test score ≤ that order statistic).
template <TrainablePredictor P>
PredictionSet fcp_retrain_oracle(const P& predictor, const Dataset& data, const Point& x_test,
                                 double alpha) {
  const std::size_t K = predictor.num_classes(), n1 = data.size() + 1;
  const std::size_t k = quantile_rank(n1, alpha);
  PredictionSet set;
  Dataset augmented = data;
  augmented.push_back({x_test, 0});
  for (std::size_t y = 0; y < K; ++y) {
    augmented.back().y = static_cast<int>(y);
    const auto model = predictor.fit(augmented);
    std::vector<double> scores(n1);
    for (std::size_t i = 0; i < n1; ++i) {
      scores[i] = ncs_logloss(model.predict(augmented[i].x), augmented[i].y);
    }
    const double test = scores.back();
    const auto below = static_cast<std::size_t>(
        std::count_if(scores.begin(), scores.end(), [&](double s) { return s < test; }));
    std::vector<double> tmp = scores;
    std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(k - 1), tmp.end());
    set.thresholds.push_back(tmp[k - 1]);
    set.test_scores.push_back(test);
    if (below < k) set.members.push_back(static_cast<int>(y));
  }
  return set;
}

}  // namespace icfcp::cp
