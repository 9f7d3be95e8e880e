// SPDX-License-Identifier: Apache-2.0
//
// Brute-force equivalence suites behind `icfcp oracle-check`.

#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "icfcp/cp/conformal.hpp"
#include "icfcp/cp/retrain_oracle.hpp"
#include "icfcp/model/transformer.hpp"
#include "icfcp/soft_cp/soft_cp.hpp"
#include "icfcp/tasks/stream.hpp"

namespace icfcp::bench {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::size_t trials = 0;
  std::size_t compared = 0;   // trials not skipped for near-ties
  std::size_t mismatches = 0;
  double metric = 0.0;        // suite-specific: max deviation or coverage
  std::string detail;
};

namespace detail {

inline constexpr double kTieTol = 1e-9;

inline bool near_tie(const cp::PredictionSet& s) {
  for (std::size_t y = 0; y < s.thresholds.size(); ++y)
    if (std::abs(s.test_scores[y] - s.thresholds[y]) < kTieTol) return true;
  return false;
}

inline std::string sci(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

inline Dataset gaussian_points(const tasks::GaussianTaskParams& task, std::size_t n, tasks::Rng& rng) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) d.push_back(tasks::sample_gaussian_point(task, rng));
  return d;
}

}  // namespace detail

/// fcp_predict on refit scores against classical per-label retraining.
/// Random instances with K in 2..4 and n in 1..8, two predictor families.
inline SuiteResult check_fcp_oracle(std::uint64_t seed, std::size_t trials = 1000) {
  SuiteResult res;
  res.name = "fcp_retrain_oracle";
  res.trials = trials;
  tasks::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> kd(2, 4), nd(1, 8);
  std::uniform_real_distribution<double> ad(0.05, 0.5);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t K = kd(rng), n = nd(rng);
    const tasks::GaussianSpec spec{.num_classes = K, .box = 2.0, .sigma = 0.8, .min_separation = 0.5};
    const auto task = tasks::sample_gaussian_task(rng, spec);
    const auto d = detail::gaussian_points(task, n, rng);
    const auto x = tasks::sample_gaussian_point(task, rng).x;
    const double alpha = ad(rng);
    auto run = [&](const auto& pred) {
      const auto oracle = cp::fcp_retrain_oracle(pred, d, x, alpha);
      const auto fast = cp::fcp_predict(cp::fcp_refit_scores(pred, d, x), alpha);
      if (detail::near_tie(oracle) || detail::near_tie(fast)) return true;
      return oracle.members == fast.members;
    };
    // Alternate predictors so both order-free families are exercised.
    const bool ok = trial % 2 == 0 ? run(cp::CentroidPredictor(K, 0.7)) : run(cp::FrequencyPredictor(K, true));
    ++res.compared;
    res.mismatches += !ok;
  }
  res.passed = res.mismatches == 0;
  res.metric = static_cast<double>(res.mismatches);
  res.detail = std::to_string(res.compared) + " compared, " + std::to_string(res.mismatches) + " mismatches";
  return res;
}

/// Soft indicators (> 0.5) at temperature `temp` against hard FCP sets on
/// random exponential score matrices; near-ties are skipped.
inline SuiteResult check_soft_hard(std::uint64_t seed, std::size_t trials = 1000, double temp = 1e-5) {
  SuiteResult res;
  res.name = "soft_to_hard";
  res.trials = trials;
  tasks::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> kd(1, 4), nd(1, 8);
  std::uniform_real_distribution<double> ad(0.05, 0.5);
  std::exponential_distribution<double> ed(1.0);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t K = kd(rng), n1 = nd(rng) + 1;
    const double alpha = ad(rng);
    cp::ScoreMatrix s(K, n1);
    for (std::size_t y = 0; y < K; ++y)
      for (std::size_t i = 0; i < n1; ++i) s.at(y, i) = ed(rng);
    const auto hard = cp::fcp_predict(s, alpha);
    std::vector<int> soft_members;
    bool tie = false;
    for (std::size_t y = 0; y < K; ++y) {
      const double tau = soft::soft_quantile(s.row(y), alpha, temp);
      const double test = s.test_score(y);
      tie = tie || std::abs(test - tau) < detail::kTieTol || std::abs(test - hard.thresholds[y]) < detail::kTieTol;
      if (soft::soft_indicator(test, tau, temp) > 0.5) soft_members.push_back(static_cast<int>(y));
    }
    if (tie) continue;
    ++res.compared;
    res.mismatches += soft_members != hard.members;
  }
  // Ties are rare with continuous scores; demand that most trials count.
  res.passed = res.mismatches == 0 && res.compared * 2 > trials;
  res.metric = static_cast<double>(res.mismatches);
  res.detail = std::to_string(res.compared) + " compared, " + std::to_string(res.mismatches) + " mismatches";
  return res;
}

/// Largest change in any predictive probability when the context is shuffled,
/// over random weights (biases and gains perturbed off their init) and QPSK episodes.
inline SuiteResult check_permutation(std::uint64_t seed, const model::ModelConfig& cfg, std::size_t trials = 100,
                                     double tol = 1e-10) {
  SuiteResult res;
  res.name = "permutation_invariance";
  res.trials = trials;
  tasks::Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.2);
  std::uniform_int_distribution<std::size_t> nd(2, 19);
  const tasks::TaskStream stream(tasks::TaskFamily::qpsk, seed, tasks::StreamDomain::test);
  num::NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    auto w = model::TransformerWeights<double>::init(cfg, rng(), false);
    for (auto& p : w.parameters())
      for (auto& v : p.mutable_data()) v += noise(rng);
    const std::size_t n = nd(rng);
    const auto pts = stream.draw(trial, 0, n + 3);
    Dataset ctx(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<Point> q;
    for (std::size_t i = n; i < pts.size(); ++i) q.push_back(pts[i].x);
    const auto a = model::to_probabilities(model::forward_context_query(w, ctx, std::span<const Point>(q)));
    std::shuffle(ctx.begin(), ctx.end(), rng);
    const auto b = model::to_probabilities(model::forward_context_query(w, ctx, std::span<const Point>(q)));
    double dev = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t y = 0; y < a[i].size(); ++y) dev = std::max(dev, std::abs(a[i][y] - b[i][y]));
    worst = std::max(worst, dev);
    ++res.compared;
    res.mismatches += dev > tol;
  }
  res.passed = res.mismatches == 0;
  res.metric = worst;
  res.detail = "max |dp| = " + detail::sci(worst) + " over " + std::to_string(trials) + " shuffles";
  return res;
}

/// Empirical coverage of classical full CP on exchangeable QPSK draws; fails
/// below 1 − α − 3σ.
inline SuiteResult check_coverage_floor(std::uint64_t seed, double alpha = 0.1, std::size_t draws = 2000,
                                        std::size_t n = 19) {
  SuiteResult res;
  res.name = "coverage_floor";
  res.trials = draws;
  const tasks::TaskStream stream(tasks::TaskFamily::qpsk, seed, tasks::StreamDomain::test);
  const cp::CentroidPredictor pred(4, 1.0);
  std::size_t covered = 0;
  for (std::size_t t = 0; t < draws; ++t) {
    const auto pts = stream.draw(t, 0, n + 1);
    const Dataset d(pts.begin(), pts.end() - 1);
    covered += cp::fcp_retrain_oracle(pred, d, pts.back().x, alpha).contains(pts.back().y);
  }
  const double cov = static_cast<double>(covered) / static_cast<double>(draws);
  const double floor = 1.0 - alpha - 3.0 * std::sqrt(alpha * (1.0 - alpha) / static_cast<double>(draws));
  res.compared = draws;
  res.passed = cov >= floor;
  res.metric = cov;
  res.detail = "coverage " + std::to_string(cov) + ", floor " + std::to_string(floor);
  return res;
}

inline std::vector<SuiteResult> run_oracle_checks(std::uint64_t seed, const model::ModelConfig& cfg) {
  return {check_fcp_oracle(seed), check_soft_hard(seed + 1), check_permutation(seed + 2, cfg),
          check_coverage_floor(seed + 3)};
}

}  // namespace icfcp::bench
