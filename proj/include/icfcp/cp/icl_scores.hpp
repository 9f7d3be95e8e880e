// SPDX-License-Identifier: Apache-2.0
//
// Non-conformity scores produced by the in-context model, for both the full
// CP route (one augmented forward pass per candidate label) and the split CP
// route (one pass over context, calibration and test queries).

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "icfcp/cp/conformal.hpp"
#include "icfcp/model/transformer.hpp"

namespace icfcp::cp {

/// Work counters. `distributions` counts predictive distributions produced at
/// query positions; `context_encodings` counts labeled points fed to the model
/// as context. Their sum matches the "# prediction evals" complexity column.
struct EvalCounter {
  std::atomic<std::uint64_t> distributions{0};
  std::atomic<std::uint64_t> context_encodings{0};

  void add(std::uint64_t dist, std::uint64_t ctx) {
    distributions.fetch_add(dist, std::memory_order_relaxed);
    context_encodings.fetch_add(ctx, std::memory_order_relaxed);
  }
  std::uint64_t total() const { return distributions.load() + context_encodings.load(); }
};

inline double score_floor() { return -std::log(kProbFloor); }

/// Differentiable K × (n+1) FCP score matrix for dataset `data` and test input.
template <class T>
num::Tensor<T> fcp_score_tensor(const model::TransformerWeights<T>& w, const Dataset& data,
                                const Point& x_test) {
  if (data.empty()) throw std::invalid_argument("fcp scores need at least one data point");
  const std::size_t K = w.config.num_classes, n = data.size();
  Dataset augmented = data;
  augmented.push_back({x_test, 0});
  std::vector<std::size_t> idx(n + 1);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * K + static_cast<std::size_t>(data[i].y);
  std::vector<num::Tensor<T>> rows;
  rows.reserve(K);
  for (std::size_t y = 0; y < K; ++y) {
    augmented.back().y = static_cast<int>(y);
    idx[n] = n * K + y;
    auto logp = model::forward_augmented(w, augmented);
    rows.push_back(num::minimum(num::neg(num::gather(logp, idx)), static_cast<T>(score_floor())));
  }
  return num::concat_rows(rows);
}

/// Scores for full CP by running K copies of the model on D ∪ {(x_test, y)}.
template <class T>
ScoreMatrix fcp_scores_from_icl(const model::TransformerWeights<T>& w, const Dataset& data,
                                const Point& x_test, EvalCounter* counter = nullptr) {
  num::NoGradGuard no_grad;
  const auto t = fcp_score_tensor(w, data, x_test);
  const std::size_t K = w.config.num_classes, n1 = data.size() + 1;
  ScoreMatrix s(K, n1);
  for (std::size_t y = 0; y < K; ++y)
    for (std::size_t i = 0; i < n1; ++i) s.at(y, i) = static_cast<double>(t.at(y, i));
  if (counter) counter->add(K * n1, K * n1);
  return s;
}

template <class T>
struct ScpScoreTensors {
  num::Tensor<T> calibration;  // [1 × m] scores at the true calibration labels
  num::Tensor<T> tests;        // [r × K] scores for every candidate label
};

/// Split CP scores: model conditioned on `context`, queried on calibration and test inputs.
template <class T>
ScpScoreTensors<T> scp_score_tensors(const model::TransformerWeights<T>& w, const Dataset& context,
                                     const Dataset& calibration, std::span<const Point> tests) {
  const std::size_t K = w.config.num_classes, m = calibration.size();
  std::vector<Point> queries;
  queries.reserve(m + tests.size());
  for (const auto& p : calibration) queries.push_back(p.x);
  queries.insert(queries.end(), tests.begin(), tests.end());
  auto logp = model::forward_context_query(w, context, std::span<const Point>(queries));
  const T floor = static_cast<T>(score_floor());
  std::vector<std::size_t> idx(m);
  for (std::size_t j = 0; j < m; ++j) idx[j] = j * K + static_cast<std::size_t>(calibration[j].y);
  ScpScoreTensors<T> out;
  out.calibration = num::minimum(num::neg(num::gather(logp, idx)), floor);
  if (!tests.empty()) {
    out.tests = num::minimum(num::neg(num::slice_rows(logp, m, tests.size())), floor);
  }
  return out;
}

struct ScpScores {
  std::vector<double> calibration;
  std::vector<std::vector<double>> tests;
};

template <class T>
ScpScores scp_scores_from_icl(const model::TransformerWeights<T>& w, const Dataset& context,
                              const Dataset& calibration, std::span<const Point> tests,
                              EvalCounter* counter = nullptr) {
  num::NoGradGuard no_grad;
  const auto t = scp_score_tensors(w, context, calibration, tests);
  ScpScores out;
  for (const auto v : t.calibration.data()) out.calibration.push_back(static_cast<double>(v));
  for (std::size_t r = 0; r < tests.size(); ++r) {
    out.tests.emplace_back();
    for (std::size_t y = 0; y < w.config.num_classes; ++y)
      out.tests.back().push_back(static_cast<double>(t.tests.at(r, y)));
  }
  if (counter) counter->add(calibration.size() + tests.size(), context.size());
  return out;
}

}  // namespace icfcp::cp
