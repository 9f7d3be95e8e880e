// SPDX-License-Identifier: Apache-2.0
//
// Runs one CP scheme over the test stream. Every realization draws n labeled
// points and r test inputs from one test task; SCP splits the n points into
// l context and m calibration points, FCP uses all of them.

#pragma once

#include <atomic>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

#include "icfcp/bench/config.hpp"
#include "icfcp/bench/report.hpp"
#include "icfcp/cp/icl_scores.hpp"
#include "icfcp/model/checkpoint.hpp"

namespace icfcp::bench {

class SchemeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Tally {
  std::size_t points = 0, covered = 0, size = 0;
  void add(const cp::PredictionSet& set, int y) {
    ++points;
    covered += set.contains(y);
    size += set.size();
  }
};

inline Dataset slice(const Dataset& d, std::size_t from, std::size_t count) {
  return Dataset(d.begin() + static_cast<std::ptrdiff_t>(from), d.begin() + static_cast<std::ptrdiff_t>(from + count));
}

/// Calls fn(t) for every task on `threads` workers. Results land by index, so
/// the outcome does not depend on scheduling.
template <class Fn>
void for_each_task(std::size_t tasks, std::size_t threads, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(tasks);
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < tasks;) {
      try {
        fn(t);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const std::size_t nthreads = std::min(threads, tasks);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Evaluates `scheme` with the model in `ck` on the configured test stream.
/// Throws SchemeMismatch when the checkpoint was trained for a different scheme.
inline EvalReport run_eval(Scheme scheme, const model::Checkpoint& ck, const BenchConfig& cfg) {
  cfg.validate();
  const bool jl = scheme == Scheme::jl_scp;
  if (ck.kind != (jl ? "mlp" : "transformer") || ck.objective != required_objective(scheme)) {
    throw SchemeMismatch(std::string(to_string(scheme)) + " needs a " + (jl ? "mlp" : "transformer") +
                         " checkpoint trained with " + required_objective(scheme) + ", got a " + ck.kind +
                         " trained with " + ck.objective);
  }

  const auto& e = cfg.eval;
  const std::size_t n = cfg.train.n, l = cfg.train.l, m = cfg.train.m, R = e.test_inputs;
  const tasks::TaskStream stream(tasks::TaskFamily::qpsk, cfg.seeds.test, tasks::StreamDomain::test);

  EvalReport rep;
  rep.scheme = scheme;
  rep.alpha = e.alpha;
  rep.n = n;
  rep.l = l;
  rep.m = m;
  rep.tasks = e.test_tasks;
  rep.realizations = e.realizations;
  rep.test_inputs = R;
  rep.test_seed = cfg.seeds.test;
  rep.checkpoint_seed = ck.seed;
  rep.checkpoint_objective = ck.objective;
  rep.config_hash = config_hash(cfg);
  rep.per_task.resize(e.test_tasks);

  cp::EvalCounter counter;
  std::optional<model::TransformerWeights<double>> icl;
  std::optional<model::MlpWeights<double>> mlp;
  if (jl) {
    mlp = model::mlp_from<double>(ck, false);
    rep.num_classes = mlp->config.num_classes;
  } else {
    icl = model::transformer_from<double>(ck, false);
    rep.num_classes = icl->config.num_classes;
  }
  if (rep.num_classes != stream.num_classes()) {
    throw SchemeMismatch("checkpoint predicts " + std::to_string(rep.num_classes) + " classes, test tasks have " +
                         std::to_string(stream.num_classes()));
  }

  detail::for_each_task(e.test_tasks, e.threads, [&](std::size_t t) {
    num::NoGradGuard no_grad;  // thread-local, so set per worker
    detail::Tally tally;
    for (std::size_t r = 0; r < e.realizations; ++r) {
      const auto pts = stream.draw(t, r, n + R);
      const Dataset data = detail::slice(pts, 0, n);
      std::vector<Point> xs;
      for (std::size_t i = n; i < n + R; ++i) xs.push_back(pts[i].x);

      if (jl) {
        const bool split = e.jl_calibration == JlCalibration::split;
        const Dataset cal = split ? detail::slice(data, l, m) : data;
        std::vector<Point> q;
        for (const auto& p : cal) q.push_back(p.x);
        q.insert(q.end(), xs.begin(), xs.end());
        const auto probs = model::to_probabilities(model::mlp_logprobs(*mlp, std::span<const Point>(q)));
        std::vector<double> cal_scores;
        for (std::size_t j = 0; j < cal.size(); ++j) cal_scores.push_back(cp::ncs_logloss(probs[j], cal[j].y));
        const double thr = cp::scp_calibrate(cal_scores, e.alpha);
        for (std::size_t k = 0; k < R; ++k) {
          std::vector<double> s;
          for (std::size_t y = 0; y < rep.num_classes; ++y)
            s.push_back(cp::ncs_logloss(probs[cal.size() + k], static_cast<int>(y)));
          tally.add(cp::scp_predict(thr, s), pts[n + k].y);
        }
        counter.add(cal.size() + R, 0);
      } else if (is_fcp(scheme)) {
        for (std::size_t k = 0; k < R; ++k) {
          const auto scores = cp::fcp_scores_from_icl(*icl, data, xs[k], &counter);
          tally.add(cp::fcp_predict(scores, e.alpha), pts[n + k].y);
        }
      } else {
        const auto ctx = detail::slice(data, 0, l), cal = detail::slice(data, l, m);
        const auto sc = cp::scp_scores_from_icl(*icl, ctx, cal, std::span<const Point>(xs), &counter);
        const double thr = cp::scp_calibrate(sc.calibration, e.alpha);
        for (std::size_t k = 0; k < R; ++k) tally.add(cp::scp_predict(thr, sc.tests[k]), pts[n + k].y);
      }
    }
    rep.per_task[t] = {t, tally.points, tally.covered, tally.size};
  });

  rep.distributions = counter.distributions.load();
  rep.context_encodings = counter.context_encodings.load();
  return rep;
}

/// Prediction evaluations per realization implied by the scheme's structure.
inline std::uint64_t expected_evals_per_realization(Scheme s, const EvalReport& r, JlCalibration jl_cal) {
  const std::uint64_t K = r.num_classes, n = r.n, m = r.m, l = r.l, R = r.test_inputs;
  switch (s) {
    case Scheme::jl_scp: return (jl_cal == JlCalibration::all ? n : m) + R;
    case Scheme::icl_scp:
    case Scheme::e_icl_scp: return m + R + l;
    case Scheme::icl_fcp:
    case Scheme::e_icl_fcp: return 2 * K * R * (n + 1);
  }
  return 0;
}

}  // namespace icfcp::bench
