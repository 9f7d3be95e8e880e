// SPDX-License-Identifier: Apache-2.0
//
// Meta-training over task streams.
//
// An epoch visits tasks_per_epoch × realizations_per_task episodes in a
// seeded shuffled order, accumulating gradients over batch_size episodes per
// Adam step. The learning rate follows the cosine schedule per epoch. After
// each epoch the validation metric is computed and the best weights kept.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "icfcp/cp/icl_scores.hpp"
#include "icfcp/model/transformer.hpp"
#include "icfcp/soft_cp/soft_cp.hpp"
#include "icfcp/tasks/stream.hpp"
#include "icfcp/train/optim.hpp"

namespace icfcp::train {

enum class Objective { log_loss, cp_aware_fcp, cp_aware_scp };

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::log_loss: return "log_loss";
    case Objective::cp_aware_fcp: return "cp_aware_fcp";
    case Objective::cp_aware_scp: return "cp_aware_scp";
  }
  return "?";
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "log_loss") return Objective::log_loss;
  if (s == "cp_aware_fcp") return Objective::cp_aware_fcp;
  if (s == "cp_aware_scp") return Objective::cp_aware_scp;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t tasks_per_epoch = 256;
  std::size_t realizations_per_task = 50;
  std::size_t batch_size = 32;
  double lr_init = 2e-4;
  double lr_min = 2e-5;
  std::size_t cosine_period = 50;
  std::uint64_t seed = 0;
  Objective objective = Objective::log_loss;
  soft::SoftCpHyper hyper;
  std::size_t n = 19;
  std::size_t l = 10;
  std::size_t m = 9;
  std::size_t val_tasks = 256;
  std::size_t val_realizations = 50;

  void validate() const {
    if (l + m != n) throw std::invalid_argument("TrainConfig: l + m must equal n");
    if (l == 0 || m == 0) throw std::invalid_argument("TrainConfig: l and m must be positive");
    if (!(lr_min < lr_init)) throw std::invalid_argument("TrainConfig: lr_min must be below lr_init");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    hyper.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double loss_ineff = 0.0;
  double loss_class = 0.0;
  double val_metric = 0.0;
  bool best = false;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},           {"lr", r.lr},
          {"loss", r.loss},             {"loss_ineff", r.loss_ineff},
          {"loss_class", r.loss_class}, {"val_metric", r.val_metric},
          {"best", r.best}};
}

inline void write_log(std::ostream& os, const std::vector<EpochRecord>& log) {
  for (const auto& r : log) os << to_json(r).dump() << '\n';
}

template <class W>
struct TrainResult {
  W weights;
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_metric = std::numeric_limits<double>::infinity();
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

struct EpisodeLoss {
  double loss = 0.0, ineff = 0.0, cls = 0.0;
};

template <class T>
num::Tensor<T> episode_loss(const model::TransformerWeights<T>& w, const Episode& ep, const TrainConfig& cfg,
                            EpisodeLoss& parts) {
  switch (cfg.objective) {
    case Objective::log_loss: {
      const Point q[] = {ep.query_x};
      const auto logp = model::forward_context_query(w, ep.context, std::span<const Point>(q));
      auto loss = num::neg(num::reshape(num::gather(logp, {static_cast<std::size_t>(ep.query_y)}), {1}));
      parts.loss = static_cast<double>(loss.item());
      return loss;
    }
    case Objective::cp_aware_fcp: {
      const std::vector<num::Tensor<T>> s{cp::fcp_score_tensor(w, ep.context, ep.query_x)};
      const int y[] = {ep.query_y};
      const auto ineff = soft::loss_ineff(s, cfg.hyper);
      const auto cls = soft::loss_class(s, std::span<const int>(y), cfg.hyper);
      parts.ineff = static_cast<double>(ineff.item());
      parts.cls = static_cast<double>(cls.item());
      auto loss = num::add(ineff, num::scale(cls, static_cast<T>(cfg.hyper.lambda)));
      parts.loss = static_cast<double>(loss.item());
      return loss;
    }
    case Objective::cp_aware_scp: {
      const Dataset ctx(ep.context.begin(), ep.context.begin() + static_cast<std::ptrdiff_t>(cfg.l));
      const Dataset cal(ep.context.begin() + static_cast<std::ptrdiff_t>(cfg.l), ep.context.end());
      const Point q[] = {ep.query_x};
      const auto st = cp::scp_score_tensors(w, ctx, cal, std::span<const Point>(q));
      soft::SoftLossTerms terms;
      auto loss = soft::loss_scp_soft(st.calibration, st.tests, ep.query_y, cfg.hyper, &terms);
      parts.ineff = terms.ineff;
      parts.cls = terms.cls;
      parts.loss = static_cast<double>(loss.item());
      return loss;
    }
  }
  throw std::logic_error("unreachable objective");
}

inline std::vector<std::pair<std::size_t, std::size_t>> shuffled_pairs(const TrainConfig& cfg, std::size_t epoch) {
  std::vector<std::pair<std::size_t, std::size_t>> order;
  order.reserve(cfg.tasks_per_epoch * cfg.realizations_per_task);
  for (std::size_t t = 0; t < cfg.tasks_per_epoch; ++t)
    for (std::size_t r = 0; r < cfg.realizations_per_task; ++r) order.emplace_back(t, r);
  tasks::Rng rng(tasks::derive_seed(cfg.seed, {static_cast<std::uint64_t>(tasks::StreamDomain::shuffle), epoch}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace detail

/// Validation metric: mean log-loss for log_loss training, mean soft set size
/// at the configured α for the CP-aware objectives. Lower is better.
template <class T>
double validation_metric(const model::TransformerWeights<T>& w, const TrainConfig& cfg,
                         const tasks::TaskStream& val) {
  num::NoGradGuard no_grad;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < cfg.val_tasks; ++t) {
    for (std::size_t r = 0; r < cfg.val_realizations; ++r) {
      const auto ep = val.episode(t, r, cfg.n);
      detail::EpisodeLoss parts;
      detail::episode_loss(w, ep, cfg, parts);
      total += cfg.objective == Objective::log_loss ? parts.loss : parts.ineff;
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

/// Meta-trains the in-context model. Starts from `init` when given, otherwise
/// from a fresh seeded initialization.
template <class T>
TrainResult<model::TransformerWeights<T>> train(const TrainConfig& cfg, const model::ModelConfig& mcfg,
                                                const tasks::TaskStream& train_stream,
                                                const tasks::TaskStream& val_stream,
                                                const model::TransformerWeights<T>* init = nullptr,
                                                const EpochCallback& on_epoch = {}) {
  cfg.validate();
  auto w = init ? init->clone(true)
                : model::TransformerWeights<T>::init(
                      mcfg, tasks::derive_seed(cfg.seed, {static_cast<std::uint64_t>(tasks::StreamDomain::model_init)}));
  TrainResult<model::TransformerWeights<T>> result{w.clone(true), {}, 0, std::numeric_limits<double>::infinity()};
  auto params = w.parameters();
  AdamState adam;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = cosine_lr(epoch, cfg.lr_init, cfg.lr_min, cfg.cosine_period);
    const auto order = detail::shuffled_pairs(cfg, epoch);
    std::size_t in_batch = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto [t, r] = order[k];
      const auto ep = train_stream.episode(t, r, cfg.n);
      detail::EpisodeLoss parts;
      try {
        const auto loss = detail::episode_loss(w, ep, cfg, parts);
        if (!std::isfinite(parts.loss)) throw num::NumericError("non-finite loss");
        num::backward(loss);
      } catch (const num::NumericError& e) {
        throw num::NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", episode " +
                                std::to_string(k) + " (task " + std::to_string(t) + ", realization " +
                                std::to_string(r) + "): " + e.what());
      }
      rec.loss += parts.loss;
      rec.loss_ineff += parts.ineff;
      rec.loss_class += parts.cls;
      if (++in_batch == cfg.batch_size || k + 1 == order.size()) {
        adam_step(params, adam, rec.lr, 1.0 / static_cast<double>(in_batch));
        w.zero_grad();
        in_batch = 0;
      }
    }
    const double denom = std::max<std::size_t>(order.size(), 1);
    rec.loss /= denom;
    rec.loss_ineff /= denom;
    rec.loss_class /= denom;
    rec.val_metric = validation_metric(w, cfg, val_stream);
    if (rec.val_metric < result.best_metric) {
      result.best_metric = rec.val_metric;
      result.best_epoch = rec.epoch;
      result.weights = w.clone(true);
      rec.best = true;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

/// Joint learning: one MLP fit with log-loss on every labeled point pooled
/// across training tasks; validated by mean log-loss on the validation stream.
template <class T>
TrainResult<model::MlpWeights<T>> train_jl(const TrainConfig& cfg, const model::MlpConfig& mcfg,
                                           const tasks::TaskStream& train_stream,
                                           const tasks::TaskStream& val_stream,
                                           const EpochCallback& on_epoch = {}) {
  cfg.validate();
  auto w = model::MlpWeights<T>::init(
      mcfg, tasks::derive_seed(cfg.seed, {static_cast<std::uint64_t>(tasks::StreamDomain::model_init)}));
  TrainResult<model::MlpWeights<T>> result{w.clone(true), {}, 0, std::numeric_limits<double>::infinity()};
  auto params = w.parameters();
  AdamState adam;

  auto batch_loss = [&](const std::vector<LabeledPoint>& pts) {
    std::vector<Point> xs;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      xs.push_back(pts[i].x);
      idx.push_back(i * mcfg.num_classes + static_cast<std::size_t>(pts[i].y));
    }
    const auto logp = model::mlp_logprobs(w, std::span<const Point>(xs));
    return num::neg(num::mean(num::gather(logp, idx)));
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = cosine_lr(epoch, cfg.lr_init, cfg.lr_min, cfg.cosine_period);
    const auto order = detail::shuffled_pairs(cfg, epoch);
    std::vector<LabeledPoint> pooled;
    std::size_t batches = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto [t, r] = order[k];
      auto pts = train_stream.draw(t, r, cfg.n + 1);
      pooled.insert(pooled.end(), pts.begin(), pts.end());
      if ((k + 1) % cfg.batch_size == 0 || k + 1 == order.size()) {
        const auto loss = batch_loss(pooled);
        num::backward(loss);
        adam_step(params, adam, rec.lr);
        w.zero_grad();
        rec.loss += static_cast<double>(loss.item());
        ++batches;
        pooled.clear();
      }
    }
    rec.loss /= static_cast<double>(std::max<std::size_t>(batches, 1));
    {
      num::NoGradGuard no_grad;
      double total = 0.0;
      std::size_t count = 0;
      for (std::size_t t = 0; t < cfg.val_tasks; ++t) {
        for (std::size_t r = 0; r < cfg.val_realizations; ++r) {
          const auto pts = val_stream.draw(t, r, cfg.n + 1);
          total += static_cast<double>(batch_loss(pts).item());
          ++count;
        }
      }
      rec.val_metric = count ? total / static_cast<double>(count) : 0.0;
    }
    if (rec.val_metric < result.best_metric) {
      result.best_metric = rec.val_metric;
      result.best_epoch = rec.epoch;
      result.weights = w.clone(true);
      rec.best = true;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace icfcp::train
