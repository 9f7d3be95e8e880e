// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "icfcp/model/checkpoint.hpp"
#include "icfcp/train/trainer.hpp"

using namespace icfcp;
using train::Objective;

namespace {

const tasks::GaussianSpec kToy{.num_classes = 4, .box = 5.0, .sigma = 0.3, .min_separation = 10.0};

model::ModelConfig toy_model() {
  return {.num_layers = 1, .model_dim = 16, .num_heads = 2, .ffn_dim = 32, .num_classes = 4, .input_dim = 2};
}

train::TrainConfig toy_config(Objective obj, std::size_t n) {
  train::TrainConfig c;
  c.epochs = 30;
  c.tasks_per_epoch = 512;
  c.realizations_per_task = 1;
  c.batch_size = 16;
  c.lr_init = 3e-3;
  c.lr_min = 3e-4;
  c.cosine_period = 30;
  c.seed = 1;
  c.objective = obj;
  c.n = n;
  c.l = n / 2;
  c.m = n - c.l;
  c.val_tasks = 32;
  c.val_realizations = 2;
  return c;
}

tasks::TaskStream toy_stream(tasks::StreamDomain d) { return {tasks::TaskFamily::gaussian, 1, d, kToy}; }

double accuracy(const model::TransformerWeights<double>& w, const tasks::TaskStream& s, std::size_t n) {
  num::NoGradGuard no_grad;
  std::size_t ok = 0, total = 0;
  for (std::size_t t = 0; t < 64; ++t) {
    for (std::size_t r = 0; r < 4; ++r) {
      const auto e = s.episode(t, r, n);
      const Point q[] = {e.query_x};
      const auto lp = model::forward_context_query(w, e.context, std::span<const Point>(q));
      std::size_t best = 0;
      for (std::size_t y = 1; y < lp.cols(); ++y)
        if (lp.at(0, y) > lp.at(0, best)) best = y;
      ok += static_cast<int>(best) == e.query_y;
      ++total;
    }
  }
  return static_cast<double>(ok) / static_cast<double>(total);
}

bool same_weights(const model::TransformerWeights<double>& a, const model::TransformerWeights<double>& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin(), pb[i].data().end())) return false;
  return true;
}

}  // namespace

TEST(Cosine, ScheduleEndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(train::cosine_lr(0, 2e-4, 2e-5, 50), 2e-4);
  EXPECT_NEAR(train::cosine_lr(25, 2e-4, 2e-5, 50), 1.1e-4, 1e-18);
  EXPECT_NEAR(train::cosine_lr(50, 2e-4, 2e-5, 50), 2e-5, 1e-18);
  EXPECT_NEAR(train::cosine_lr(500, 2e-4, 2e-5, 50), 2e-5, 1e-18);
  for (std::size_t s = 1; s <= 50; ++s)
    EXPECT_LT(train::cosine_lr(s, 2e-4, 2e-5, 50), train::cosine_lr(s - 1, 2e-4, 2e-5, 50));
}

TEST(Adam, ZeroGradientLeavesWeightsUnchanged) {
  auto w = num::Tensor<double>::from({3}, {1.0, -2.0, 0.5}, true);
  std::vector<num::Tensor<double>> params{w};
  const std::vector<double> zero(3, 0.0);
  const std::vector<std::span<const double>> grads{zero};
  train::AdamState st;
  for (int i = 0; i < 10; ++i) train::adam_step<double>(params, grads, st, 1e-2);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], -2.0);
  EXPECT_EQ(w[2], 0.5);
}

TEST(Adam, ConstantGradientStepsByLearningRate) {
  // With g fixed the bias-corrected moments are exactly g and g², so each
  // step moves by lr·|g|/(|g| + eps).
  auto w = num::Tensor<double>::from({2}, {0.0, 0.0}, true);
  std::vector<num::Tensor<double>> params{w};
  const std::vector<double> g{3.0, -0.25};
  const std::vector<std::span<const double>> grads{g};
  train::AdamState st;
  const double lr = 1e-3;
  double prev[2] = {0.0, 0.0};
  for (int i = 0; i < 200; ++i) {
    train::adam_step<double>(params, grads, st, lr);
    for (std::size_t k = 0; k < 2; ++k) {
      const double step = prev[k] - w[k];
      EXPECT_NEAR(std::abs(step), lr * std::abs(g[k]) / (std::abs(g[k]) + 1e-8), 1e-12);
      EXPECT_GT(step * g[k], 0.0);
      prev[k] = w[k];
    }
  }
}

TEST(Adam, GradScaleEqualsAveragedGradients) {
  auto a = num::Tensor<double>::from({1}, {1.0}, true), b = num::Tensor<double>::from({1}, {1.0}, true);
  std::vector<num::Tensor<double>> pa{a}, pb{b};
  const std::vector<double> sum{4.0, 6.0}, mean{2.0, 3.0};
  train::AdamState sa, sb;
  for (int i = 0; i < 2; ++i) {
    const std::vector<double> gs{sum[static_cast<std::size_t>(i)]}, gm{mean[static_cast<std::size_t>(i)]};
    train::adam_step<double>(pa, std::vector<std::span<const double>>{gs}, sa, 0.1, 0.5);
    train::adam_step<double>(pb, std::vector<std::span<const double>>{gm}, sb, 0.1);
  }
  EXPECT_DOUBLE_EQ(a[0], b[0]);
}

TEST(Config, ValidationAndObjectiveNames) {
  train::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.lr_init, 2e-4);
  EXPECT_EQ(c.lr_min, 2e-5);
  EXPECT_EQ(c.cosine_period, 50u);
  c.m = 8;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.lr_min = 1e-3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  for (const auto o : {Objective::log_loss, Objective::cp_aware_fcp, Objective::cp_aware_scp})
    EXPECT_EQ(train::objective_from_string(train::to_string(o)), o);
  EXPECT_THROW(train::objective_from_string("mse"), std::invalid_argument);
}

TEST(Train, ZeroEpochsReturnsInitialWeights) {
  auto cfg = toy_config(Objective::log_loss, 9);
  cfg.epochs = 0;
  const auto tr = toy_stream(tasks::StreamDomain::train), va = toy_stream(tasks::StreamDomain::validation);
  const auto fresh = train::train<double>(cfg, toy_model(), tr, va);
  EXPECT_TRUE(fresh.log.empty());
  const auto expect = model::TransformerWeights<double>::init(
      toy_model(), tasks::derive_seed(cfg.seed, {static_cast<std::uint64_t>(tasks::StreamDomain::model_init)}));
  EXPECT_TRUE(same_weights(fresh.weights, expect));
  const auto other = model::TransformerWeights<double>::init(toy_model(), 99);
  EXPECT_TRUE(same_weights(train::train<double>(cfg, toy_model(), tr, va, &other).weights, other));
}

TEST(Train, DeterministicGivenSeed) {
  auto cfg = toy_config(Objective::log_loss, 9);
  cfg.epochs = 2;
  cfg.tasks_per_epoch = 32;
  const auto tr = toy_stream(tasks::StreamDomain::train), va = toy_stream(tasks::StreamDomain::validation);
  const auto a = train::train<double>(cfg, toy_model(), tr, va);
  const auto b = train::train<double>(cfg, toy_model(), tr, va);
  EXPECT_TRUE(same_weights(a.weights, b.weights));
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.log[1].loss, b.log[1].loss);
  std::ostringstream os;
  train::write_log(os, a.log);
  const auto text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_NE(text.find("\"val_metric\""), std::string::npos);
}

TEST(Train, DivergenceIsReportedWithContext) {
  auto cfg = toy_config(Objective::log_loss, 9);
  cfg.epochs = 1;
  cfg.tasks_per_epoch = 4;
  auto bad = model::TransformerWeights<double>::init(toy_model(), 5);
  bad.ctx_embed.mutable_data()[0] = 1e308;
  const auto tr = toy_stream(tasks::StreamDomain::train), va = toy_stream(tasks::StreamDomain::validation);
  try {
    train::train<double>(cfg, toy_model(), tr, va, &bad);
    FAIL() << "expected a numeric error";
  } catch (const num::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, LogLossLearnsSeparableToyTask) {
  auto cfg = toy_config(Objective::log_loss, 15);
  cfg.tasks_per_epoch = 1024;
  const auto tr = toy_stream(tasks::StreamDomain::train), va = toy_stream(tasks::StreamDomain::validation);
  const auto res = train::train<double>(cfg, toy_model(), tr, va);
  ASSERT_EQ(res.log.size(), 30u);
  EXPECT_LT(res.log.back().loss, 0.5 * res.log.front().loss);
  EXPECT_GT(accuracy(res.weights, va, cfg.n), 0.95);

  // Best checkpoint survives a save/load cycle with identical predictions.
  std::stringstream ss;
  model::write_checkpoint(ss, model::make_checkpoint(res.weights, cfg.seed, "log_loss"));
  const auto back = model::transformer_from<double>(model::read_checkpoint(ss), false);
  const auto e = va.episode(0, 0, cfg.n);
  const Point q[] = {e.query_x};
  const auto a = model::forward_context_query(res.weights, e.context, std::span<const Point>(q));
  const auto b = model::forward_context_query(back, e.context, std::span<const Point>(q));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Train, CpAwareFcpHalvesItsLoss) {
  const auto cfg = toy_config(Objective::cp_aware_fcp, 9);
  const auto tr = toy_stream(tasks::StreamDomain::train), va = toy_stream(tasks::StreamDomain::validation);
  const auto res = train::train<double>(cfg, toy_model(), tr, va);
  EXPECT_LT(res.log.back().loss, 0.5 * res.log.front().loss);
  EXPECT_GT(res.log.front().loss_ineff, res.log.back().loss_ineff);
  // The best epoch has the lowest validation soft set size.
  for (const auto& r : res.log) EXPECT_GE(r.val_metric, res.best_metric);
}

TEST(Train, CpAwareScpHalvesItsLoss) {
  const auto cfg = toy_config(Objective::cp_aware_scp, 18);
  const auto tr = toy_stream(tasks::StreamDomain::train), va = toy_stream(tasks::StreamDomain::validation);
  const auto res = train::train<double>(cfg, toy_model(), tr, va);
  EXPECT_LT(res.log.back().loss, 0.5 * res.log.front().loss);
}

TEST(Train, JointLearningReducesLogLoss) {
  auto cfg = toy_config(Objective::log_loss, 9);
  cfg.epochs = 10;
  cfg.tasks_per_epoch = 64;
  const auto tr = toy_stream(tasks::StreamDomain::train), va = toy_stream(tasks::StreamDomain::validation);
  const auto res = train::train_jl<double>(cfg, {.num_layers = 3, .hidden_dim = 16, .num_classes = 4, .input_dim = 2},
                                           tr, va);
  EXPECT_LT(res.log.back().loss, res.log.front().loss);
  EXPECT_LE(res.best_metric, res.log.front().val_metric);
}
