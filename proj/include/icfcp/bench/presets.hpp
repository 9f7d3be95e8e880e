// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale two-stage protocol. Stage one trains a log-loss checkpoint; stage
// two continues from it under each scheme's own objective with the same budget,
// so E_* and plain schemes differ only in the objective of the last stage.
// The full-scale configuration is BenchConfig{} itself.

#pragma once

#include "icfcp/bench/config.hpp"

namespace icfcp::bench {

inline BenchConfig desk_pretrain() {
  BenchConfig c;
  c.model.num_layers = 2;
  c.model.ffn_dim = 64;
  c.jl_model.hidden_dim = 32;
  auto& t = c.train;
  t.epochs = 6;
  t.tasks_per_epoch = 256;
  t.realizations_per_task = 50;
  t.batch_size = 32;
  t.lr_init = 2e-3;
  t.lr_min = 2e-4;
  t.cosine_period = 6;
  t.val_tasks = 64;
  t.val_realizations = 2;
  t.seed = c.seeds.train;
  return c;
}

inline BenchConfig desk_finetune() {
  auto c = desk_pretrain();
  auto& t = c.train;
  t.epochs = 4;
  t.realizations_per_task = 10;
  t.lr_init = 1e-3;
  t.lr_min = 1e-4;
  t.cosine_period = 4;
  return c;
}

}  // namespace icfcp::bench
