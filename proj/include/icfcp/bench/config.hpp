// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration. One JSON document with four sections:
//
//   model  Transformer shape plus the joint-learning MLP shape (jl_*)
//   train  meta-training schedule, episode split and soft-CP hyperparameters
//   eval   miscoverage level, test stream size and worker count
//   seeds  train (training/validation streams, init, shuffling) and test
//
// Missing keys take their defaults; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "icfcp/model/config.hpp"
#include "icfcp/train/trainer.hpp"

namespace icfcp::bench {

using nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class JlCalibration { all, split };

struct EvalConfig {
  double alpha = 0.1;
  std::size_t test_tasks = 128;
  std::size_t realizations = 10;
  std::size_t test_inputs = 5;
  std::size_t threads = 1;
  // JL has no per-task fit, so by default it calibrates on all n points.
  JlCalibration jl_calibration = JlCalibration::all;
};

struct Seeds {
  std::uint64_t train = 1;
  std::uint64_t test = 2;
};

struct BenchConfig {
  model::ModelConfig model;
  model::MlpConfig jl_model;
  train::TrainConfig train;
  EvalConfig eval;
  Seeds seeds;

  void validate() const {
    try {
      model.validate();
      jl_model.validate();
      train.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (jl_model.num_classes != model.num_classes || jl_model.input_dim != model.input_dim) {
      throw ConfigError("JL model and Transformer must agree on classes and input size");
    }
    if (!(eval.alpha > 0.0 && eval.alpha < 1.0)) throw ConfigError("eval.alpha must lie in (0, 1)");
    if (eval.test_tasks == 0 || eval.realizations == 0 || eval.test_inputs == 0) {
      throw ConfigError("eval stream sizes must be positive");
    }
    if (eval.threads == 0) throw ConfigError("eval.threads must be positive");
  }
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline json to_json(const BenchConfig& c) {
  const auto& t = c.train;
  return {
      {"model",
       {{"num_layers", c.model.num_layers},
        {"model_dim", c.model.model_dim},
        {"num_heads", c.model.num_heads},
        {"ffn_dim", c.model.ffn_dim},
        {"num_classes", c.model.num_classes},
        {"input_dim", c.model.input_dim},
        {"jl_num_layers", c.jl_model.num_layers},
        {"jl_hidden_dim", c.jl_model.hidden_dim}}},
      {"train",
       {{"epochs", t.epochs},
        {"tasks_per_epoch", t.tasks_per_epoch},
        {"realizations_per_task", t.realizations_per_task},
        {"batch_size", t.batch_size},
        {"lr_init", t.lr_init},
        {"lr_min", t.lr_min},
        {"cosine_period", t.cosine_period},
        {"n", t.n},
        {"l", t.l},
        {"m", t.m},
        {"val_tasks", t.val_tasks},
        {"val_realizations", t.val_realizations},
        {"alpha", t.hyper.alpha},
        {"c_q", t.hyper.c_q},
        {"kappa", t.hyper.kappa},
        {"lambda", t.hyper.lambda}}},
      {"eval",
       {{"alpha", c.eval.alpha},
        {"test_tasks", c.eval.test_tasks},
        {"realizations", c.eval.realizations},
        {"test_inputs", c.eval.test_inputs},
        {"threads", c.eval.threads},
        {"jl_calibration", c.eval.jl_calibration == JlCalibration::all ? "all" : "split"}}},
      {"seeds", {{"train", c.seeds.train}, {"test", c.seeds.test}}},
  };
}

inline BenchConfig config_from_json(const json& j) {
  detail::reject_unknown(j, "config", {"model", "train", "eval", "seeds"});
  BenchConfig c;
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(m, "model",
                           {"num_layers", "model_dim", "num_heads", "ffn_dim", "num_classes", "input_dim",
                            "jl_num_layers", "jl_hidden_dim"});
    detail::read(m, "num_layers", c.model.num_layers, "model");
    detail::read(m, "model_dim", c.model.model_dim, "model");
    detail::read(m, "num_heads", c.model.num_heads, "model");
    detail::read(m, "ffn_dim", c.model.ffn_dim, "model");
    detail::read(m, "num_classes", c.model.num_classes, "model");
    detail::read(m, "input_dim", c.model.input_dim, "model");
    detail::read(m, "jl_num_layers", c.jl_model.num_layers, "model");
    detail::read(m, "jl_hidden_dim", c.jl_model.hidden_dim, "model");
  }
  c.jl_model.num_classes = c.model.num_classes;
  c.jl_model.input_dim = c.model.input_dim;
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t, "train",
                           {"epochs", "tasks_per_epoch", "realizations_per_task", "batch_size", "lr_init", "lr_min",
                            "cosine_period", "n", "l", "m", "val_tasks", "val_realizations", "alpha", "c_q", "kappa",
                            "lambda"});
    auto& o = c.train;
    detail::read(t, "epochs", o.epochs, "train");
    detail::read(t, "tasks_per_epoch", o.tasks_per_epoch, "train");
    detail::read(t, "realizations_per_task", o.realizations_per_task, "train");
    detail::read(t, "batch_size", o.batch_size, "train");
    detail::read(t, "lr_init", o.lr_init, "train");
    detail::read(t, "lr_min", o.lr_min, "train");
    detail::read(t, "cosine_period", o.cosine_period, "train");
    detail::read(t, "n", o.n, "train");
    detail::read(t, "l", o.l, "train");
    detail::read(t, "m", o.m, "train");
    detail::read(t, "val_tasks", o.val_tasks, "train");
    detail::read(t, "val_realizations", o.val_realizations, "train");
    detail::read(t, "alpha", o.hyper.alpha, "train");
    detail::read(t, "c_q", o.hyper.c_q, "train");
    detail::read(t, "kappa", o.hyper.kappa, "train");
    detail::read(t, "lambda", o.hyper.lambda, "train");
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    detail::reject_unknown(e, "eval", {"alpha", "test_tasks", "realizations", "test_inputs", "threads", "jl_calibration"});
    detail::read(e, "alpha", c.eval.alpha, "eval");
    detail::read(e, "test_tasks", c.eval.test_tasks, "eval");
    detail::read(e, "realizations", c.eval.realizations, "eval");
    detail::read(e, "test_inputs", c.eval.test_inputs, "eval");
    detail::read(e, "threads", c.eval.threads, "eval");
    std::string cal = "all";
    detail::read(e, "jl_calibration", cal, "eval");
    if (cal == "all") {
      c.eval.jl_calibration = JlCalibration::all;
    } else if (cal == "split") {
      c.eval.jl_calibration = JlCalibration::split;
    } else {
      throw ConfigError("eval.jl_calibration must be \"all\" or \"split\"");
    }
  }
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    detail::reject_unknown(s, "seeds", {"train", "test"});
    detail::read(s, "train", c.seeds.train, "seeds");
    detail::read(s, "test", c.seeds.test, "seeds");
  }
  c.train.seed = c.seeds.train;
  c.validate();
  return c;
}

inline BenchConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

/// 64-bit FNV-1a of a byte string.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

/// Hash of the canonical serialization; identifies the run configuration in
/// reports. The worker count is left out since results do not depend on it.
inline std::string config_hash(const BenchConfig& c) {
  auto j = to_json(c);
  j["eval"].erase("threads");
  return hex64(fnv1a(j.dump()));
}

}  // namespace icfcp::bench
