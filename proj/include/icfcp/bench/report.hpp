// SPDX-License-Identifier: Apache-2.0
//
// Evaluation reports: summary.json plus one NDJSON line per test task.
// Output is a pure function of the inputs (no timestamps, fixed key order).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace icfcp::bench {

enum class Scheme { jl_scp, icl_scp, e_icl_scp, icl_fcp, e_icl_fcp };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::jl_scp: return "JL_SCP";
    case Scheme::icl_scp: return "ICL_SCP";
    case Scheme::e_icl_scp: return "E_ICL_SCP";
    case Scheme::icl_fcp: return "ICL_FCP";
    case Scheme::e_icl_fcp: return "E_ICL_FCP";
  }
  return "?";
}

inline Scheme scheme_from_string(const std::string& s) {
  for (const auto v : {Scheme::jl_scp, Scheme::icl_scp, Scheme::e_icl_scp, Scheme::icl_fcp, Scheme::e_icl_fcp})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown scheme '" + s + "' (JL_SCP, ICL_SCP, E_ICL_SCP, ICL_FCP, E_ICL_FCP)");
}

inline bool is_fcp(Scheme s) { return s == Scheme::icl_fcp || s == Scheme::e_icl_fcp; }

/// Training objective a checkpoint must carry to be evaluated under `s`.
inline std::string required_objective(Scheme s) {
  switch (s) {
    case Scheme::jl_scp: return "joint_learning";
    case Scheme::icl_scp:
    case Scheme::icl_fcp: return "log_loss";
    case Scheme::e_icl_scp: return "cp_aware_scp";
    case Scheme::e_icl_fcp: return "cp_aware_fcp";
  }
  return "";
}

struct TaskResult {
  std::size_t task = 0;
  std::size_t points = 0;
  std::size_t covered = 0;
  std::size_t total_size = 0;

  double coverage() const { return points ? static_cast<double>(covered) / static_cast<double>(points) : 0.0; }
  double mean_size() const { return points ? static_cast<double>(total_size) / static_cast<double>(points) : 0.0; }
  bool operator==(const TaskResult&) const = default;
};

struct Distribution {
  double mean = 0, min = 0, p05 = 0, p25 = 0, p50 = 0, p75 = 0, p95 = 0, max = 0;
};

/// Linear-interpolated percentile, q in [0, 1], of an unsorted sample.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Distribution describe(const std::vector<double>& v) {
  Distribution d;
  if (v.empty()) return d;
  double s = 0.0;
  for (const double x : v) s += x;
  d.mean = s / static_cast<double>(v.size());
  d.min = percentile(v, 0.0);
  d.p05 = percentile(v, 0.05);
  d.p25 = percentile(v, 0.25);
  d.p50 = percentile(v, 0.5);
  d.p75 = percentile(v, 0.75);
  d.p95 = percentile(v, 0.95);
  d.max = percentile(v, 1.0);
  return d;
}

struct EvalReport {
  Scheme scheme = Scheme::icl_fcp;
  double alpha = 0.1;
  std::size_t num_classes = 0;
  std::size_t n = 0, l = 0, m = 0;
  std::size_t tasks = 0, realizations = 0, test_inputs = 0;
  std::uint64_t test_seed = 0;
  std::uint64_t checkpoint_seed = 0;
  std::string checkpoint_objective;
  std::string config_hash;
  std::uint64_t distributions = 0;
  std::uint64_t context_encodings = 0;
  std::vector<TaskResult> per_task;

  std::size_t points() const {
    std::size_t p = 0;
    for (const auto& t : per_task) p += t.points;
    return p;
  }
  double coverage() const {
    std::size_t c = 0;
    for (const auto& t : per_task) c += t.covered;
    return points() ? static_cast<double>(c) / static_cast<double>(points()) : 0.0;
  }
  double mean_size() const {
    std::size_t s = 0;
    for (const auto& t : per_task) s += t.total_size;
    return points() ? static_cast<double>(s) / static_cast<double>(points()) : 0.0;
  }
  /// Lower edge of the 3-sigma band around 1 − α for this many test points.
  double coverage_floor() const {
    const double p = 1.0 - alpha;
    return p - 3.0 * std::sqrt(alpha * p / static_cast<double>(std::max<std::size_t>(points(), 1)));
  }
  std::uint64_t prediction_evals() const { return distributions + context_encodings; }
  std::vector<double> task_sizes() const {
    std::vector<double> v;
    for (const auto& t : per_task) v.push_back(t.mean_size());
    return v;
  }
  std::vector<double> task_coverages() const {
    std::vector<double> v;
    for (const auto& t : per_task) v.push_back(t.coverage());
    return v;
  }
};

inline nlohmann::ordered_json to_json(const Distribution& d) {
  return {{"mean", d.mean}, {"min", d.min}, {"p05", d.p05}, {"p25", d.p25},
          {"p50", d.p50},   {"p75", d.p75}, {"p95", d.p95}, {"max", d.max}};
}

inline nlohmann::ordered_json summary_json(const EvalReport& r) {
  const auto per_realization = static_cast<double>(r.tasks * r.realizations);
  return {
      {"scheme", to_string(r.scheme)},
      {"alpha", r.alpha},
      {"num_classes", r.num_classes},
      {"n", r.n},
      {"l", r.l},
      {"m", r.m},
      {"tasks", r.tasks},
      {"realizations", r.realizations},
      {"test_inputs", r.test_inputs},
      {"points", r.points()},
      {"coverage", r.coverage()},
      {"coverage_floor", r.coverage_floor()},
      {"below_floor", r.coverage() < r.coverage_floor()},
      {"mean_set_size", r.mean_size()},
      {"task_coverage", to_json(describe(r.task_coverages()))},
      {"task_set_size", to_json(describe(r.task_sizes()))},
      {"counters",
       {{"distributions", r.distributions},
        {"context_encodings", r.context_encodings},
        {"prediction_evals", r.prediction_evals()},
        {"prediction_evals_per_realization", per_realization > 0 ? r.prediction_evals() / per_realization : 0.0}}},
      {"seeds", {{"test", r.test_seed}, {"checkpoint", r.checkpoint_seed}}},
      {"checkpoint_objective", r.checkpoint_objective},
      {"config_hash", r.config_hash},
  };
}

inline nlohmann::ordered_json to_json(const TaskResult& t) {
  return {{"task", t.task},
          {"points", t.points},
          {"covered", t.covered},
          {"total_size", t.total_size},
          {"coverage", t.coverage()},
          {"mean_size", t.mean_size()}};
}

inline void write_report(const std::filesystem::path& dir, const EvalReport& r) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "summary.json");
    if (!os) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
    os << summary_json(r).dump(2) << '\n';
  }
  std::ofstream os(dir / "per_task.ndjson");
  if (!os) throw std::runtime_error("cannot write " + (dir / "per_task.ndjson").string());
  for (const auto& t : r.per_task) os << to_json(t).dump() << '\n';
}

/// Reads back what write_report produced. Only the raw counts are trusted;
/// derived fields are recomputed.
inline EvalReport read_report(const std::filesystem::path& dir) {
  std::ifstream is(dir / "summary.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "summary.json").string());
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(is);
    r.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    r.alpha = j.at("alpha").get<double>();
    r.num_classes = j.at("num_classes").get<std::size_t>();
    r.n = j.at("n").get<std::size_t>();
    r.l = j.at("l").get<std::size_t>();
    r.m = j.at("m").get<std::size_t>();
    r.tasks = j.at("tasks").get<std::size_t>();
    r.realizations = j.at("realizations").get<std::size_t>();
    r.test_inputs = j.at("test_inputs").get<std::size_t>();
    r.distributions = j.at("counters").at("distributions").get<std::uint64_t>();
    r.context_encodings = j.at("counters").at("context_encodings").get<std::uint64_t>();
    r.test_seed = j.at("seeds").at("test").get<std::uint64_t>();
    r.checkpoint_seed = j.at("seeds").at("checkpoint").get<std::uint64_t>();
    r.checkpoint_objective = j.at("checkpoint_objective").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed " + (dir / "summary.json").string() + ": " + e.what());
  }
  std::ifstream ts(dir / "per_task.ndjson");
  if (!ts) throw std::runtime_error("cannot open " + (dir / "per_task.ndjson").string());
  std::string line;
  while (std::getline(ts, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      r.per_task.push_back({j.at("task").get<std::size_t>(), j.at("points").get<std::size_t>(),
                            j.at("covered").get<std::size_t>(), j.at("total_size").get<std::size_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("malformed per-task record: " + std::string(e.what()));
    }
  }
  if (r.per_task.size() != r.tasks) throw std::runtime_error("per_task.ndjson does not match the task count");
  return r;
}

}  // namespace icfcp::bench
