// SPDX-License-Identifier: Apache-2.0
//
// Side-by-side comparison of evaluation reports against ICL_FCP.

#pragma once

#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "icfcp/bench/report.hpp"

namespace icfcp::bench {

struct PairedTest {
  std::size_t pairs = 0;
  double mean_diff = 0.0;  // mean of (baseline − candidate) per-task set sizes
  double t = 0.0;
  double p_value = 1.0;    // one-sided, H1: candidate sets are smaller
};

/// One-sided paired t-test on per-task mean set sizes. Both reports must be
/// over the same test tasks in the same order.
inline PairedTest paired_smaller(const EvalReport& baseline, const EvalReport& candidate) {
  if (baseline.per_task.size() != candidate.per_task.size()) {
    throw std::invalid_argument("paired test needs reports over the same tasks");
  }
  PairedTest res;
  res.pairs = baseline.per_task.size();
  std::vector<double> d;
  for (std::size_t i = 0; i < res.pairs; ++i) {
    if (baseline.per_task[i].task != candidate.per_task[i].task) {
      throw std::invalid_argument("paired test: task order differs");
    }
    d.push_back(baseline.per_task[i].mean_size() - candidate.per_task[i].mean_size());
  }
  if (res.pairs < 2) return res;
  double mean = 0.0;
  for (const double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double ss = 0.0;
  for (const double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(d.size() - 1));
  res.mean_diff = mean;
  if (sd == 0.0) {
    res.t = mean > 0 ? std::numeric_limits<double>::infinity() : (mean < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
    res.p_value = mean > 0 ? 0.0 : 1.0;
    return res;
  }
  res.t = mean / (sd / std::sqrt(static_cast<double>(d.size())));
  const boost::math::students_t dist(static_cast<double>(d.size() - 1));
  res.p_value = boost::math::cdf(boost::math::complement(dist, res.t));
  return res;
}

struct ComparisonRow {
  Scheme scheme = Scheme::icl_fcp;
  double coverage = 0.0;
  double coverage_floor = 0.0;
  bool below_floor = false;
  double mean_size = 0.0;
  std::optional<double> reduction_pct;  // vs ICL_FCP; absent without a baseline
  std::optional<double> p_value;
  std::uint64_t distributions = 0;
  std::uint64_t context_encodings = 0;
};

/// One row per report. The baseline is the first ICL_FCP report, if any.
inline std::vector<ComparisonRow> compare(const std::vector<EvalReport>& reports) {
  const EvalReport* base = nullptr;
  for (const auto& r : reports)
    if (r.scheme == Scheme::icl_fcp) {
      base = &r;
      break;
    }
  std::vector<ComparisonRow> rows;
  for (const auto& r : reports) {
    ComparisonRow row;
    row.scheme = r.scheme;
    row.coverage = r.coverage();
    row.coverage_floor = r.coverage_floor();
    row.below_floor = row.coverage < row.coverage_floor;
    row.mean_size = r.mean_size();
    row.distributions = r.distributions;
    row.context_encodings = r.context_encodings;
    if (base) {
      const double b = base->mean_size();
      row.reduction_pct = b > 0 ? 100.0 * (b - row.mean_size) / b : 0.0;
      if (base->per_task.size() == r.per_task.size()) row.p_value = paired_smaller(*base, r).p_value;
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_csv(std::ostream& os, const std::vector<ComparisonRow>& rows) {
  os << "scheme,coverage,coverage_floor,below_floor,mean_set_size,size_reduction_vs_ICL_FCP_pct,"
        "p_value_smaller_than_ICL_FCP,distributions,context_encodings,prediction_evals\n";
  auto num = [](double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
  };
  for (const auto& r : rows) {
    os << to_string(r.scheme) << ',' << num(r.coverage) << ',' << num(r.coverage_floor) << ','
       << (r.below_floor ? "yes" : "no") << ',' << num(r.mean_size) << ','
       << (r.reduction_pct ? num(*r.reduction_pct) : "") << ',' << (r.p_value ? num(*r.p_value) : "") << ','
       << r.distributions << ',' << r.context_encodings << ',' << r.distributions + r.context_encodings << '\n';
  }
}

}  // namespace icfcp::bench
