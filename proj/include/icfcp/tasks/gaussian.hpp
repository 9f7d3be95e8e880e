// SPDX-License-Identifier: Apache-2.0
//
// Toy 2-D Gaussian-blob classification tasks with task-random class means.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

#include "icfcp/tasks/episode.hpp"

namespace icfcp::tasks {

struct GaussianSpec {
  std::size_t num_classes = 4;
  double box = 5.0;             // means lie in [−box, box]²
  double sigma = 0.3;           // isotropic blob std-dev
  double min_separation = 6.0;  // minimum distance between means, in units of sigma
};

struct GaussianTaskParams {
  std::vector<std::array<double, 2>> means;
  double sigma = 1.0;
};

inline GaussianTaskParams sample_gaussian_task(std::mt19937_64& rng, const GaussianSpec& spec = {}) {
  const double min_dist = spec.min_separation * spec.sigma;
  if (min_dist > spec.box) {
    throw std::invalid_argument("GaussianSpec: separation too large for the box");
  }
  std::uniform_real_distribution<double> coord(-spec.box, spec.box);
  GaussianTaskParams t;
  t.sigma = spec.sigma;
  while (t.means.size() < spec.num_classes) {
    const std::array<double, 2> m{coord(rng), coord(rng)};
    bool ok = true;
    for (const auto& o : t.means) ok = ok && std::hypot(m[0] - o[0], m[1] - o[1]) >= min_dist;
    if (ok) t.means.push_back(m);
  }
  return t;
}

inline LabeledPoint sample_gaussian_point(const GaussianTaskParams& t, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> label(0, static_cast<int>(t.means.size()) - 1);
  std::normal_distribution<double> noise(0.0, t.sigma);
  const int y = label(rng);
  const auto& m = t.means[static_cast<std::size_t>(y)];
  const double x0 = m[0] + noise(rng);
  const double x1 = m[1] + noise(rng);
  return {{x0, x1}, y};
}

inline Episode sample_gaussian_episode(const GaussianTaskParams& t, std::size_t n, std::mt19937_64& rng) {
  Episode e;
  for (std::size_t i = 0; i < n; ++i) e.context.push_back(sample_gaussian_point(t, rng));
  auto q = sample_gaussian_point(t, rng);
  e.query_x = std::move(q.x);
  e.query_y = q.y;
  return e;
}

}  // namespace icfcp::tasks
