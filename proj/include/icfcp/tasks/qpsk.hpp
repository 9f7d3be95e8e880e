// SPDX-License-Identifier: Apache-2.0
//
// QPSK symbol demodulation tasks. Each task fixes a phase offset, an IQ
// imbalance (ε, δ) and an SNR; observations are x = e^{jφ}·f(y) + v with
// v ~ CN(0, 1/γ). Complex values travel as (real, imag) pairs.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>

#include "icfcp/tasks/episode.hpp"

namespace icfcp::tasks {

using Rng = std::mt19937_64;

inline constexpr std::size_t kQpskClasses = 4;

/// Symbols −1−j, −1+j, 1+j, 1−j as (I, Q), indexed 0..3.
inline constexpr std::array<std::array<double, 2>, kQpskClasses> kQpskConstellation = {{
    {-1.0, -1.0}, {-1.0, 1.0}, {1.0, 1.0}, {1.0, -1.0}}};

struct QpskTaskParams {
  double phi = 0.0;      // rad, [0, 2π)
  double epsilon = 0.0;  // amplitude imbalance, [0, 0.3]
  double delta = 0.0;    // rad, [0, π/6]
  double snr_db = 0.0;   // dB, [0, 10]

  double gamma() const { return std::pow(10.0, snr_db / 10.0); }
  bool operator==(const QpskTaskParams&) const = default;
};

inline QpskTaskParams sample_task(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  QpskTaskParams p;
  p.phi = 2.0 * std::numbers::pi * unit(rng);
  p.epsilon = 0.3 * unit(rng);
  p.delta = (std::numbers::pi / 6.0) * unit(rng);
  p.snr_db = 10.0 * unit(rng);
  return p;
}

/// f(y) = diag(1+ε, 1−ε) · [[cos δ, −sin δ], [−sin δ, cos δ]] · (y_I, y_Q).
/// Both off-diagonal entries carry −sin δ, so this is not a rotation.
inline std::array<double, 2> impair(int y, const QpskTaskParams& p) {
  check_label(y, kQpskClasses);
  const auto [yi, yq] = kQpskConstellation[static_cast<std::size_t>(y)];
  const double c = std::cos(p.delta), s = std::sin(p.delta);
  return {(1.0 + p.epsilon) * (c * yi - s * yq), (1.0 - p.epsilon) * (-s * yi + c * yq)};
}

/// e^{jφ} f(y) plus circular Gaussian noise with per-component variance 1/(2γ).
inline Point sample_observation(int y, const QpskTaskParams& p, Rng& rng, bool noiseless = false) {
  const auto [fi, fq] = impair(y, p);
  const double c = std::cos(p.phi), s = std::sin(p.phi);
  Point x{c * fi - s * fq, s * fi + c * fq};
  if (!noiseless) {
    std::normal_distribution<double> noise(0.0, std::sqrt(0.5 / p.gamma()));
    x[0] += noise(rng);
    x[1] += noise(rng);
  }
  return x;
}

inline LabeledPoint sample_labeled(const QpskTaskParams& p, Rng& rng) {
  std::uniform_int_distribution<int> label(0, static_cast<int>(kQpskClasses) - 1);
  const int y = label(rng);
  return {sample_observation(y, p, rng), y};
}

/// n i.i.d. context pairs plus one query pair, labels uniform over the constellation.
inline Episode sample_episode(const QpskTaskParams& p, std::size_t n, Rng& rng) {
  Episode e;
  e.context.reserve(n);
  for (std::size_t i = 0; i < n; ++i) e.context.push_back(sample_labeled(p, rng));
  auto q = sample_labeled(p, rng);
  e.query_x = std::move(q.x);
  e.query_y = q.y;
  return e;
}

}  // namespace icfcp::tasks
