// SPDX-License-Identifier: Apache-2.0
//
// Seeded task streams. Every (domain, task, realization) triple owns an
// independent generator derived from the base seed, so streams can be
// regenerated in any order or in parallel.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "icfcp/tasks/gaussian.hpp"
#include "icfcp/tasks/qpsk.hpp"

namespace icfcp::tasks {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(base);
  for (const auto p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

enum class TaskFamily { qpsk, gaussian };

enum class StreamDomain : std::uint64_t {
  train = 1,
  validation = 2,
  test = 3,
  model_init = 4,
  shuffle = 5,
};

using TaskParams = std::variant<QpskTaskParams, GaussianTaskParams>;

class TaskStream {
 public:
  TaskStream(TaskFamily family, std::uint64_t base_seed, StreamDomain domain, GaussianSpec gaussian = {})
      : family_(family), base_(base_seed), domain_(domain), gaussian_(gaussian) {}

  TaskFamily family() const { return family_; }
  std::size_t num_classes() const {
    return family_ == TaskFamily::qpsk ? kQpskClasses : gaussian_.num_classes;
  }

  TaskParams task(std::size_t t) const {
    Rng rng(derive_seed(base_, {static_cast<std::uint64_t>(domain_), t, ~0ULL}));
    if (family_ == TaskFamily::qpsk) return sample_task(rng);
    return sample_gaussian_task(rng, gaussian_);
  }

  /// `count` i.i.d. labeled points of task t, realization r.
  Dataset draw(std::size_t t, std::size_t r, std::size_t count) const {
    const auto params = task(t);
    Rng rng(derive_seed(base_, {static_cast<std::uint64_t>(domain_), t, r}));
    Dataset out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (const auto* q = std::get_if<QpskTaskParams>(&params)) {
        out.push_back(sample_labeled(*q, rng));
      } else {
        out.push_back(sample_gaussian_point(std::get<GaussianTaskParams>(params), rng));
      }
    }
    return out;
  }

  /// n context pairs plus one query pair.
  Episode episode(std::size_t t, std::size_t r, std::size_t n) const {
    auto pts = draw(t, r, n + 1);
    Episode e;
    e.query_x = pts.back().x;
    e.query_y = pts.back().y;
    pts.pop_back();
    e.context = std::move(pts);
    return e;
  }

 private:
  TaskFamily family_;
  std::uint64_t base_;
  StreamDomain domain_;
  GaussianSpec gaussian_;
};

// Line-delimited episode records:
//   {"context": [[x0, x1, ..., y], ...], "query_x": [...], "query_y": k}

inline nlohmann::json episode_to_json(const Episode& e) {
  nlohmann::json ctx = nlohmann::json::array();
  for (const auto& p : e.context) {
    nlohmann::json row = p.x;
    row.push_back(p.y);
    ctx.push_back(std::move(row));
  }
  return {{"context", std::move(ctx)}, {"query_x", e.query_x}, {"query_y", e.query_y}};
}

inline Episode episode_from_json(const nlohmann::json& j) {
  Episode e;
  for (const auto& row : j.at("context")) {
    if (row.size() < 2) throw std::invalid_argument("episode record: context row too short");
    LabeledPoint p;
    for (std::size_t i = 0; i + 1 < row.size(); ++i) p.x.push_back(row[i].get<double>());
    p.y = row.back().get<int>();
    e.context.push_back(std::move(p));
  }
  e.query_x = j.at("query_x").get<Point>();
  e.query_y = j.at("query_y").get<int>();
  return e;
}

inline void write_episodes(std::ostream& os, const std::vector<Episode>& episodes) {
  for (const auto& e : episodes) os << episode_to_json(e).dump() << '\n';
}

inline std::vector<Episode> read_episodes(std::istream& is) {
  std::vector<Episode> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(episode_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace icfcp::tasks
