// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace icfcp {

using Point = std::vector<double>;

struct LabeledPoint {
  Point x;
  int y = 0;

  bool operator==(const LabeledPoint&) const = default;
};

using Dataset = std::vector<LabeledPoint>;

/// One task instance: n context pairs plus a query pair drawn from the same task.
struct Episode {
  Dataset context;
  Point query_x;
  int query_y = 0;

  bool operator==(const Episode&) const = default;
};

inline void check_label(int y, std::size_t num_classes) {
  if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
    throw std::out_of_range("label " + std::to_string(y) + " outside 0.." +
                            std::to_string(static_cast<long long>(num_classes) - 1));
  }
}

}  // namespace icfcp
