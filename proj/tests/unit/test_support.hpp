// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit and acceptance suites.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "taskmod/autodiff/graph.hpp"
#include "taskmod/common/rng.hpp"

namespace taskmod::testing {

inline ad::Tensor random_tensor(Rng& rng, const ad::Shape& shape, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t(shape);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Values in [lo, hi] kept at least `gap` away from every kink in `kinks`.
inline ad::Tensor random_away_from(Rng& rng, const ad::Shape& shape, double lo, double hi,
                                   const std::vector<double>& kinks, double gap = 0.02) {
  ad::Tensor t(shape);
  for (auto& v : t.data) {
    for (;;) {
      v = rng.uniform(lo, hi);
      bool ok = true;
      for (double k : kinks) ok = ok && std::abs(v - k) > gap;
      if (ok) break;
    }
  }
  return t;
}

// Coefficients bounded away from zero, used to turn tensors into scalars.
inline ad::Tensor random_coeffs(Rng& rng, const ad::Shape& shape) {
  ad::Tensor t(shape);
  for (auto& v : t.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
  return t;
}

inline ad::Shape random_shape(Rng& rng, std::size_t min_rank = 1, std::size_t max_rank = 4,
                              std::int64_t max_dim = 4) {
  const auto rank = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_rank),
                                                             static_cast<std::int64_t>(max_rank)));
  ad::Shape s(rank);
  for (auto& d : s) d = rng.uniform_int(1, max_dim);
  return s;
}

}  // namespace taskmod::testing
