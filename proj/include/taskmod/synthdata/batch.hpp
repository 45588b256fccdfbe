// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "taskmod/losses/losses.hpp"
#include "taskmod/synthdata/synth.hpp"

namespace taskmod {

struct Batch {
  ad::Tensor images;  // [N,3,S,S]
  BatchTargets targets;
  std::size_t size() const { return images.rank() == 4 ? static_cast<std::size_t>(images.shape[0]) : 0; }
};

// Stacks samples[indices[0]], samples[indices[1]], ... Throws ShapeError
// when sizes differ and ConfigError for an empty or out-of-range selection.
Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

}  // namespace taskmod
