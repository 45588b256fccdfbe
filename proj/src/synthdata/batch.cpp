// SPDX-License-Identifier: Apache-2.0

#include "taskmod/synthdata/batch.hpp"

#include <algorithm>

#include "taskmod/common/error.hpp"

namespace taskmod {

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("make_batch: empty selection");
  for (auto i : indices) {
    if (i >= samples.size()) throw ConfigError("make_batch: sample index " + std::to_string(i) + " out of range");
  }
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  const std::int64_t s = samples[indices[0]].size;
  const auto px = static_cast<std::size_t>(s * s);
  Batch b;
  b.images = ad::Tensor({n, 3, s, s});
  b.targets.edge = ad::Tensor({n, 1, s, s});
  b.targets.seg = ad::Tensor({n, 1, s, s});
  b.targets.normals = ad::Tensor({n, 3, s, s});
  b.targets.depth = ad::Tensor({n, 1, s, s});
  b.targets.valid = ad::Tensor({n, 1, s, s});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& x = samples[indices[k]];
    if (x.size != s) throw ShapeError("make_batch: mixed sample sizes " + std::to_string(s) + " and " + std::to_string(x.size));
    std::copy(x.image.begin(), x.image.end(), b.images.data.begin() + static_cast<std::ptrdiff_t>(3 * px * k));
    std::copy(x.normals.begin(), x.normals.end(), b.targets.normals.data.begin() + static_cast<std::ptrdiff_t>(3 * px * k));
    const auto off = static_cast<std::ptrdiff_t>(px * k);
    std::copy(x.edge.begin(), x.edge.end(), b.targets.edge.data.begin() + off);
    std::copy(x.seg.begin(), x.seg.end(), b.targets.seg.data.begin() + off);
    std::copy(x.depth.begin(), x.depth.end(), b.targets.depth.data.begin() + off);
    std::copy(x.valid.begin(), x.valid.end(), b.targets.valid.data.begin() + off);
  }
  return b;
}

}  // namespace taskmod
