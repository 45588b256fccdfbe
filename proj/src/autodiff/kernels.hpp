// SPDX-License-Identifier: Apache-2.0
// Internal: forward kernels and shape inference for primitive ops.

#pragma once

#include <array>
#include <span>

#include "taskmod/autodiff/graph.hpp"

namespace taskmod::ad::detail {

Shape infer_shape(OpKind kind, const OpAttrs& attrs, std::span<const Shape* const> inputs);

Tensor compute(const Node& node, std::span<const Tensor* const> inputs);

Shape broadcast_shapes(const Shape& a, const Shape& b);

// Normalizes possibly-negative axes against `rank`; sorted and unique.
std::vector<std::int64_t> normalize_axes(const std::vector<std::int64_t>& axes, std::size_t rank);

}  // namespace taskmod::ad::detail
