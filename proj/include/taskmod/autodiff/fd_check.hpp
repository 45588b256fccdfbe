// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "taskmod/autodiff/graph.hpp"

namespace taskmod::ad {

struct FdResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// ThreePoint: (f(x+h) - f(x-h)) / 2h.
// FivePoint: (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h, O(h^4) truncation,
// which allows a larger step and so less rounding noise on tiny entries.
enum class FdStencil { ThreePoint, FivePoint };

// Compares backward(scalar_loss, wrt) against central differences obtained by
// perturbing each element of the leaf `wrt` by +-step. The relative error
// uses max(|analytic|, |numeric|, 1e-8) as denominator.
FdResult fd_check_detailed(Graph& graph, Var scalar_loss, Var wrt, double step, const Bindings& bindings = {},
                           FdStencil stencil = FdStencil::ThreePoint);

double fd_check(Graph& graph, Var scalar_loss, Var wrt, double step, const Bindings& bindings = {},
                FdStencil stencil = FdStencil::ThreePoint);

}  // namespace taskmod::ad
