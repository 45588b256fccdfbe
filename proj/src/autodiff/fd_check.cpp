// SPDX-License-Identifier: Apache-2.0

#include "taskmod/autodiff/fd_check.hpp"

#include <algorithm>
#include <cmath>

#include "taskmod/common/error.hpp"

namespace taskmod::ad {

FdResult fd_check_detailed(Graph& graph, Var scalar_loss, Var wrt, double step, const Bindings& bindings,
                           FdStencil stencil) {
  if (!(step > 0.0)) throw Error("fd_check: step must be positive");
  if (wrt.node().op != OpKind::Leaf) throw Error("fd_check: wrt must be a leaf node");

  const Var grad = backward(scalar_loss, wrt);
  const Tensor analytic = graph.evaluate(grad, bindings);

  Bindings probe = bindings;
  Tensor base;
  if (auto it = bindings.find(wrt.id); it != bindings.end()) {
    base = it->second;
  } else if (wrt.node().value) {
    base = *wrt.node().value;
  } else {
    throw UnboundLeafError("unbound leaves: " + std::to_string(wrt.id));
  }

  FdResult res;
  auto at = [&](std::size_t i, double offset) {
    Tensor moved = base;
    moved[i] += offset;
    probe[wrt.id] = std::move(moved);
    return graph.evaluate(scalar_loss, probe)[0];
  };
  for (std::size_t i = 0; i < base.size(); ++i) {
    double numeric = 0.0;
    if (stencil == FdStencil::ThreePoint) {
      numeric = (at(i, step) - at(i, -step)) / (2.0 * step);
    } else {
      numeric = (-at(i, 2.0 * step) + 8.0 * at(i, step) - 8.0 * at(i, -step) + at(i, -2.0 * step)) / (12.0 * step);
    }
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double err = std::abs(a - numeric) / denom;
    if (err > res.max_rel_error || i == 0) {
      res.max_rel_error = std::max(res.max_rel_error, err);
      if (err >= res.max_rel_error) {
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

double fd_check(Graph& graph, Var scalar_loss, Var wrt, double step, const Bindings& bindings, FdStencil stencil) {
  return fd_check_detailed(graph, scalar_loss, wrt, step, bindings, stencil).max_rel_error;
}

}  // namespace taskmod::ad
