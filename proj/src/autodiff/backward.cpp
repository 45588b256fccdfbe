// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode rules. Every rule is written with graph ops only, so the
// returned gradients can be differentiated again.

#include <array>
#include <optional>

#include "kernels.hpp"
#include "taskmod/autodiff/graph.hpp"
#include "taskmod/autodiff/ops.hpp"
#include "taskmod/common/error.hpp"

namespace taskmod::ad {

namespace {

bool has_derivative(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf:
    case OpKind::Detach:
    case OpKind::Sign:
    case OpKind::StepMask:
    case OpKind::ReduceMax:
      return false;
    default:
      return true;
  }
}

// Contribution of upstream gradient `gy` to input `k` of node `n`.
// `x` holds the input Vars, `y` the node itself.
Var input_grad(const Node& n, std::size_t k, Var gy, const std::vector<Var>& x, Var y) {
  Graph& g = *gy.graph;
  const auto& at = n.attrs;
  std::vector<Shape> shapes;
  for (const Var& v : x) shapes.push_back(v.shape());
  auto shape_of = [&](std::size_t i) -> const Shape& { return shapes[i]; };
  switch (n.op) {
    case OpKind::Add:
      return sum_to(gy, shape_of(k));
    case OpKind::Sub:
      return k == 0 ? sum_to(gy, shape_of(0)) : sum_to(neg(gy), shape_of(1));
    case OpKind::Mul:
      return sum_to(gy * x[1 - k], shape_of(k));
    case OpKind::Div:
      if (k == 0) return sum_to(at.safe ? safe_div(gy, x[1]) : div(gy, x[1]), shape_of(0));
      // d(a/b)/db = -(a/b)/b
      return sum_to(neg(at.safe ? safe_div(gy * y, x[1]) : div(gy * y, x[1])), shape_of(1));
    case OpKind::Neg:
      return neg(gy);
    case OpKind::Scale:
      return scale(gy, at.scalar);
    case OpKind::AddScalar:
      return gy;
    case OpKind::MatMul:
      return k == 0 ? matmul(gy, transpose(x[1])) : matmul(transpose(x[0]), gy);
    case OpKind::Transpose:
      return transpose(gy);
    case OpKind::Conv2d:
      if (k == 0) return conv2d_grad_input(gy, x[1], shape_of(0), at.stride, at.pad);
      return conv2d_grad_weight(x[0], gy, shape_of(1), at.stride, at.pad);
    case OpKind::Conv2dGradInput:
      // inputs (dy, w); <G, GI(dy,w)> = <conv(G,w), dy>
      if (k == 0) return conv2d(gy, x[1], at.stride, at.pad);
      return conv2d_grad_weight(gy, x[0], shape_of(1), at.stride, at.pad);
    case OpKind::Conv2dGradWeight:
      // inputs (x, dy); <G, GW(x,dy)> = <conv(x,G), dy>
      if (k == 0) return conv2d_grad_input(x[1], gy, shape_of(0), at.stride, at.pad);
      return conv2d(x[0], gy, at.stride, at.pad);
    case OpKind::Relu:
      return gy * step_mask(x[0], 0.0, std::numeric_limits<double>::infinity());
    case OpKind::Relu6:
      return gy * step_mask(x[0], 0.0, 6.0);
    case OpKind::Clamp:
      return gy * step_mask(x[0], at.lo, at.hi);
    case OpKind::Sigmoid:
      return gy * (y * add_scalar(neg(y), 1.0));
    case OpKind::Tanh:
      return gy * add_scalar(neg(y * y), 1.0);
    case OpKind::Log:
      return gy / x[0];
    case OpKind::Exp:
      return gy * y;
    case OpKind::Sqrt:
      return scale(gy / y, 0.5);
    case OpKind::Abs:
      return gy * sign(x[0]);
    case OpKind::Softplus:
      return gy * sigmoid(x[0]);
    case OpKind::Sum: {
      const Shape keep = [&] {
        Shape s = shape_of(0);
        for (auto a : detail::normalize_axes(at.axes, s.size())) s[static_cast<std::size_t>(a)] = 1;
        return s;
      }();
      return broadcast_to(reshape(gy, keep), shape_of(0));
    }
    case OpKind::BroadcastTo:
      return sum_to(gy, shape_of(0));
    case OpKind::SumTo: {
      // gy has the reduced shape; realign to the input rank first.
      const Shape gs = gy.shape();
      Shape aligned(shape_of(0).size() - gs.size(), 1);
      aligned.insert(aligned.end(), gs.begin(), gs.end());
      return broadcast_to(reshape(gy, aligned), shape_of(0));
    }
    case OpKind::Reshape:
      return reshape(gy, shape_of(0));
    case OpKind::Upsample:
      return sum_pool(gy, at.factor);
    case OpKind::SumPool:
      return upsample(gy, at.factor);
    case OpKind::Concat: {
      const auto rank = static_cast<std::int64_t>(n.shape.size());
      const auto axis = at.axis < 0 ? at.axis + rank : at.axis;
      std::int64_t start = 0;
      for (std::size_t i = 0; i < k; ++i) start += shape_of(i)[static_cast<std::size_t>(axis)];
      return slice(gy, axis, start, start + shape_of(k)[static_cast<std::size_t>(axis)]);
    }
    case OpKind::Slice: {
      const auto rank = static_cast<std::int64_t>(n.shape.size());
      const auto axis = at.axis < 0 ? at.axis + rank : at.axis;
      return pad_axis(gy, axis, at.start, shape_of(0)[static_cast<std::size_t>(axis)]);
    }
    case OpKind::Pad: {
      const auto rank = static_cast<std::int64_t>(n.shape.size());
      const auto axis = at.axis < 0 ? at.axis + rank : at.axis;
      return slice(gy, axis, at.start, at.start + shape_of(0)[static_cast<std::size_t>(axis)]);
    }
    case OpKind::L2Norm:
      return broadcast_to(gy, shape_of(0)) * safe_div(x[0], broadcast_to(y, shape_of(0)));
    default:
      (void)g;
      throw UnknownOpError(std::string("no derivative rule for ") + std::string(op_name(n.op)));
  }
}

}  // namespace

std::vector<Var> backward(Var loss, std::span<const Var> wrt) {
  if (!loss.valid()) throw Error("backward: invalid loss");
  Graph& g = *loss.graph;
  const Shape loss_shape = loss.shape();
  if (numel(loss_shape) != 1 || loss_shape.size() > 1) {
    throw NonScalarLossError("backward: loss must have shape [] or [1], got " + to_string(loss_shape));
  }

  const auto top = static_cast<std::size_t>(loss.id);
  std::vector<char> is_wrt(top + 1, 0);
  for (const Var& w : wrt) {
    if (w.graph != &g) throw Error("backward: wrt node belongs to another graph");
    if (static_cast<std::size_t>(w.id) <= top) is_wrt[static_cast<std::size_t>(w.id)] = 1;
  }

  // needs[i]: some wrt node is an ancestor of i through differentiable edges.
  std::vector<char> needs(top + 1, 0);
  for (std::size_t i = 0; i <= top; ++i) {
    if (is_wrt[i]) {
      needs[i] = 1;
      continue;
    }
    const Node& n = g.node(static_cast<NodeId>(i));
    if (!has_derivative(n.op)) continue;
    for (NodeId in : n.inputs) {
      if (needs[static_cast<std::size_t>(in)]) {
        needs[i] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Var>> adj(top + 1);
  if (needs[top]) adj[top] = g.ones(loss_shape);

  for (std::size_t i = top + 1; i-- > 0;) {
    if (!adj[i] || !needs[i]) continue;
    // Copy: appending nodes may reallocate the node array.
    const Node n = g.node(static_cast<NodeId>(i));
    if (!has_derivative(n.op)) continue;
    std::vector<Var> xs;
    xs.reserve(n.inputs.size());
    for (NodeId in : n.inputs) xs.push_back(Var{&g, in});
    const Var y{&g, static_cast<NodeId>(i)};
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const auto j = static_cast<std::size_t>(n.inputs[k]);
      if (!needs[j]) continue;
      const Var contrib = input_grad(n, k, *adj[i], xs, y);
      adj[j] = adj[j] ? add(*adj[j], contrib) : contrib;
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto i = static_cast<std::size_t>(w.id);
    out.push_back(i <= top && adj[i] ? *adj[i] : g.zeros(w.shape()));
  }
  return out;
}

Var backward(Var loss, Var wrt) {
  const std::array<Var, 1> w{wrt};
  return backward(loss, w).front();
}

}  // namespace taskmod::ad
