// SPDX-License-Identifier: Apache-2.0

#include "taskmod/autodiff/ops.hpp"

#include "kernels.hpp"
#include "taskmod/common/error.hpp"

namespace taskmod::ad {

namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) throw Error("operation on an invalid Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw Error("operands belong to different graphs");
  return graph_of(a);
}

Var unary(OpKind kind, Var x, OpAttrs attrs = {}) {
  return graph_of(x).append(kind, std::move(attrs), {x.id});
}

Var binary(OpKind kind, Var a, Var b, OpAttrs attrs = {}) {
  return graph_of(a, b).append(kind, std::move(attrs), {a.id, b.id});
}

std::int64_t reduced_count(const Shape& s, const std::vector<std::int64_t>& axes) {
  std::int64_t n = 1;
  for (auto a : detail::normalize_axes(axes, s.size())) n *= s[static_cast<std::size_t>(a)];
  return n;
}

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }
Var div(Var a, Var b) { return binary(OpKind::Div, a, b); }

Var safe_div(Var a, Var b) {
  OpAttrs at;
  at.safe = true;
  return binary(OpKind::Div, a, b, at);
}

Var neg(Var x) { return unary(OpKind::Neg, x); }

Var scale(Var x, double s) {
  OpAttrs at;
  at.scalar = s;
  return unary(OpKind::Scale, x, at);
}

Var add_scalar(Var x, double s) {
  OpAttrs at;
  at.scalar = s;
  return unary(OpKind::AddScalar, x, at);
}

Var matmul(Var a, Var b) { return binary(OpKind::MatMul, a, b); }
Var transpose(Var x) { return unary(OpKind::Transpose, x); }

Var conv2d(Var x, Var w, std::int64_t stride, std::int64_t pad) {
  OpAttrs at;
  at.stride = stride;
  at.pad = pad;
  return binary(OpKind::Conv2d, x, w, at);
}

Var conv2d_grad_input(Var dy, Var w, const Shape& input_shape, std::int64_t stride, std::int64_t pad) {
  OpAttrs at;
  at.shape = input_shape;
  at.stride = stride;
  at.pad = pad;
  return binary(OpKind::Conv2dGradInput, dy, w, at);
}

Var conv2d_grad_weight(Var x, Var dy, const Shape& weight_shape, std::int64_t stride, std::int64_t pad) {
  OpAttrs at;
  at.shape = weight_shape;
  at.stride = stride;
  at.pad = pad;
  return binary(OpKind::Conv2dGradWeight, x, dy, at);
}

Var relu(Var x) { return unary(OpKind::Relu, x); }
Var relu6(Var x) { return unary(OpKind::Relu6, x); }

Var clamp(Var x, double lo, double hi) {
  OpAttrs at;
  at.lo = lo;
  at.hi = hi;
  return unary(OpKind::Clamp, x, at);
}

Var sigmoid(Var x) { return unary(OpKind::Sigmoid, x); }
Var tanh(Var x) { return unary(OpKind::Tanh, x); }
Var log(Var x) { return unary(OpKind::Log, x); }
Var exp(Var x) { return unary(OpKind::Exp, x); }
Var sqrt(Var x) { return unary(OpKind::Sqrt, x); }
Var abs(Var x) { return unary(OpKind::Abs, x); }
Var softplus(Var x) { return unary(OpKind::Softplus, x); }

Var sum(Var x, std::vector<std::int64_t> axes, bool keepdim) {
  OpAttrs at;
  at.axes = std::move(axes);
  at.keepdim = keepdim;
  return unary(OpKind::Sum, x, at);
}

Var sum_all(Var x) {
  std::vector<std::int64_t> axes(x.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<std::int64_t>(i);
  if (axes.empty()) return x;
  return sum(x, std::move(axes), false);
}

Var mean(Var x, std::vector<std::int64_t> axes, bool keepdim) {
  const auto n = reduced_count(x.shape(), axes);
  return scale(sum(x, std::move(axes), keepdim), 1.0 / static_cast<double>(n));
}

Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(numel(x.shape()))); }

Var broadcast_to(Var x, const Shape& shape) {
  if (x.shape() == shape) return x;
  OpAttrs at;
  at.shape = shape;
  return unary(OpKind::BroadcastTo, x, at);
}

Var sum_to(Var x, const Shape& shape) {
  if (x.shape() == shape) return x;
  OpAttrs at;
  at.shape = shape;
  return unary(OpKind::SumTo, x, at);
}

Var reshape(Var x, const Shape& shape) {
  if (x.shape() == shape) return x;
  OpAttrs at;
  at.shape = shape;
  return unary(OpKind::Reshape, x, at);
}

Var global_avg_pool(Var x) {
  if (x.shape().size() != 4) {
    throw ShapeError("global_avg_pool: invalid input shape " + to_string(x.shape()) + " (rank 4 required)");
  }
  return mean(x, {2, 3}, true);
}

Var upsample(Var x, std::int64_t factor) {
  if (factor == 1) return x;
  OpAttrs at;
  at.factor = factor;
  return unary(OpKind::Upsample, x, at);
}

Var sum_pool(Var x, std::int64_t factor) {
  if (factor == 1) return x;
  OpAttrs at;
  at.factor = factor;
  return unary(OpKind::SumPool, x, at);
}

Var concat(const std::vector<Var>& xs, std::int64_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  std::vector<NodeId> ids;
  for (const Var& v : xs) {
    graph_of(xs.front(), v);
    ids.push_back(v.id);
  }
  OpAttrs at;
  at.axis = axis;
  return xs.front().graph->append(OpKind::Concat, at, std::move(ids));
}

Var slice(Var x, std::int64_t axis, std::int64_t start, std::int64_t stop) {
  OpAttrs at;
  at.axis = axis;
  at.start = start;
  at.stop = stop;
  return unary(OpKind::Slice, x, at);
}

Var pad_axis(Var x, std::int64_t axis, std::int64_t start, std::int64_t length) {
  OpAttrs at;
  at.axis = axis;
  at.start = start;
  at.length = length;
  return unary(OpKind::Pad, x, at);
}

Var l2_norm(Var x, std::vector<std::int64_t> axes) {
  OpAttrs at;
  at.axes = std::move(axes);
  at.keepdim = true;
  return unary(OpKind::L2Norm, x, at);
}

Var detach(Var x) { return unary(OpKind::Detach, x); }
Var sign(Var x) { return unary(OpKind::Sign, x); }

Var step_mask(Var x, double lo, double hi) {
  OpAttrs at;
  at.lo = lo;
  at.hi = hi;
  return unary(OpKind::StepMask, x, at);
}

Var reduce_max(Var x, std::vector<std::int64_t> axes, bool keepdim) {
  OpAttrs at;
  at.axes = std::move(axes);
  at.keepdim = keepdim;
  return unary(OpKind::ReduceMax, x, at);
}

// The shift by the (detached) channel maximum leaves softmax unchanged, so
// treating it as a constant is exact.
Var softmax_channels(Var x) {
  if (x.shape().size() < 2) throw ShapeError("softmax: invalid input shape " + to_string(x.shape()));
  const Var z = x - detach(reduce_max(x, {1}, true));
  const Var e = exp(z);
  return e / sum(e, {1}, true);
}

Var log_softmax_channels(Var x) {
  if (x.shape().size() < 2) throw ShapeError("log_softmax: invalid input shape " + to_string(x.shape()));
  const Var z = x - detach(reduce_max(x, {1}, true));
  return z - log(sum(exp(z), {1}, true));
}

namespace {

Shape channel_shape(Var x, Var gain, Var bias) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError("batchnorm: invalid input shape " + to_string(s) + " (rank 4 required)");
  const Shape c{s[1]};
  if (gain.shape() != c || bias.shape() != c) {
    throw ShapeError("batchnorm: parameter shapes " + to_string(gain.shape()) + " and " + to_string(bias.shape()) +
                     " do not match channels of " + to_string(s));
  }
  return {1, s[1], 1, 1};
}

}  // namespace

BatchNormResult batch_norm_train(Var x, Var gain, Var bias, double eps) {
  const Shape cs = channel_shape(x, gain, bias);
  const Var m = mean(x, {0, 2, 3}, true);
  const Var xc = x - m;
  const Var v = mean(xc * xc, {0, 2, 3}, true);
  const Var xhat = xc / sqrt(v + eps);
  const Var out = xhat * reshape(gain, cs) + reshape(bias, cs);
  return {out, m, v};
}

Var batch_norm_eval(Var x, Var gain, Var bias, Var running_mean, Var running_var, double eps) {
  const Shape cs = channel_shape(x, gain, bias);
  if (running_mean.shape() != gain.shape() || running_var.shape() != gain.shape()) {
    throw ShapeError("batchnorm: running statistics do not match channels of " + to_string(x.shape()));
  }
  const Var s = gain / sqrt(running_var + eps);
  const Var shift = bias - running_mean * s;
  return x * reshape(s, cs) + reshape(shift, cs);
}

}  // namespace taskmod::ad
