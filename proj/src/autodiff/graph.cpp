// SPDX-License-Identifier: Apache-2.0

#include "taskmod/autodiff/graph.hpp"

#include <algorithm>
#include <array>

#include "kernels.hpp"
#include "taskmod/autodiff/ops.hpp"
#include "taskmod/common/error.hpp"

namespace taskmod::ad {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 42> kOpNames{{
    {OpKind::Leaf, "leaf"},
    {OpKind::Add, "add"},
    {OpKind::Sub, "sub"},
    {OpKind::Mul, "mul"},
    {OpKind::Div, "div"},
    {OpKind::Neg, "negate"},
    {OpKind::Scale, "scale"},
    {OpKind::AddScalar, "add_scalar"},
    {OpKind::MatMul, "matmul"},
    {OpKind::Transpose, "transpose"},
    {OpKind::Conv2d, "conv2d"},
    {OpKind::Conv2dGradInput, "conv2d_grad_input"},
    {OpKind::Conv2dGradWeight, "conv2d_grad_weight"},
    {OpKind::Relu, "relu"},
    {OpKind::Relu6, "relu6"},
    {OpKind::Clamp, "clamp"},
    {OpKind::Sigmoid, "sigmoid"},
    {OpKind::Tanh, "tanh"},
    {OpKind::Log, "log"},
    {OpKind::Exp, "exp"},
    {OpKind::Sqrt, "sqrt"},
    {OpKind::Abs, "abs"},
    {OpKind::Softplus, "softplus"},
    {OpKind::Sum, "sum"},
    {OpKind::BroadcastTo, "broadcast_to"},
    {OpKind::SumTo, "sum_to"},
    {OpKind::Reshape, "reshape"},
    {OpKind::Upsample, "upsample"},
    {OpKind::SumPool, "sum_pool"},
    {OpKind::Concat, "concat"},
    {OpKind::Slice, "slice"},
    {OpKind::Pad, "pad"},
    {OpKind::L2Norm, "l2_norm"},
    {OpKind::Detach, "detach"},
    {OpKind::Sign, "sign"},
    {OpKind::StepMask, "step_mask"},
    {OpKind::ReduceMax, "reduce_max"},
    {OpKind::Mean, "mean"},
    {OpKind::GlobalAvgPool, "global_avg_pool"},
    {OpKind::BatchNorm, "batchnorm"},
    {OpKind::SoftmaxChannels, "softmax"},
    {OpKind::LogSoftmaxChannels, "log_softmax"},
}};

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, n] : kOpNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

OpKind op_kind_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name && k != OpKind::Leaf) return k;
  }
  throw UnknownOpError("unknown op kind '" + std::string(name) + "'");
}

bool is_composite(OpKind kind) {
  switch (kind) {
    case OpKind::Mean:
    case OpKind::GlobalAvgPool:
    case OpKind::BatchNorm:
    case OpKind::SoftmaxChannels:
    case OpKind::LogSoftmaxChannels:
      return true;
    default:
      return false;
  }
}

Shape Var::shape() const { return graph->node(id).shape; }
const Node& Var::node() const { return graph->node(id); }

Var Graph::leaf(Shape shape, std::string name) {
  Node n;
  n.id = static_cast<NodeId>(nodes_.size());
  n.shape = std::move(shape);
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return {this, nodes_.back().id};
}

Var Graph::constant(Tensor value, std::string name) {
  Var v = leaf(value.shape, std::move(name));
  nodes_.back().value = std::move(value);
  return v;
}

Var Graph::zeros(const Shape& shape) { return constant(Tensor(shape, 0.0)); }
Var Graph::ones(const Shape& shape) { return constant(Tensor(shape, 1.0)); }

Var Graph::append(OpKind kind, OpAttrs attrs, std::vector<NodeId> inputs) {
  std::vector<const Shape*> shapes;
  shapes.reserve(inputs.size());
  for (NodeId i : inputs) {
    if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size()) {
      throw Error("append: input id " + std::to_string(i) + " is not in this graph");
    }
    shapes.push_back(&nodes_[static_cast<std::size_t>(i)].shape);
  }
  Shape shape = detail::infer_shape(kind, attrs, shapes);
  Node n;
  n.id = static_cast<NodeId>(nodes_.size());
  n.shape = std::move(shape);
  n.op = kind;
  n.attrs = std::move(attrs);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return {this, nodes_.back().id};
}

void Graph::bind(Var leaf, Tensor value) {
  auto& n = nodes_.at(static_cast<std::size_t>(leaf.id));
  if (n.op != OpKind::Leaf) throw Error("bind: node " + std::to_string(leaf.id) + " is not a leaf");
  if (value.shape != n.shape) {
    throw ShapeError("bind: value shape " + to_string(value.shape) + " does not match leaf shape " +
                     to_string(n.shape));
  }
  n.value = std::move(value);
}

bool Graph::depends_on(Var from, Var target) const {
  if (target.id > from.id) return false;
  std::vector<char> mark(static_cast<std::size_t>(from.id) + 1, 0);
  mark[static_cast<std::size_t>(from.id)] = 1;
  for (NodeId id = from.id; id >= target.id; --id) {
    if (!mark[static_cast<std::size_t>(id)]) continue;
    if (id == target.id) return true;
    for (NodeId in : nodes_[static_cast<std::size_t>(id)].inputs) mark[static_cast<std::size_t>(in)] = 1;
  }
  return false;
}

std::vector<Tensor> Graph::evaluate(std::span<const Var> targets, const Bindings& bindings) const {
  if (targets.empty()) return {};
  NodeId top = -1;
  for (const Var& t : targets) {
    if (t.graph != this) throw Error("evaluate: target belongs to another graph");
    top = std::max(top, t.id);
  }
  const auto count = static_cast<std::size_t>(top) + 1;
  std::vector<char> needed(count, 0), is_target(count, 0);
  for (const Var& t : targets) needed[static_cast<std::size_t>(t.id)] = is_target[static_cast<std::size_t>(t.id)] = 1;

  std::vector<NodeId> last_use(count, -1);
  std::vector<NodeId> missing;
  for (NodeId id = top; id >= 0; --id) {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!needed[static_cast<std::size_t>(id)]) continue;
    if (n.op == OpKind::Leaf && !n.value && !bindings.count(id)) missing.push_back(id);
    for (NodeId in : n.inputs) {
      needed[static_cast<std::size_t>(in)] = 1;
      last_use[static_cast<std::size_t>(in)] = std::max(last_use[static_cast<std::size_t>(in)], id);
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    std::string ids;
    for (NodeId m : missing) ids += (ids.empty() ? "" : ", ") + std::to_string(m);
    throw UnboundLeafError("unbound leaves: " + ids);
  }

  std::vector<Tensor> owned(count);
  std::vector<const Tensor*> value(count, nullptr);
  std::vector<const Tensor*> args;
  for (NodeId id = 0; id <= top; ++id) {
    const auto i = static_cast<std::size_t>(id);
    if (!needed[i]) continue;
    const auto& n = nodes_[i];
    if (n.op == OpKind::Leaf) {
      auto b = bindings.find(id);
      if (b != bindings.end()) {
        if (b->second.shape != n.shape) {
          throw ShapeError("binding for leaf " + std::to_string(id) + " has shape " + to_string(b->second.shape) +
                           ", expected " + to_string(n.shape));
        }
        value[i] = &b->second;
      } else {
        value[i] = &*n.value;
      }
      continue;
    }
    args.clear();
    for (NodeId in : n.inputs) args.push_back(value[static_cast<std::size_t>(in)]);
    owned[i] = detail::compute(n, args);
    value[i] = &owned[i];
    for (NodeId in : n.inputs) {
      const auto j = static_cast<std::size_t>(in);
      if (last_use[j] == id && !is_target[j] && nodes_[j].op != OpKind::Leaf) {
        owned[j] = Tensor();
        value[j] = nullptr;
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(targets.size());
  for (const Var& t : targets) out.push_back(*value[static_cast<std::size_t>(t.id)]);
  return out;
}

Tensor Graph::evaluate(Var target, const Bindings& bindings) const {
  const std::array<Var, 1> t{target};
  return std::move(evaluate(t, bindings).front());
}

Var apply(Graph& graph, OpKind kind, const OpAttrs& attrs, std::span<const Var> inputs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
  };
  for (const Var& v : inputs) {
    if (v.graph != &graph) throw Error("apply: input belongs to another graph");
  }
  switch (kind) {
    case OpKind::Leaf:
      throw UnknownOpError("leaf nodes are created with Graph::leaf or Graph::constant");
    case OpKind::Mean:
      need(1);
      return mean(inputs[0], attrs.axes, attrs.keepdim);
    case OpKind::GlobalAvgPool:
      need(1);
      return global_avg_pool(inputs[0]);
    case OpKind::SoftmaxChannels:
      need(1);
      return softmax_channels(inputs[0]);
    case OpKind::LogSoftmaxChannels:
      need(1);
      return log_softmax_channels(inputs[0]);
    case OpKind::BatchNorm:
      if (attrs.train) {
        need(3);
        return batch_norm_train(inputs[0], inputs[1], inputs[2], attrs.eps).out;
      }
      need(5);
      return batch_norm_eval(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], attrs.eps);
    default: {
      if (static_cast<std::size_t>(kind) >= kOpNames.size()) {
        throw UnknownOpError("unknown op kind " + std::to_string(static_cast<int>(kind)));
      }
      std::vector<NodeId> ids;
      for (const Var& v : inputs) ids.push_back(v.id);
      return graph.append(kind, attrs, std::move(ids));
    }
  }
}

Var apply(Graph& graph, std::string_view kind, const OpAttrs& attrs, std::span<const Var> inputs) {
  return apply(graph, op_kind_from_name(kind), attrs, inputs);
}

}  // namespace taskmod::ad
