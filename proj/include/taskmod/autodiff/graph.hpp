// SPDX-License-Identifier: Apache-2.0
//
// Append-only computation graph with reverse-mode differentiation. Gradients
// produced by backward() are ordinary nodes of the same graph, so they can be
// differentiated again (double backprop).

#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taskmod/autodiff/tensor.hpp"

namespace taskmod::ad {

using NodeId = std::int32_t;

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Scale,      // x * attrs.scalar
  AddScalar,  // x + attrs.scalar
  MatMul,
  Transpose,
  Conv2d,
  Conv2dGradInput,
  Conv2dGradWeight,
  Relu,
  Relu6,
  Clamp,
  Sigmoid,
  Tanh,
  Log,
  Exp,
  Sqrt,
  Abs,
  Softplus,
  Sum,
  BroadcastTo,
  SumTo,
  Reshape,
  Upsample,  // nearest neighbour, integer factor
  SumPool,   // adjoint of Upsample
  Concat,
  Slice,
  Pad,  // adjoint of Slice: embeds into zeros along one axis
  L2Norm,
  // Ops below have zero derivative everywhere.
  Detach,
  Sign,
  StepMask,  // 1 where lo < x < hi, else 0
  ReduceMax,
  // Composite kinds: apply() expands them into the primitives above.
  Mean,
  GlobalAvgPool,
  BatchNorm,
  SoftmaxChannels,
  LogSoftmaxChannels,
};

std::string_view op_name(OpKind kind);
// Throws UnknownOpError for names that do not denote an op kind.
OpKind op_kind_from_name(std::string_view name);
bool is_composite(OpKind kind);

struct OpAttrs {
  std::vector<std::int64_t> axes;  // Sum / Mean / L2Norm / ReduceMax
  Shape shape;                     // BroadcastTo / SumTo / Reshape / conv grads
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  std::int64_t factor = 2;  // Upsample / SumPool
  std::int64_t axis = 0;    // Concat / Slice / Pad
  std::int64_t start = 0;
  std::int64_t stop = 0;
  std::int64_t length = 0;  // Pad: full length of the padded axis
  double scalar = 0.0;
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double eps = 1e-5;
  bool keepdim = false;
  bool safe = false;   // Div: 0 where the denominator is 0
  bool train = true;   // BatchNorm
};

struct Node {
  NodeId id = -1;
  Shape shape;
  OpKind op = OpKind::Leaf;
  OpAttrs attrs;
  std::vector<NodeId> inputs;
  std::optional<Tensor> value;  // stored only for leaves
  std::string name;
};

class Graph;

// Lightweight handle to a node; valid as long as its Graph lives.
struct Var {
  Graph* graph = nullptr;
  NodeId id = -1;

  Shape shape() const;
  const Node& node() const;
  bool valid() const { return graph != nullptr && id >= 0; }
};

using Bindings = std::map<NodeId, Tensor>;

class Graph {
 public:
  explicit Graph(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Unbound placeholder; must be bound at evaluation time.
  Var leaf(Shape shape, std::string name = {});
  // Leaf with a stored value; bindings may still override it.
  Var constant(Tensor value, std::string name = {});
  Var zeros(const Shape& shape);
  Var ones(const Shape& shape);

  // Appends a primitive node after validating and inferring its shape.
  Var append(OpKind kind, OpAttrs attrs, std::vector<NodeId> inputs);

  void bind(Var leaf, Tensor value);

  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t rng_seed() const { return rng_seed_; }

  // True when `target` is an ancestor of (or equal to) `from`.
  bool depends_on(Var from, Var target) const;

  // Values of `targets`, in order. Intermediates are released after their
  // last consumer runs; accumulation order is fixed, so results are
  // bit-identical for identical bindings.
  std::vector<Tensor> evaluate(std::span<const Var> targets, const Bindings& bindings = {}) const;
  Tensor evaluate(Var target, const Bindings& bindings = {}) const;

 private:
  std::vector<Node> nodes_;
  std::uint64_t rng_seed_;
};

// Generic entry point: builds `kind` over `inputs`. Composite kinds expand
// into several primitive nodes and the final one is returned.
Var apply(Graph& graph, OpKind kind, const OpAttrs& attrs, std::span<const Var> inputs);
Var apply(Graph& graph, std::string_view kind, const OpAttrs& attrs, std::span<const Var> inputs);

// d(loss)/d(wrt) as graph nodes. Unreachable wrt nodes get an exact zero
// constant. Derivatives of relu/relu6/clamp/abs masks are taken as zero, in
// the first- and the second-order pass alike.
std::vector<Var> backward(Var loss, std::span<const Var> wrt);
Var backward(Var loss, Var wrt);

}  // namespace taskmod::ad
