// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "taskmod/autodiff/graph.hpp"

namespace taskmod::ad {

// Elementwise binary ops broadcast numpy-style (right-aligned, size-1 dims).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var safe_div(Var a, Var b);  // 0 where b == 0
Var neg(Var x);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);

Var matmul(Var a, Var b);  // [m,k] x [k,n]
Var transpose(Var x);      // 2-d only

// x [N,Ci,H,W], w [Co,Ci,k,k] -> [N,Co,Ho,Wo]; zero padding.
Var conv2d(Var x, Var w, std::int64_t stride = 1, std::int64_t pad = 0);
Var conv2d_grad_input(Var dy, Var w, const Shape& input_shape, std::int64_t stride, std::int64_t pad);
Var conv2d_grad_weight(Var x, Var dy, const Shape& weight_shape, std::int64_t stride, std::int64_t pad);

Var relu(Var x);
Var relu6(Var x);
Var clamp(Var x, double lo, double hi);
Var sigmoid(Var x);
Var tanh(Var x);
Var log(Var x);
Var exp(Var x);
Var sqrt(Var x);
Var abs(Var x);
Var softplus(Var x);  // log(1 + e^x), overflow-safe

Var sum(Var x, std::vector<std::int64_t> axes, bool keepdim = false);
Var sum_all(Var x);  // -> shape []
Var mean(Var x, std::vector<std::int64_t> axes, bool keepdim = false);
Var mean_all(Var x);
Var broadcast_to(Var x, const Shape& shape);
Var sum_to(Var x, const Shape& shape);
Var reshape(Var x, const Shape& shape);

Var global_avg_pool(Var x);  // [N,C,H,W] -> [N,C,1,1]
Var upsample(Var x, std::int64_t factor = 2);
Var sum_pool(Var x, std::int64_t factor = 2);

Var concat(const std::vector<Var>& xs, std::int64_t axis);
Var slice(Var x, std::int64_t axis, std::int64_t start, std::int64_t stop);
Var pad_axis(Var x, std::int64_t axis, std::int64_t start, std::int64_t length);

// sqrt of the sum of squares over `axes`, kept as size-1 dims. The
// derivative at an all-zero slice is taken as zero.
Var l2_norm(Var x, std::vector<std::int64_t> axes);

Var detach(Var x);
Var sign(Var x);
Var step_mask(Var x, double lo, double hi);
Var reduce_max(Var x, std::vector<std::int64_t> axes, bool keepdim = true);

Var softmax_channels(Var x);      // over axis 1
Var log_softmax_channels(Var x);  // over axis 1

struct BatchNormResult {
  Var out;
  Var batch_mean;  // [1,C,1,1], train mode only
  Var batch_var;   // biased, [1,C,1,1], train mode only
};

// Per-channel normalization of [N,C,H,W]. gain/bias are [C]. In train mode
// batch statistics are part of the graph; in eval mode running_mean and
// running_var ([C]) make it a fixed affine map.
BatchNormResult batch_norm_train(Var x, Var gain, Var bias, double eps = 1e-5);
Var batch_norm_eval(Var x, Var gain, Var bias, Var running_mean, Var running_var,
                    double eps = 1e-5);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var x) { return neg(x); }
inline Var operator*(double s, Var x) { return scale(x, s); }
inline Var operator*(Var x, double s) { return scale(x, s); }
inline Var operator+(Var x, double s) { return add_scalar(x, s); }

}  // namespace taskmod::ad
