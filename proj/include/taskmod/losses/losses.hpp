// SPDX-License-Identifier: Apache-2.0
//
// Per-task dense losses on batched predictions [N,C,S,S] and the composite
// weighting. Targets are plain tensors and never receive gradients.

#pragma once

#include <map>
#include <optional>

#include "taskmod/autodiff/graph.hpp"
#include "taskmod/network/config.hpp"

namespace taskmod {

inline constexpr double kEdgePositiveWeight = 0.95;
inline constexpr double kEdgeNegativeWeight = 0.05;
inline constexpr int kIgnoreLabel = 255;

// mean of -[0.95 y log s(z) + 0.05 (1-y) log(1 - s(z))]; gt in {0,1}, same shape as logits.
ad::Var edge_bce(ad::Var logits, const ad::Tensor& gt);

// Mean softmax cross-entropy over pixels whose label is not 255.
// logits [N,K,S,S]; labels [N,1,S,S] (or [N,S,S]). Throws Error when every
// pixel is ignored.
ad::Var seg_ce(ad::Var logits, const ad::Tensor& labels);

// Predictions are normalized per pixel, then the mean |n - gt| over the 3
// components of valid pixels. pred/gt [N,3,S,S], valid [N,1,S,S].
ad::Var normals_l1(ad::Var pred, const ad::Tensor& gt, const ad::Tensor& valid);

// mean|d - d*| + gamma (mean|dx(d - d*)| + mean|dy(d - d*)|) with forward
// differences inside the map. pred/gt [N,1,S,S], S >= 2.
ad::Var depth_l1_smooth(ad::Var pred, const ad::Tensor& gt, double gamma = 1.0);

// Ground truth for one batch, laid out like the network outputs.
struct BatchTargets {
  ad::Tensor edge;     // [N,1,S,S]
  ad::Tensor seg;      // [N,1,S,S]
  ad::Tensor normals;  // [N,3,S,S]
  ad::Tensor depth;    // [N,1,S,S]
  ad::Tensor valid;    // [N,1,S,S]
};

ad::Var task_loss(const TaskSpec& spec, ad::Var pred, const BatchTargets& targets, double depth_gamma = 1.0);

// (1 - w_d) sum_t w_t L_t + w_d L_d. Throws ConfigError for negative
// weights, w_d outside [0, 1), a missing weight, or w_d > 0 without L_d.
ad::Var composite(const std::map<int, ad::Var>& per_task, const std::map<int, double>& weights,
                  std::optional<ad::Var> disc_loss, double w_d);

struct LossReport {
  std::map<int, double> per_task;
  double discriminator = 0.0;
  double composite = 0.0;
};

// Same formula on plain values.
LossReport make_loss_report(const std::map<int, double>& per_task, const std::map<int, double>& weights,
                            double disc_loss, double w_d);

}  // namespace taskmod
