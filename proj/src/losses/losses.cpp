// SPDX-License-Identifier: Apache-2.0

#include "taskmod/losses/losses.hpp"

#include <cmath>

#include "taskmod/autodiff/ops.hpp"
#include "taskmod/common/error.hpp"

namespace taskmod {

using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

void require_shape(const char* fn, const Shape& pred, const Shape& target) {
  if (pred != target) {
    throw ShapeError(std::string(fn) + ": prediction " + ad::to_string(pred) + " vs target " + ad::to_string(target));
  }
}

// [N,1,S,S] view of a per-pixel map given as [N,S,S] or [N,1,S,S].
Shape pixel_shape(const char* fn, const Shape& pred, const Tensor& map) {
  const Shape want{pred[0], 1, pred[2], pred[3]};
  if (map.shape == want) return want;
  if (map.shape == Shape{pred[0], pred[2], pred[3]}) return want;
  throw ShapeError(std::string(fn) + ": prediction " + ad::to_string(pred) + " vs per-pixel map " +
                   ad::to_string(map.shape));
}

void require_rank4(const char* fn, const Shape& s) {
  if (s.size() != 4) throw ShapeError(std::string(fn) + ": expected [N,C,S,S], got " + ad::to_string(s));
}

}  // namespace

Var edge_bce(Var logits, const Tensor& gt) {
  const Shape s = logits.shape();
  require_shape("edge_bce", s, gt.shape);
  Tensor pos(s), negw(s);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    pos[i] = kEdgePositiveWeight * gt[i];
    negw[i] = kEdgeNegativeWeight * (1.0 - gt[i]);
  }
  ad::Graph& g = *logits.graph;
  // -log s(z) = softplus(-z), -log(1 - s(z)) = softplus(z)
  const Var l = g.constant(std::move(pos)) * ad::softplus(-logits) + g.constant(std::move(negw)) * ad::softplus(logits);
  return ad::mean_all(l);
}

Var seg_ce(Var logits, const Tensor& labels) {
  const Shape s = logits.shape();
  require_rank4("seg_ce", s);
  pixel_shape("seg_ce", s, labels);
  const std::int64_t n = s[0], k = s[1], hw = s[2] * s[3];
  Tensor onehot(s, 0.0);
  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < hw; ++p) {
      const double raw = labels[static_cast<std::size_t>(i * hw + p)];
      const auto lab = static_cast<std::int64_t>(raw);
      if (lab == kIgnoreLabel) continue;
      if (lab < 0 || lab >= k || static_cast<double>(lab) != raw) {
        throw ShapeError("seg_ce: label " + std::to_string(raw) + " outside 0.." + std::to_string(k - 1));
      }
      onehot[static_cast<std::size_t>((i * k + lab) * hw + p)] = 1.0;
      ++valid;
    }
  }
  if (valid == 0) throw Error("seg_ce: every pixel carries the ignore label");
  const Var picked = logits.graph->constant(std::move(onehot)) * ad::log_softmax_channels(logits);
  return ad::scale(ad::sum_all(picked), -1.0 / static_cast<double>(valid));
}

Var normals_l1(Var pred, const Tensor& gt, const Tensor& valid) {
  const Shape s = pred.shape();
  require_rank4("normals_l1", s);
  if (s[1] != 3) throw ShapeError("normals_l1: expected 3 channels, got " + ad::to_string(s));
  require_shape("normals_l1", s, gt.shape);
  const Shape ms = pixel_shape("normals_l1", s, valid);
  double count = 0.0;
  for (double v : valid.data) count += v != 0.0 ? 1.0 : 0.0;
  if (count == 0.0) throw Error("normals_l1: the validity mask is empty");
  Tensor mask(ms);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = valid[i] != 0.0 ? 1.0 : 0.0;
  ad::Graph& g = *pred.graph;
  // eps = 1e-8 guard on the norm
  const Var norm = ad::sqrt(ad::add_scalar(ad::sum(pred * pred, {1}, true), 1e-16));
  const Var diff = ad::abs(pred / norm - g.constant(gt));
  return ad::scale(ad::sum_all(diff * g.constant(std::move(mask))), 1.0 / (3.0 * count));
}

Var depth_l1_smooth(Var pred, const Tensor& gt, double gamma) {
  const Shape s = pred.shape();
  require_rank4("depth_l1_smooth", s);
  if (s[1] != 1) throw ShapeError("depth_l1_smooth: expected 1 channel, got " + ad::to_string(s));
  if (s[2] < 2 || s[3] < 2) throw ShapeError("depth_l1_smooth: maps must be at least 2x2, got " + ad::to_string(s));
  Tensor target = gt;
  target.shape = pixel_shape("depth_l1_smooth", s, gt);
  const Var e = pred - pred.graph->constant(std::move(target));
  const Var dx = ad::slice(e, 3, 1, s[3]) - ad::slice(e, 3, 0, s[3] - 1);
  const Var dy = ad::slice(e, 2, 1, s[2]) - ad::slice(e, 2, 0, s[2] - 1);
  const Var data = ad::mean_all(ad::abs(e));
  if (gamma == 0.0) return data;
  return data + ad::scale(ad::mean_all(ad::abs(dx)) + ad::mean_all(ad::abs(dy)), gamma);
}

Var task_loss(const TaskSpec& spec, Var pred, const BatchTargets& t, double depth_gamma) {
  switch (spec.loss_kind) {
    case LossKind::EdgeBce:
      return edge_bce(pred, t.edge);
    case LossKind::SegCe:
      return seg_ce(pred, t.seg);
    case LossKind::NormalsL1:
      return normals_l1(pred, t.normals, t.valid);
    case LossKind::DepthL1Smooth:
      return depth_l1_smooth(pred, t.depth, depth_gamma);
  }
  throw ConfigError("unknown loss kind");
}

namespace {

void check_weights(const std::map<int, double>& weights, double w_d) {
  if (!(w_d >= 0.0 && w_d < 1.0)) throw ConfigError("w_d must lie in [0, 1), got " + std::to_string(w_d));
  for (const auto& [t, w] : weights) {
    if (w < 0.0) throw ConfigError("negative loss weight for task " + std::to_string(t));
  }
}

}  // namespace

Var composite(const std::map<int, Var>& per_task, const std::map<int, double>& weights, std::optional<Var> disc_loss,
              double w_d) {
  check_weights(weights, w_d);
  if (per_task.empty()) throw ConfigError("composite: no task losses");
  if (!disc_loss && w_d != 0.0) throw ConfigError("composite: w_d > 0 needs a discriminator loss");
  std::optional<Var> acc;
  for (const auto& [t, l] : per_task) {
    auto w = weights.find(t);
    if (w == weights.end()) throw ConfigError("composite: no weight for task " + std::to_string(t));
    const Var term = ad::scale(l, (1.0 - w_d) * w->second);
    acc = acc ? *acc + term : term;
  }
  if (disc_loss) acc = *acc + ad::scale(*disc_loss, w_d);
  return *acc;
}

LossReport make_loss_report(const std::map<int, double>& per_task, const std::map<int, double>& weights,
                            double disc_loss, double w_d) {
  check_weights(weights, w_d);
  LossReport r;
  r.per_task = per_task;
  r.discriminator = disc_loss;
  double acc = 0.0;
  for (const auto& [t, l] : per_task) acc += (1.0 - w_d) * weights.at(t) * l;
  r.composite = acc + w_d * disc_loss;
  return r;
}

}  // namespace taskmod
