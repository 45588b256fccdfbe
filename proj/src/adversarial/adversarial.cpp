// SPDX-License-Identifier: Apache-2.0

#include "taskmod/adversarial/adversarial.hpp"

#include <algorithm>
#include <cmath>

#include "taskmod/autodiff/ops.hpp"
#include "taskmod/common/error.hpp"
#include "taskmod/common/rng.hpp"

namespace taskmod {

using ad::Shape;
using ad::Tensor;
using ad::Var;

double AdvConfig::lambda_at(std::int64_t iter) const {
  if (lambda_ramp_steps <= 0) return lambda;
  return lambda * std::min(1.0, static_cast<double>(iter) / static_cast<double>(lambda_ramp_steps));
}

void AdvConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  if (!(w_d >= 0.0 && w_d < 1.0)) throw ConfigError("w_d must lie in [0, 1), got " + std::to_string(w_d));
  if (disc_hidden < 1) throw ConfigError("disc_hidden must be positive");
  if (lambda_ramp_steps < 0) throw ConfigError("lambda_ramp_steps must be >= 0");
}

void to_json(nlohmann::json& j, const AdvConfig& c) {
  j = nlohmann::json{{"lambda", c.lambda},
                     {"w_d", c.w_d},
                     {"disc_hidden", c.disc_hidden},
                     {"lambda_ramp_steps", c.lambda_ramp_steps}};
}

void from_json(const nlohmann::json& j, AdvConfig& c) {
  try {
    c.lambda = j.value("lambda", c.lambda);
    c.w_d = j.value("w_d", c.w_d);
    c.disc_hidden = j.value("disc_hidden", c.disc_hidden);
    c.lambda_ramp_steps = j.value("lambda_ramp_steps", c.lambda_ramp_steps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed adversarial config: ") + e.what());
  }
}

void add_discriminator(ParameterStore& store, int in_channels, int hidden, int num_tasks, std::uint64_t seed) {
  auto he = [&](const std::string& id, Shape shape) {
    Tensor t(shape);
    Rng rng(mix_seed(seed, id));
    const double sd = std::sqrt(2.0 / static_cast<double>(shape[1]));
    for (auto& v : t.data) v = sd * rng.normal();
    store.add(id, std::move(t), Owner::discriminator(), Role::Weight);
  };
  he("disc.conv1.w", {hidden, in_channels, 1, 1});
  store.add("disc.conv1.b", Tensor({hidden}), Owner::discriminator(), Role::Bias);
  he("disc.conv2.w", {num_tasks, hidden, 1, 1});
  store.add("disc.conv2.b", Tensor({num_tasks}), Owner::discriminator(), Role::Bias);
}

std::set<std::string> discriminator_ids(const ParameterStore& store) {
  return store.select([](const Owner& o) { return o.kind == Owner::Kind::Discriminator; });
}

Var extract_gradient(Var task_loss, Var interface) {
  if (!task_loss.graph->depends_on(task_loss, interface)) {
    throw Error("extract_gradient: the interface node does not feed the task loss");
  }
  return ad::backward(task_loss, interface);
}

Var normalize_gradient(Var g) {
  const Shape s = g.shape();
  std::vector<std::int64_t> axes;
  for (std::size_t a = 1; a < s.size(); ++a) axes.push_back(static_cast<std::int64_t>(a));
  if (axes.empty()) return g / (ad::abs(g) + 1e-12);
  return g / (ad::l2_norm(g, axes) + 1e-12);
}

DiscOutput discriminate(ParamLeaves& params, Var g, int task, bool freeze) {
  auto get = [&](const char* id) {
    const Var v = params.get(id);
    return freeze ? ad::detach(v) : v;
  };
  const Var w1 = get("disc.conv1.w"), b1 = get("disc.conv1.b");
  const Var w2 = get("disc.conv2.w"), b2 = get("disc.conv2.b");
  const Shape gs = g.shape();
  const Shape ws = w1.shape();
  if (gs.size() != 4 || gs[1] != ws[1]) {
    throw ShapeError("discriminate: gradient " + ad::to_string(gs) + " does not match discriminator input " +
                     ad::to_string(ws));
  }
  const std::int64_t hidden = ws[0];
  const std::int64_t tasks = w2.shape()[0];
  if (task < 0 || task >= tasks) throw ConfigError("discriminate: task " + std::to_string(task) + " out of range");
  const Var h = ad::relu(ad::conv2d(g, w1) + ad::reshape(b1, {1, hidden, 1, 1}));
  const Var logits = ad::conv2d(h, w2) + ad::reshape(b2, {1, tasks, 1, 1});
  const Var picked = ad::slice(ad::log_softmax_channels(logits), 1, task, task + 1);
  return {logits, -ad::mean_all(picked)};
}

AdvTerms adversarial_step_terms(ParamLeaves& params, Var g_normalized, int task, double lambda, double w_d) {
  const DiscOutput d_side = discriminate(params, ad::detach(g_normalized), task, false);
  const DiscOutput n_side = discriminate(params, g_normalized, task, true);
  return {ad::scale(d_side.loss, w_d), ad::scale(n_side.loss, -lambda * w_d), d_side.loss};
}

}  // namespace taskmod
