// SPDX-License-Identifier: Apache-2.0

#include "taskmod/optim/sgd.hpp"

#include <cmath>

#include "taskmod/common/error.hpp"

namespace taskmod {

void OptimConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(power > 0.0)) throw ConfigError("power must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = nlohmann::json{{"base_lr", c.base_lr},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"power", c.power},
                     {"batch_size", c.batch_size}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  try {
    c.base_lr = j.value("base_lr", c.base_lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.power = j.value("power", c.power);
    c.batch_size = j.value("batch_size", c.batch_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed optimizer config: ") + e.what());
  }
}

OptState make_opt_state(const ParameterStore& store, const OptimConfig& cfg, std::int64_t max_iter) {
  cfg.validate();
  if (max_iter < 1) throw ConfigError("max_iter must be positive");
  OptState s;
  s.base_lr = cfg.base_lr;
  s.momentum = cfg.momentum;
  s.weight_decay = cfg.weight_decay;
  s.power = cfg.power;
  s.max_iter = max_iter;
  for (const auto& [id, e] : store.entries()) {
    if (e.trainable()) s.buffers.emplace(id, ad::Tensor(e.value.shape, 0.0));
  }
  return s;
}

double poly_lr(const OptState& state) {
  if (state.iter >= state.max_iter) return 0.0;
  const double frac = 1.0 - static_cast<double>(state.iter) / static_cast<double>(state.max_iter);
  return state.base_lr * std::pow(frac, state.power);
}

double lr_for(const std::string& id, const OptState& state, int num_tasks, const ParameterStore& store) {
  if (num_tasks < 1) throw ConfigError("lr_for: number of tasks must be >= 1");
  const double lr = poly_lr(state);
  return store.at(id).owner.kind == Owner::Kind::Shared ? lr / num_tasks : lr;
}

void sgd_step(ParameterStore& store, const std::map<std::string, ad::Tensor>& grads, const std::set<std::string>& used,
              OptState& state, int num_tasks) {
  for (const auto& [id, g] : grads) {
    if (!used.count(id)) throw ConfigError("sgd_step: gradient for unused parameter '" + id + "'");
  }
  for (const auto& id : used) {
    auto& entry = store.at(id);
    auto buf = state.buffers.find(id);
    if (!entry.trainable() || buf == state.buffers.end()) {
      throw ConfigError("sgd_step: parameter '" + id + "' is not trainable");
    }
    const double lr = lr_for(id, state, num_tasks, store);
    const double wd = state.weight_decay;
    auto& p = entry.value;
    auto& v = buf->second;
    auto git = grads.find(id);
    const ad::Tensor* g = git == grads.end() ? nullptr : &git->second;
    if (g && g->shape != p.shape) {
      throw ShapeError("sgd_step: gradient " + ad::to_string(g->shape) + " for '" + id + "' of shape " +
                       ad::to_string(p.shape));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + (g ? (*g)[i] : 0.0) + wd * p[i];
      p[i] -= lr * v[i];
    }
  }
  if (state.iter < state.max_iter) ++state.iter;
}

}  // namespace taskmod
