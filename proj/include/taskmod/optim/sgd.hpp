// SPDX-License-Identifier: Apache-2.0
//
// SGD with momentum and weight decay under a poly schedule. Shared weights
// step at lr/T, and a step only touches the parameters the task used.

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include <json.hpp>

#include "taskmod/network/parameter_store.hpp"

namespace taskmod {

struct OptimConfig {
  double base_lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = 0.9;
  int batch_size = 8;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

struct OptState {
  std::map<std::string, ad::Tensor> buffers;  // momentum, trainable ids only
  double base_lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = 0.9;
  std::int64_t iter = 0;
  std::int64_t max_iter = 1;
};

// Zero buffers for every trainable parameter in the store.
OptState make_opt_state(const ParameterStore& store, const OptimConfig& cfg, std::int64_t max_iter);

// base_lr (1 - iter/max_iter)^power, 0 once iter reaches max_iter.
double poly_lr(const OptState& state);
// poly_lr / T for shared parameters, poly_lr otherwise.
double lr_for(const std::string& id, const OptState& state, int num_tasks, const ParameterStore& store);

// For each id in `used`: v <- mu v + g + wd p; p <- p - lr_for(id) v.
// Parameters outside `used` and their buffers are not touched. Advances iter by one (capped at
// max_iter). Throws ConfigError for unknown or non-trainable ids and for
// gradients of parameters outside `used`.
void sgd_step(ParameterStore& store, const std::map<std::string, ad::Tensor>& grads,
              const std::set<std::string>& used, OptState& state, int num_tasks);

}  // namespace taskmod
