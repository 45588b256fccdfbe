// SPDX-License-Identifier: Apache-2.0
//
// Parameter and multiply-add counts of a network configuration, in closed
// form and by enumerating an initialized parameter store / forward graph.

#pragma once

#include <cstdint>
#include <map>

#include <json.hpp>

#include "taskmod/network/config.hpp"
#include "taskmod/network/network.hpp"
#include "taskmod/network/parameter_store.hpp"

namespace taskmod {

// Trainable parameters only (batch-norm running statistics are state, not
// parameters). The discriminator is reported on its own and excluded from
// the totals.
struct ResourceReport {
  std::int64_t shared_params = 0;
  std::map<int, std::int64_t> per_task_params;
  std::int64_t total_params = 0;  // shared + sum of per-task
  std::map<int, std::int64_t> madds_per_forward;  // one image, one task
  std::int64_t discriminator_params = 0;

  bool operator==(const ResourceReport&) const = default;
};

void to_json(nlohmann::json& j, const ResourceReport& r);

std::int64_t conv_params(std::int64_t k, std::int64_t cin, std::int64_t cout, bool bias);
std::int64_t conv_madds(std::int64_t k, std::int64_t cin, std::int64_t cout, std::int64_t hout, std::int64_t wout);
// Two 1x1 convolutions with biases: 2 C^2/r + C/r + C.
std::int64_t se_params(std::int64_t channels, std::int64_t reduction);

// Closed form from the configuration. disc_hidden only matters when the
// config enables the adversarial branch.
ResourceReport count_resources(const NetworkConfig& config, int disc_hidden = 64);

// Sum of trainable entry sizes grouped by owner.
ResourceReport count_store(const ParameterStore& store);
// Sum of k^2 Cin Cout Hout Wout over the convolution nodes of a one-image
// eval-mode forward graph, per task.
std::map<int, std::int64_t> count_graph_madds(const Network& net, const ParameterStore& store);

}  // namespace taskmod
