// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "taskmod/eval/metrics.hpp"
#include "taskmod/network/network.hpp"
#include "taskmod/synthdata/synth.hpp"

namespace taskmod {

// Runs every task of `net` in eval mode over `samples` and folds the task
// metrics. Batches are spread over `threads` workers (0 = default_threads())
// and merged in batch order, so the result does not depend on the worker
// count. config_digest is left empty.
MetricsReport evaluate_network(const Network& net, const ParameterStore& store, const std::vector<Sample>& samples,
                               int threads = 0, int batch_size = 16);

}  // namespace taskmod
