// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen, train, eval, ablate, resources.
// Exit codes: 0 success, 2 usage/config, 3 I/O or format, 4 divergence,
// 5 incompatible artifacts, 1 anything else.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "taskmod/eval/metrics.hpp"
#include "taskmod/synthdata/synth.hpp"
#include "taskmod/train/trainer.hpp"

namespace taskmod {

enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitUsage = 2, kExitIo = 3, kExitDiverged = 4, kExitIncompatible = 5 };

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

struct GridEntry {
  std::string name;  // "single:edge", "plain", "adv", "se-dec", "se-both", "se-ra-adv"
  NetworkConfig net;
};

// One single-task config per task of `base`, then the multi-task variants.
// Architecture fields (sizes, widths, depth, reduction) come from `base`.
std::vector<GridEntry> ablation_grid(const NetworkConfig& base);

// Trains on data.train and evaluates on data.test; the report carries the
// config digest.
MetricsReport train_and_evaluate(const TrainConfig& config, const Dataset& data, int eval_threads = 0);

}  // namespace taskmod
