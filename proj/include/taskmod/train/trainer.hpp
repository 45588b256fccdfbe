// SPDX-License-Identifier: Apache-2.0
//
// Single-tasking training loop: for every mini-batch the tasks run one after
// another, each with its own forward pass, backward pass and masked update.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskmod/adversarial/adversarial.hpp"
#include "taskmod/network/network.hpp"
#include "taskmod/optim/sgd.hpp"
#include "taskmod/synthdata/batch.hpp"

namespace taskmod {

struct TrainConfig {
  NetworkConfig net;
  AdvConfig adv;
  OptimConfig optim;
  std::uint64_t seed = 0;
  int epochs = 1;
  double depth_gamma = 1.0;
  double bn_momentum = 0.1;

  void validate() const;  // throws ConfigError
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// What one task step saw, evaluated in the same pass as the gradients.
struct StepStats {
  int task = 0;
  double task_loss = 0.0;  // L_t before weighting
  std::optional<double> disc_loss;
  // Per-sample Frobenius norms of the normalized interface gradient (the
  // discriminator input); empty without the adversarial branch.
  std::vector<double> disc_input_norms;
};

struct IterationStats {
  std::vector<StepStats> steps;
  LossReport report;  // composite uses the mean discriminator loss
};

struct EpochStats {
  int epoch = 0;
  std::map<int, double> mean_task_loss;
  double mean_disc_loss = 0.0;
  double mean_composite = 0.0;
  std::int64_t iterations = 0;
};

class Trainer {
 public:
  // max_iter counts task steps for the poly schedule; fit() replaces it
  // with epochs x batches x T.
  explicit Trainer(TrainConfig config, std::int64_t max_iter = 1);

  const TrainConfig& config() const { return config_; }
  const Network& network() const { return net_; }
  const ParameterStore& store() const { return store_; }
  ParameterStore& store() { return store_; }
  const OptState& opt_state() const { return opt_; }
  OptState& opt_state() { return opt_; }

  // Parameters a step on `task` may update.
  std::set<std::string> step_params(int task) const;

  // One forward/backward/update on one task. Throws DivergenceError when a
  // loss or gradient is not finite; the store is left untouched then.
  StepStats task_step(const Batch& batch, int task);
  // Tasks 0..T-1 on the same batch.
  IterationStats iteration(const Batch& batch);
  // One shuffled pass; the order depends only on (seed, epoch).
  EpochStats epoch(const std::vector<Sample>& train, int epoch_index);
  // Resets the schedule to epochs x batches x T steps and runs all epochs.
  std::vector<EpochStats> fit(const std::vector<Sample>& train,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

  // Batch order of one epoch.
  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int epoch_index) const;

 private:
  TrainConfig config_;
  Network net_;
  ParameterStore store_;
  OptState opt_;
  std::set<std::string> disc_ids_;
};

std::string config_digest(const TrainConfig& config);

}  // namespace taskmod
