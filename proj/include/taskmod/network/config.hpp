// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace taskmod {

enum class LossKind { EdgeBce, SegCe, NormalsL1, DepthL1Smooth };
enum class MetricKind { EdgeF, Miou, MeanAngle, Rmse };

struct TaskSpec {
  int task_id = 0;
  std::string name;
  LossKind loss_kind = LossKind::EdgeBce;
  double loss_weight = 1.0;
  MetricKind metric_kind = MetricKind::EdgeF;
  bool lower_is_better = false;
  int out_channels = 1;

  bool operator==(const TaskSpec&) const = default;
};

// Built-in task definitions for the synthetic benchmark. Accepted names:
// edge, seg, norm (or normals), depth.
TaskSpec task_preset(std::string_view name, int task_id);
// Parses "edge,seg,norm,depth" into dense task ids 0..T-1.
std::vector<TaskSpec> parse_task_list(std::string_view csv);

enum class SeMode { None, Shared, PerTask };
enum class SeScope { Encoder, Decoder, Both };
enum class BnMode { Shared, PerTask };

struct NetworkConfig {
  int input_size = 64;
  int stem_channels = 16;
  std::vector<int> stage_channels{16, 32, 64};
  int blocks_per_stage = 2;
  SeMode se_mode = SeMode::None;
  SeScope se_scope = SeScope::Both;
  int se_reduction = 4;
  bool ra_enabled = false;
  // Unset: per-task whenever SE is per-task or adapters are on.
  std::optional<BnMode> bn_mode;
  std::vector<TaskSpec> tasks;
  bool adv_enabled = false;

  int num_tasks() const { return static_cast<int>(tasks.size()); }
  BnMode effective_bn_mode() const;
  // Throws ConfigError describing the first violated rule.
  void validate() const;
};

std::string_view to_string(LossKind k);
std::string_view to_string(MetricKind k);
std::string_view to_string(SeMode m);
std::string_view to_string(SeScope s);
std::string_view to_string(BnMode m);

void to_json(nlohmann::json& j, const TaskSpec& t);
void from_json(const nlohmann::json& j, TaskSpec& t);
void to_json(nlohmann::json& j, const NetworkConfig& c);
// Missing keys keep their defaults; unknown enum strings raise ConfigError.
void from_json(const nlohmann::json& j, NetworkConfig& c);

}  // namespace taskmod
