// SPDX-License-Identifier: Apache-2.0

#include "taskmod/network/config.hpp"

#include <array>
#include <utility>

#include "taskmod/common/error.hpp"

namespace taskmod {

namespace {

template <class E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E v) {
  for (const auto& [k, n] : table) {
    if (k == v) return n;
  }
  return "?";
}

template <class E, std::size_t N>
E parse_enum(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s,
             std::string_view what) {
  for (const auto& [k, n] : table) {
    if (n == s) return k;
  }
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

constexpr std::array<std::pair<LossKind, std::string_view>, 4> kLoss{{
    {LossKind::EdgeBce, "edge_bce"},
    {LossKind::SegCe, "seg_ce"},
    {LossKind::NormalsL1, "normals_l1"},
    {LossKind::DepthL1Smooth, "depth_l1_smooth"},
}};
constexpr std::array<std::pair<MetricKind, std::string_view>, 4> kMetric{{
    {MetricKind::EdgeF, "edge_f"},
    {MetricKind::Miou, "miou"},
    {MetricKind::MeanAngle, "mean_angle"},
    {MetricKind::Rmse, "rmse"},
}};
constexpr std::array<std::pair<SeMode, std::string_view>, 3> kSeMode{{
    {SeMode::None, "none"},
    {SeMode::Shared, "shared"},
    {SeMode::PerTask, "per_task"},
}};
constexpr std::array<std::pair<SeScope, std::string_view>, 3> kSeScope{{
    {SeScope::Encoder, "encoder"},
    {SeScope::Decoder, "decoder"},
    {SeScope::Both, "both"},
}};
constexpr std::array<std::pair<BnMode, std::string_view>, 2> kBnMode{{
    {BnMode::Shared, "shared"},
    {BnMode::PerTask, "per_task"},
}};

}  // namespace

std::string_view to_string(LossKind k) { return name_of(kLoss, k); }
std::string_view to_string(MetricKind k) { return name_of(kMetric, k); }
std::string_view to_string(SeMode m) { return name_of(kSeMode, m); }
std::string_view to_string(SeScope s) { return name_of(kSeScope, s); }
std::string_view to_string(BnMode m) { return name_of(kBnMode, m); }

TaskSpec task_preset(std::string_view name, int task_id) {
  TaskSpec t;
  t.task_id = task_id;
  if (name == "edge") {
    t = {task_id, "edge", LossKind::EdgeBce, 50.0, MetricKind::EdgeF, false, 1};
  } else if (name == "seg") {
    t = {task_id, "seg", LossKind::SegCe, 1.0, MetricKind::Miou, false, 4};
  } else if (name == "norm" || name == "normals") {
    t = {task_id, "norm", LossKind::NormalsL1, 10.0, MetricKind::MeanAngle, true, 3};
  } else if (name == "depth") {
    t = {task_id, "depth", LossKind::DepthL1Smooth, 1.0, MetricKind::Rmse, true, 1};
  } else {
    throw ConfigError("unknown task '" + std::string(name) + "' (expected edge, seg, norm or depth)");
  }
  return t;
}

std::vector<TaskSpec> parse_task_list(std::string_view csv) {
  std::vector<TaskSpec> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const auto comma = csv.find(',', pos);
    const auto item = csv.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    if (item.empty()) throw ConfigError("empty entry in task list '" + std::string(csv) + "'");
    for (const auto& t : out) {
      if (t.name == task_preset(item, 0).name) throw ConfigError("duplicate task '" + std::string(item) + "'");
    }
    out.push_back(task_preset(item, static_cast<int>(out.size())));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

BnMode NetworkConfig::effective_bn_mode() const {
  if (bn_mode) return *bn_mode;
  return (se_mode == SeMode::PerTask || ra_enabled) ? BnMode::PerTask : BnMode::Shared;
}

void NetworkConfig::validate() const {
  if (input_size < 1) throw ConfigError("input_size must be positive");
  if (stem_channels < 1) throw ConfigError("stem_channels must be positive");
  if (stage_channels.empty()) throw ConfigError("stage_channels must be nonempty");
  for (int c : stage_channels) {
    if (c < 1) throw ConfigError("stage_channels entries must be positive");
  }
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be at least 1");
  const int downs = static_cast<int>(stage_channels.size()) - 1;
  if (input_size % (1 << downs) != 0) {
    throw ConfigError("input_size " + std::to_string(input_size) + " is not divisible by 2^" +
                      std::to_string(downs));
  }
  if (se_mode != SeMode::None) {
    if (se_reduction < 1) throw ConfigError("se_reduction must be positive");
    for (int c : stage_channels) {
      if (c / se_reduction < 1) {
        throw ConfigError("se_reduction " + std::to_string(se_reduction) + " leaves no hidden units for " +
                          std::to_string(c) + " channels");
      }
    }
  }
  if (tasks.empty()) throw ConfigError("at least one task is required");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].task_id != static_cast<int>(i)) throw ConfigError("task ids must be dense 0..T-1 in order");
    if (!(tasks[i].loss_weight > 0.0)) throw ConfigError("task '" + tasks[i].name + "' needs loss_weight > 0");
    if (tasks[i].out_channels < 1) throw ConfigError("task '" + tasks[i].name + "' needs out_channels >= 1");
  }
}

void to_json(nlohmann::json& j, const TaskSpec& t) {
  j = nlohmann::json{{"task_id", t.task_id},
                     {"name", t.name},
                     {"loss_kind", to_string(t.loss_kind)},
                     {"loss_weight", t.loss_weight},
                     {"metric_kind", to_string(t.metric_kind)},
                     {"lower_is_better", t.lower_is_better},
                     {"out_channels", t.out_channels}};
}

void from_json(const nlohmann::json& j, TaskSpec& t) {
  if (j.is_string()) {
    t = task_preset(j.get<std::string>(), t.task_id);
    return;
  }
  if (j.contains("name")) t = task_preset(j.at("name").get<std::string>(), j.value("task_id", 0));
  t.task_id = j.value("task_id", t.task_id);
  if (j.contains("loss_kind")) t.loss_kind = parse_enum(kLoss, j.at("loss_kind").get<std::string>(), "loss kind");
  t.loss_weight = j.value("loss_weight", t.loss_weight);
  if (j.contains("metric_kind")) {
    t.metric_kind = parse_enum(kMetric, j.at("metric_kind").get<std::string>(), "metric kind");
  }
  t.lower_is_better = j.value("lower_is_better", t.lower_is_better);
  t.out_channels = j.value("out_channels", t.out_channels);
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"input_size", c.input_size},
                     {"stem_channels", c.stem_channels},
                     {"stage_channels", c.stage_channels},
                     {"blocks_per_stage", c.blocks_per_stage},
                     {"se_mode", to_string(c.se_mode)},
                     {"se_scope", to_string(c.se_scope)},
                     {"se_reduction", c.se_reduction},
                     {"ra_enabled", c.ra_enabled},
                     {"bn_mode", c.bn_mode ? nlohmann::json(to_string(*c.bn_mode)) : nlohmann::json("auto")},
                     {"tasks", c.tasks},
                     {"adv_enabled", c.adv_enabled}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  try {
    c.input_size = j.value("input_size", c.input_size);
    c.stem_channels = j.value("stem_channels", c.stem_channels);
    if (j.contains("stage_channels")) c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
    if (j.contains("se_mode")) c.se_mode = parse_enum(kSeMode, j.at("se_mode").get<std::string>(), "se_mode");
    if (j.contains("se_scope")) c.se_scope = parse_enum(kSeScope, j.at("se_scope").get<std::string>(), "se_scope");
    c.se_reduction = j.value("se_reduction", c.se_reduction);
    c.ra_enabled = j.value("ra_enabled", c.ra_enabled);
    if (j.contains("bn_mode")) {
      const auto s = j.at("bn_mode").get<std::string>();
      if (s == "auto") {
        c.bn_mode.reset();
      } else {
        c.bn_mode = parse_enum(kBnMode, s, "bn_mode");
      }
    }
    if (j.contains("tasks")) {
      c.tasks.clear();
      for (const auto& t : j.at("tasks")) {
        TaskSpec spec;
        spec.task_id = static_cast<int>(c.tasks.size());
        from_json(t, spec);
        c.tasks.push_back(spec);
      }
    }
    c.adv_enabled = j.value("adv_enabled", c.adv_enabled);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network config: ") + e.what());
  }
}

}  // namespace taskmod
