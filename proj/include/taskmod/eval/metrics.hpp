// SPDX-License-Identifier: Apache-2.0
//
// Dense-prediction metrics and the average relative drop against
// single-task baselines. Accumulators fold samples one at a time and merge
// in a caller-chosen order, so parallel evaluation stays reproducible.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskmod/network/config.hpp"

namespace taskmod {

// Best pooled F1 over the thresholds 0.01..0.99 (prediction >= threshold is
// an edge). A threshold with no predicted and no true edges scores 1.
class EdgeFAccumulator {
 public:
  static constexpr int kThresholds = 99;
  void add(std::span<const double> prob, std::span<const std::uint8_t> gt);
  void merge(const EdgeFAccumulator& other);
  double value() const;

 private:
  std::array<std::int64_t, kThresholds> tp_{};
  std::array<std::int64_t, kThresholds> fp_{};
  std::int64_t positives_ = 0;
};

// Mean IoU over classes with a non-empty union; pixels labelled 255 in the
// ground truth are ignored. 1 when no class occurs at all.
class MiouAccumulator {
 public:
  explicit MiouAccumulator(int num_classes);
  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
  void merge(const MiouAccumulator& other);
  double value() const;

 private:
  std::vector<std::int64_t> inter_;
  std::vector<std::int64_t> uni_;
};

// Mean angle in degrees between normalize(pred) and gt over masked pixels.
// Vectors are interleaved: pixel i occupies [3i, 3i+3).
class AngleAccumulator {
 public:
  void add(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> mask);
  void merge(const AngleAccumulator& other);
  double value() const;  // Error when no pixel was masked in

 private:
  double sum_ = 0.0;
  std::int64_t count_ = 0;
};

class RmseAccumulator {
 public:
  void add(std::span<const double> pred, std::span<const double> gt);
  void merge(const RmseAccumulator& other);
  double value() const;  // 0 for an empty fold

 private:
  double sum_sq_ = 0.0;
  std::int64_t count_ = 0;
};

double edge_f(std::span<const double> prob, std::span<const std::uint8_t> gt);
double miou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int num_classes);
double mean_angle(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> mask);
double rmse_depth(std::span<const double> pred, std::span<const double> gt);

struct MetricEntry {
  int task_id = 0;
  MetricKind metric = MetricKind::EdgeF;
  bool lower_is_better = false;
  double value = 0.0;
};

// Keyed by task name so that baselines from separate single-task runs can
// be combined.
struct MetricsReport {
  std::map<std::string, MetricEntry> per_task;
  std::string config_digest;
  std::int64_t n_samples = 0;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

// (100/T) sum_i s_i (M_b,i - M_m,i) / M_b,i with s_i = +1 for
// higher-is-better and -1 for lower-is-better metrics; positive means the
// method is worse. Tasks are matched by name. Throws IncompatibleError when
// the task sets differ from `specs` and Error for a zero baseline metric.
double delta_m(const MetricsReport& method, const MetricsReport& baseline, const std::vector<TaskSpec>& specs);

// Merges single-task reports into one baseline. Throws IncompatibleError
// when two reports cover the same task.
MetricsReport combine_baselines(const std::vector<MetricsReport>& reports);

}  // namespace taskmod
