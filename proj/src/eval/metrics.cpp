// SPDX-License-Identifier: Apache-2.0

#include "taskmod/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "taskmod/common/error.hpp"

namespace taskmod {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

MetricKind metric_from_string(const std::string& s) {
  for (MetricKind k : {MetricKind::EdgeF, MetricKind::Miou, MetricKind::MeanAngle, MetricKind::Rmse}) {
    if (to_string(k) == s) return k;
  }
  throw FormatError("unknown metric kind '" + s + "'");
}

}  // namespace

void EdgeFAccumulator::add(std::span<const double> prob, std::span<const std::uint8_t> gt) {
  check_sizes(prob.size(), gt.size(), "edge_f");
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const bool pos = gt[i] != 0;
    positives_ += pos;
    for (int k = 0; k < kThresholds; ++k) {
      if (prob[i] < (k + 1) / 100.0) break;
      if (pos) {
        ++tp_[static_cast<std::size_t>(k)];
      } else {
        ++fp_[static_cast<std::size_t>(k)];
      }
    }
  }
}

void EdgeFAccumulator::merge(const EdgeFAccumulator& o) {
  for (std::size_t k = 0; k < kThresholds; ++k) {
    tp_[k] += o.tp_[k];
    fp_[k] += o.fp_[k];
  }
  positives_ += o.positives_;
}

double EdgeFAccumulator::value() const {
  double best = 0.0;
  for (std::size_t k = 0; k < kThresholds; ++k) {
    const std::int64_t tp = tp_[k], fp = fp_[k], fn = positives_ - tp_[k];
    double f = 0.0;
    if (tp + fp + fn == 0) {
      f = 1.0;
    } else {
      const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    best = std::max(best, f);
  }
  return best;
}

MiouAccumulator::MiouAccumulator(int num_classes) {
  if (num_classes < 1) throw ConfigError("miou: need at least one class");
  inter_.assign(static_cast<std::size_t>(num_classes), 0);
  uni_.assign(static_cast<std::size_t>(num_classes), 0);
}

void MiouAccumulator::add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  check_sizes(pred.size(), gt.size(), "miou");
  const auto k = static_cast<int>(inter_.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int g = gt[i], p = pred[i];
    if (g == 255) continue;
    if (g >= k || p >= k) throw ConfigError("miou: label out of range");
    if (g == p) {
      ++inter_[static_cast<std::size_t>(g)];
      ++uni_[static_cast<std::size_t>(g)];
    } else {
      ++uni_[static_cast<std::size_t>(g)];
      ++uni_[static_cast<std::size_t>(p)];
    }
  }
}

void MiouAccumulator::merge(const MiouAccumulator& o) {
  check_sizes(inter_.size(), o.inter_.size(), "miou merge");
  for (std::size_t c = 0; c < inter_.size(); ++c) {
    inter_[c] += o.inter_[c];
    uni_[c] += o.uni_[c];
  }
}

double MiouAccumulator::value() const {
  double sum = 0.0;
  int n = 0;
  for (std::size_t c = 0; c < inter_.size(); ++c) {
    if (uni_[c] == 0) continue;
    sum += static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
    ++n;
  }
  return n == 0 ? 1.0 : sum / n;
}

void AngleAccumulator::add(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> mask) {
  check_sizes(pred.size(), gt.size(), "mean_angle");
  check_sizes(pred.size(), 3 * mask.size(), "mean_angle mask");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double* p = pred.data() + 3 * i;
    const double* g = gt.data() + 3 * i;
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    const double c = n > 0.0 ? (p[0] * g[0] + p[1] * g[1] + p[2] * g[2]) / n : 0.0;
    sum_ += std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / std::numbers::pi;
    ++count_;
  }
}

void AngleAccumulator::merge(const AngleAccumulator& o) {
  sum_ += o.sum_;
  count_ += o.count_;
}

double AngleAccumulator::value() const {
  if (count_ == 0) throw Error("mean_angle: empty mask");
  return sum_ / static_cast<double>(count_);
}

void RmseAccumulator::add(std::span<const double> pred, std::span<const double> gt) {
  check_sizes(pred.size(), gt.size(), "rmse_depth");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - gt[i];
    sum_sq_ += e * e;
  }
  count_ += static_cast<std::int64_t>(pred.size());
}

void RmseAccumulator::merge(const RmseAccumulator& o) {
  sum_sq_ += o.sum_sq_;
  count_ += o.count_;
}

double RmseAccumulator::value() const {
  return count_ == 0 ? 0.0 : std::sqrt(sum_sq_ / static_cast<double>(count_));
}

double edge_f(std::span<const double> prob, std::span<const std::uint8_t> gt) {
  EdgeFAccumulator acc;
  acc.add(prob, gt);
  return acc.value();
}

double miou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int num_classes) {
  MiouAccumulator acc(num_classes);
  acc.add(pred, gt);
  return acc.value();
}

double mean_angle(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> mask) {
  AngleAccumulator acc;
  acc.add(pred, gt, mask);
  return acc.value();
}

double rmse_depth(std::span<const double> pred, std::span<const double> gt) {
  RmseAccumulator acc;
  acc.add(pred, gt);
  return acc.value();
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  nlohmann::json tasks = nlohmann::json::object();
  for (const auto& [name, e] : r.per_task) {
    tasks[name] = {{"task_id", e.task_id},
                   {"metric", std::string(to_string(e.metric))},
                   {"lower_is_better", e.lower_is_better},
                   {"value", e.value}};
  }
  j = nlohmann::json{{"tasks", tasks}, {"config_digest", r.config_digest}, {"n_samples", r.n_samples}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  try {
    r.per_task.clear();
    for (const auto& [name, e] : j.at("tasks").items()) {
      MetricEntry m;
      m.task_id = e.at("task_id").get<int>();
      m.metric = metric_from_string(e.at("metric").get<std::string>());
      m.lower_is_better = e.at("lower_is_better").get<bool>();
      m.value = e.at("value").get<double>();
      r.per_task.emplace(name, m);
    }
    r.config_digest = j.value("config_digest", std::string());
    r.n_samples = j.value("n_samples", std::int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
}

double delta_m(const MetricsReport& method, const MetricsReport& baseline, const std::vector<TaskSpec>& specs) {
  if (specs.empty()) throw ConfigError("delta_m: no tasks");
  if (method.per_task.size() != specs.size() || baseline.per_task.size() != specs.size()) {
    throw IncompatibleError("delta_m: reports cover " + std::to_string(method.per_task.size()) + " and " +
                            std::to_string(baseline.per_task.size()) + " tasks, expected " +
                            std::to_string(specs.size()));
  }
  double sum = 0.0;
  for (const auto& spec : specs) {
    auto m = method.per_task.find(spec.name);
    auto b = baseline.per_task.find(spec.name);
    if (m == method.per_task.end() || b == baseline.per_task.end()) {
      throw IncompatibleError("delta_m: task '" + spec.name + "' missing from a report");
    }
    const double mb = b->second.value, mm = m->second.value;
    if (mb == 0.0) throw Error("delta_m: baseline metric for '" + spec.name + "' is zero");
    const double s = spec.lower_is_better ? -1.0 : 1.0;
    sum += s * (mb - mm) / mb;
  }
  return 100.0 * sum / static_cast<double>(specs.size());
}

MetricsReport combine_baselines(const std::vector<MetricsReport>& reports) {
  MetricsReport out;
  for (const auto& r : reports) {
    for (const auto& [name, e] : r.per_task) {
      if (!out.per_task.emplace(name, e).second) {
        throw IncompatibleError("baselines cover task '" + name + "' more than once");
      }
    }
    out.n_samples = r.n_samples;
  }
  return out;
}

}  // namespace taskmod
