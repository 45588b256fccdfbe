// SPDX-License-Identifier: Apache-2.0
//
// Multi-seed comparison of plain multi-tasking, per-task SE, adversarial
// training and both, each scored by delta_m against single-task baselines
// trained with the same seed.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>

#include "criteria.hpp"
#include "taskmod/cli/cli.hpp"
#include "taskmod/eval/metrics.hpp"
#include "taskmod/synthdata/synth.hpp"
#include "taskmod/train/trainer.hpp"

namespace taskmod::acceptance {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

TrainConfig trend_config(const Options& opt, std::uint64_t seed) {
  TrainConfig c;
  c.net.input_size = opt.trend_size;
  c.net.stem_channels = 8;
  c.net.stage_channels = {8, 16, 32};
  c.net.blocks_per_stage = 1;
  c.net.se_reduction = 4;
  c.net.tasks = parse_task_list("edge,seg,norm,depth");
  c.optim.base_lr = 0.02;
  c.optim.batch_size = 8;
  c.epochs = opt.trend_epochs;
  c.seed = seed;
  return c;
}

}  // namespace

Verdict trend(const Options& opt) {
  const Dataset data = generate_dataset(2024, opt.trend_size, opt.trend_train, opt.trend_test, 1);
  const std::vector<std::string> variants{"plain", "se", "adv", "se+adv"};
  std::map<std::string, std::vector<double>> dm;
  const auto t0 = std::chrono::steady_clock::now();
  for (int s = 0; s < opt.trend_seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(100 + s);
    const TrainConfig base = trend_config(opt, seed);
    std::vector<MetricsReport> singles;
    for (const auto& task : base.net.tasks) {
      TrainConfig c = base;
      c.net.tasks = {task_preset(task.name, 0)};
      singles.push_back(train_and_evaluate(c, data, 1));
    }
    const MetricsReport baseline = combine_baselines(singles);
    for (const auto& v : variants) {
      TrainConfig c = base;
      if (v == "se" || v == "se+adv") c.net.se_mode = SeMode::PerTask;
      if (v == "adv" || v == "se+adv") c.net.adv_enabled = true;
      const double d = delta_m(train_and_evaluate(c, data, 1), baseline, base.net.tasks);
      dm[v].push_back(d);
      std::printf("  trend seed %d %-7s delta_m %+7.2f%%  [%.0f s elapsed]\n", s, v.c_str(), d,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      std::fflush(stdout);
    }
  }
  const double plain = median(dm["plain"]), se = median(dm["se"]), adv = median(dm["adv"]),
               se_adv = median(dm["se+adv"]);
  const bool ok = plain > se && plain > adv && se_adv <= se + 0.5;
  char buf[256];
  std::snprintf(buf, sizeof buf, "median delta_m: plain %.2f, se %.2f, adv %.2f, se+adv %.2f (%d seeds, %d epochs)",
                plain, se, adv, se_adv, opt.trend_seeds, opt.trend_epochs);
  return {ok, buf};
}

}  // namespace taskmod::acceptance
