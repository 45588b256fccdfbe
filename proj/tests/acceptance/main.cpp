// SPDX-License-Identifier: Apache-2.0
//
// Prints one PASS/FAIL line per acceptance criterion and exits non-zero when
// any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "criteria.hpp"

using namespace taskmod::acceptance;

int main(int argc, char** argv) {
  CLI::App app{"taskmod acceptance suite"};
  std::vector<int> only;
  Options opt;
  opt.workdir = std::filesystem::temp_directory_path() / "taskmod_acceptance";
  app.add_option("--only", only, "criteria to run (default: all but 10)")->delimiter(',');
  app.add_option("--workdir", opt.workdir, "scratch directory");
  app.add_option("--cli", opt.cli, "taskmod executable");
  app.add_option("--trend-seeds", opt.trend_seeds);
  app.add_option("--trend-epochs", opt.trend_epochs);
  app.add_option("--trend-train", opt.trend_train);
  app.add_option("--trend-test", opt.trend_test);
  app.add_option("--trend-size", opt.trend_size);
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict(const Options&)>>> all{
      {"gradient correctness", gradient_correctness},
      {"double-backprop correctness", double_backprop},
      {"delta_m published rows", delta_m_oracle},
      {"adversarial null", adversarial_null},
      {"identity start", identity_start},
      {"update masking", update_masking},
      {"normalization contract", normalization_contract},
      {"reversal contract", reversal_contract},
      {"overfit sanity", overfit},
      {"trend reproduction", trend},
      {"resource accounting", resources},
      {"end-to-end determinism", determinism},
  };
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty()) {
    for (int i = 1; i <= 12; ++i) {
      if (i != 10) selected.insert(i);
    }
  }
  std::filesystem::create_directories(opt.workdir);

  int failures = 0;
  for (int id : selected) {
    if (id < 1 || id > 12) {
      std::cerr << "no criterion " << id << "\n";
      return 2;
    }
    const auto& [name, run] = all[static_cast<std::size_t>(id - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run(opt);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %s  %-28s %s  [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
