// SPDX-License-Identifier: Apache-2.0
//
// Acceptance criteria. Each check returns a verdict plus a one-line summary
// of the measured quantity; tolerances are fixed in the implementations.

#pragma once

#include <filesystem>
#include <string>

namespace taskmod::acceptance {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Options {
  std::filesystem::path workdir;
  std::filesystem::path cli;  // taskmod executable for the end-to-end check
  int trend_seeds = 5;
  int trend_epochs = 2;
  int trend_train = 512;
  int trend_test = 128;
  int trend_size = 64;
};

Verdict gradient_correctness(const Options&);
Verdict double_backprop(const Options&);
Verdict delta_m_oracle(const Options&);
Verdict adversarial_null(const Options&);
Verdict identity_start(const Options&);
Verdict update_masking(const Options&);
Verdict normalization_contract(const Options&);
Verdict reversal_contract(const Options&);
Verdict overfit(const Options&);
Verdict trend(const Options&);
Verdict resources(const Options&);
Verdict determinism(const Options&);

}  // namespace taskmod::acceptance
