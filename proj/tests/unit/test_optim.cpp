// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "taskmod/common/error.hpp"
#include "taskmod/optim/sgd.hpp"
#include "test_support.hpp"

using namespace taskmod;
using ad::Tensor;

namespace {

ParameterStore small_store() {
  ParameterStore s;
  s.add("shared.w", Tensor({2}, {1.0, -2.0}), Owner::shared(), Role::Weight);
  s.add("shared.bn.gain", Tensor({2}, {1.0, 1.0}), Owner::shared(), Role::BnGain);
  s.add("shared.bn.rmean", Tensor({2}, {0.0, 0.0}), Owner::shared(), Role::BnRunning);
  s.add("t0.w", Tensor({3}, {0.5, 0.5, 0.5}), Owner::of_task(0), Role::Weight);
  s.add("t1.w", Tensor({3}, {0.25, 0.25, 0.25}), Owner::of_task(1), Role::Weight);
  s.add("disc.w", Tensor({1}, {3.0}), Owner::discriminator(), Role::Weight);
  return s;
}

}  // namespace

TEST_CASE("poly_lr: start, end and midpoint") {
  const auto s = small_store();
  OptimConfig c;
  auto st = make_opt_state(s, c, 1000);
  CHECK(poly_lr(st) == 0.005);
  st.iter = 500;
  CHECK(poly_lr(st) == doctest::Approx(0.00267943365634073).epsilon(1e-14));  // mpmath, 30 digits
  CHECK(poly_lr(st) == doctest::Approx(0.005 * std::pow(0.5, 0.9)).epsilon(1e-14));
  st.iter = 1000;
  CHECK(poly_lr(st) == 0.0);
  double prev = 1.0;
  for (std::int64_t i = 0; i <= 1000; i += 37) {
    st.iter = i;
    CHECK(poly_lr(st) <= prev);
    prev = poly_lr(st);
  }
}

TEST_CASE("lr_for: shared parameters step at lr / T") {
  const auto s = small_store();
  const auto st = make_opt_state(s, OptimConfig{}, 10);
  CHECK(lr_for("shared.w", st, 4, s) == 0.00125);
  CHECK(lr_for("shared.w", st, 1, s) == lr_for("t0.w", st, 1, s));
  CHECK(lr_for("t0.w", st, 4, s) == 0.005);
  CHECK(lr_for("disc.w", st, 4, s) == 0.005);
  CHECK_THROWS_AS(lr_for("nope", st, 4, s), ConfigError);
}

TEST_CASE("sgd_step: plain step, masking and momentum recurrence") {
  auto s = small_store();
  OptimConfig c;
  c.weight_decay = 0.0;
  auto st = make_opt_state(s, c, 100);
  CHECK(st.buffers.count("shared.bn.rmean") == 0);

  const Tensor g({3}, {1.0, -1.0, 2.0});
  const auto before_t1 = s.at("t1.w").value;
  const auto before_buf = st.buffers.at("t1.w");
  sgd_step(s, {{"t0.w", g}}, {"t0.w", "shared.w"}, st, 2);
  const double lr1 = 0.005;
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.at("t0.w").value[i] == 0.5 - lr1 * g[i]);
  CHECK(ad::bitwise_equal(s.at("t1.w").value, before_t1));
  CHECK(ad::bitwise_equal(st.buffers.at("t1.w"), before_buf));
  CHECK(s.at("shared.w").value[0] == 1.0);  // used without a gradient and no decay
  CHECK(st.iter == 1);

  // second step with the same gradient: total change lr1 g + lr2 (0.9 g + g)
  const double lr2 = 0.005 * std::pow(1.0 - 1.0 / 100.0, 0.9);
  sgd_step(s, {{"t0.w", g}}, {"t0.w"}, st, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s.at("t0.w").value[i] == doctest::Approx(0.5 - (lr1 * g[i] + lr2 * 1.9 * g[i])).epsilon(1e-15));
  }

  CHECK_THROWS_AS(sgd_step(s, {{"t1.w", g}}, {"t0.w"}, st, 2), ConfigError);
  CHECK_THROWS_AS(sgd_step(s, {}, {"shared.bn.rmean"}, st, 2), ConfigError);
  CHECK_THROWS_AS(sgd_step(s, {}, {"missing"}, st, 2), ConfigError);
  CHECK_THROWS_AS(sgd_step(s, {{"t0.w", Tensor({2})}}, {"t0.w"}, st, 2), ShapeError);
}

TEST_CASE("sgd_step: weight decay applies to every used parameter") {
  auto s = small_store();
  OptimConfig c;
  c.weight_decay = 0.1;
  c.momentum = 0.0;
  auto st = make_opt_state(s, c, 10);
  sgd_step(s, {}, {"shared.w", "shared.bn.gain"}, st, 1);
  CHECK(s.at("shared.w").value[0] == doctest::Approx(1.0 - 0.005 * 0.1).epsilon(1e-15));
  CHECK(s.at("shared.bn.gain").value[0] == doctest::Approx(1.0 - 0.005 * 0.1).epsilon(1e-15));
  CHECK(s.at("t0.w").value[0] == 0.5);  // not used
}

TEST_CASE("sgd_step: iter saturates at max_iter") {
  auto s = small_store();
  auto st = make_opt_state(s, OptimConfig{}, 2);
  for (int i = 0; i < 5; ++i) sgd_step(s, {}, {}, st, 1);
  CHECK(st.iter == 2);
  CHECK(poly_lr(st) == 0.0);
}

TEST_CASE("optim config: validation and JSON") {
  OptimConfig c;
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = OptimConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = OptimConfig{};
  c.base_lr = 0.01;
  const nlohmann::json j = c;
  OptimConfig back;
  from_json(j, back);
  CHECK(back.base_lr == 0.01);
  CHECK(nlohmann::json(back) == j);
  CHECK_THROWS_AS(make_opt_state(ParameterStore{}, OptimConfig{}, 0), ConfigError);
}
