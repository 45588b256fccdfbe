// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "taskmod/autodiff/ops.hpp"
#include "taskmod/common/error.hpp"
#include "taskmod/network/network.hpp"
#include "test_support.hpp"

using namespace taskmod;
using ad::Shape;
using ad::Tensor;
using ad::Var;
using taskmod::testing::random_tensor;

namespace {

NetworkConfig tiny(const std::string& tasks = "edge,seg,norm,depth") {
  NetworkConfig c;
  c.input_size = 16;
  c.stem_channels = 4;
  c.stage_channels = {4, 8, 8};
  c.blocks_per_stage = 1;
  c.se_reduction = 2;
  c.tasks = parse_task_list(tasks);
  return c;
}

std::set<std::string> task_owned(const ParameterStore& s) {
  return s.select([](const Owner& o) { return o.kind == Owner::Kind::Task; });
}

Tensor images(std::uint64_t seed, std::int64_t n, std::int64_t side) {
  Rng rng(seed);
  return random_tensor(rng, {n, 3, side, side}, 0.0, 1.0);
}

Tensor run(const Network& net, const ParameterStore& store, const Tensor& x, int task, Mode mode,
           const HardMasks* masks = nullptr) {
  ad::Graph g;
  ParamLeaves p(g, store);
  return g.evaluate(net.forward(p, g.constant(x), task, mode, masks).output);
}

}  // namespace

TEST_CASE("build: without modulation only the heads are task-owned") {
  auto c = tiny();
  c.bn_mode = BnMode::Shared;
  const auto [net, store] = build_network(c, 1);
  for (const auto& id : task_owned(store)) CHECK(id.rfind("head.t", 0) == 0);
  CHECK(task_owned(store).size() == 8);
}

TEST_CASE("build: per-task SE in every block, one set per task") {
  auto c = tiny();
  c.se_mode = SeMode::PerTask;
  c.se_scope = SeScope::Both;
  const auto [net, store] = build_network(c, 1);
  int se_blocks = 0;
  for (const auto& b : net.blocks()) {
    CHECK(b.se);
    ++se_blocks;
    for (int t = 0; t < 4; ++t) {
      for (const char* part : {".w1", ".b1", ".w2", ".b2"}) {
        const auto id = b.prefix + ".se.t" + std::to_string(t) + part;
        REQUIRE(store.contains(id));
        CHECK(store.at(id).owner == Owner::of_task(t));
      }
    }
  }
  CHECK(se_blocks == 4);  // 3 encoder + 1 decoder
  CHECK(c.effective_bn_mode() == BnMode::PerTask);
}

TEST_CASE("build: se scope selects encoder or decoder blocks") {
  auto c = tiny();
  c.se_mode = SeMode::Shared;
  c.se_scope = SeScope::Decoder;
  const Network net(c);
  for (const auto& b : net.blocks()) CHECK(b.se == b.decoder);
  c.se_scope = SeScope::Encoder;
  const Network enc(c);
  for (const auto& b : enc.blocks()) CHECK(b.se == !b.decoder);
}

TEST_CASE("build: same seed gives identical stores, other seeds differ") {
  auto c = tiny();
  c.se_mode = SeMode::PerTask;
  c.ra_enabled = true;
  const auto a = build_network(c, 5).second;
  const auto b = build_network(c, 5).second;
  const auto d = build_network(c, 6).second;
  CHECK(a == b);
  CHECK_FALSE(a == d);
}

TEST_CASE("build: initial values follow the init rules") {
  auto c = tiny();
  c.se_mode = SeMode::PerTask;
  c.ra_enabled = true;
  const auto [net, store] = build_network(c, 2);
  for (const auto& [id, e] : store.entries()) {
    if (id.find(".ra.") != std::string::npos || id.ends_with(".b1") || id.ends_with(".b2") || id.ends_with(".bias") ||
        id.ends_with(".rmean")) {
      for (double v : e.value.data) CHECK(v == 0.0);
    }
    if (id.ends_with(".gain") || id.ends_with(".rvar")) {
      for (double v : e.value.data) CHECK(v == 1.0);
    }
  }
  // He init: sample variance near 2 / fan_in for a large tensor
  const auto& w = store.at("enc.s2.b0.conv2.w").value;
  double ss = 0.0;
  for (double v : w.data) ss += v * v;
  CHECK(ss / static_cast<double>(w.size()) == doctest::Approx(2.0 / 72.0).epsilon(0.2));
}

TEST_CASE("config: validation errors and JSON round trip") {
  auto c = tiny();
  c.stage_channels.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.se_reduction = 16;  // 4 / 16 < 1
  c.se_mode = SeMode::PerTask;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.input_size = 18;  // not divisible by 4
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.tasks.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_task_list("edge,bogus"), ConfigError);

  c = tiny();
  c.se_mode = SeMode::PerTask;
  c.se_scope = SeScope::Decoder;
  c.ra_enabled = true;
  c.bn_mode = BnMode::Shared;
  const nlohmann::json j = c;
  NetworkConfig back;
  from_json(j, back);
  CHECK(nlohmann::json(back) == j);
  CHECK(back.tasks == c.tasks);
  CHECK(back.bn_mode == BnMode::Shared);
}

TEST_CASE("se_modulate: zero weights gate every channel at one half") {
  ad::Graph g;
  ParameterStore s;
  s.add("w1", Tensor({1, 2, 1, 1}), Owner::shared(), Role::Weight);
  s.add("b1", Tensor({1}), Owner::shared(), Role::Bias);
  s.add("w2", Tensor({2, 1, 1, 1}), Owner::shared(), Role::Weight);
  s.add("b2", Tensor({2}), Owner::shared(), Role::Bias);
  ParamLeaves p(g, s);
  Rng rng(3);
  const Tensor f = random_tensor(rng, {2, 2, 3, 3});
  const auto out = g.evaluate(se_modulate(p, g.constant(f), {"w1", "b1", "w2", "b2"}).out);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(out[i] == f[i] / 2.0);
}

TEST_CASE("se_modulate: hand-evaluated gate") {
  // F = ones[1,2,2,2]; W1 averages the two channels, W2 copies back with
  // weight 1 -> gate = sigmoid(relu(1)) = 1 / (1 + e^-1).
  ad::Graph g;
  ParameterStore s;
  s.add("w1", Tensor({1, 2, 1, 1}, {0.5, 0.5}), Owner::shared(), Role::Weight);
  s.add("b1", Tensor({1}), Owner::shared(), Role::Bias);
  s.add("w2", Tensor({2, 1, 1, 1}, {1.0, 1.0}), Owner::shared(), Role::Weight);
  s.add("b2", Tensor({2}), Owner::shared(), Role::Bias);
  ParamLeaves p(g, s);
  const auto r = se_modulate(p, g.constant(Tensor({1, 2, 2, 2}, 1.0)), {"w1", "b1", "w2", "b2"});
  const auto out = g.evaluate(r.out);
  for (double v : out.data) CHECK(v == doctest::Approx(0.7310585786300049).epsilon(1e-15));
}

TEST_CASE("se_modulate: hard mask zeroes a channel and its gradient") {
  ad::Graph g;
  ParameterStore s;
  ParamLeaves p(g, s);
  Rng rng(9);
  const Tensor fv = random_tensor(rng, {2, 2, 3, 3});
  const Var f = g.leaf({2, 2, 3, 3});
  const std::vector<double> mask{1.0, 0.0};
  const auto r = se_modulate(p, f, {}, &mask);
  const Var loss = ad::sum_all(r.out * g.constant(random_tensor(rng, {2, 2, 3, 3})));
  const Var grad = ad::backward(loss, f);
  ad::Bindings b{{f.id, fv}};
  const auto vals = g.evaluate(std::vector<Var>{r.out, grad}, b);
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t y = 0; y < 3; ++y) {
      for (std::int64_t x = 0; x < 3; ++x) {
        CHECK(vals[0].at(n, 0, y, x) == fv.at(n, 0, y, x));
        CHECK(vals[0].at(n, 1, y, x) == 0.0);
        CHECK(vals[1].at(n, 1, y, x) == 0.0);
        CHECK(vals[1].at(n, 0, y, x) != 0.0);
      }
    }
  }
  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(se_modulate(p, f, {}, &bad), ShapeError);
}

TEST_CASE("residual_block: zero adapters reproduce the plain block exactly") {
  auto plain_cfg = tiny();
  plain_cfg.bn_mode = BnMode::Shared;
  auto ra_cfg = plain_cfg;
  ra_cfg.ra_enabled = true;
  const auto [plain, ps] = build_network(plain_cfg, 4);
  const auto [ra, rs] = build_network(ra_cfg, 4);
  Rng rng(1);
  for (const auto& b : plain.blocks()) {
    const Tensor x = random_tensor(rng, {2, b.in_channels, b.in_size, b.in_size});
    for (int t = 0; t < 4; ++t) {
      ad::Graph g1, g2;
      ParamLeaves p1(g1, ps), p2(g2, rs);
      const Tensor y1 = g1.evaluate(plain.residual_block(p1, g1.constant(x), b, t, Mode::Train, nullptr, nullptr));
      const Tensor y2 = g2.evaluate(ra.residual_block(p2, g2.constant(x), b, t, Mode::Train, nullptr, nullptr));
      CHECK(ad::bitwise_equal(y1, y2));
    }
  }
}

TEST_CASE("residual_block: task-independent without task-owned parameters") {
  auto c = tiny();
  c.bn_mode = BnMode::Shared;
  const auto [net, store] = build_network(c, 4);
  const auto& b = net.blocks()[1];
  Rng rng(2);
  const Tensor x = random_tensor(rng, {2, b.in_channels, b.in_size, b.in_size});
  Tensor first;
  for (int t = 0; t < 4; ++t) {
    ad::Graph g;
    ParamLeaves p(g, store);
    const Tensor y = g.evaluate(net.residual_block(p, g.constant(x), b, t, Mode::Eval, nullptr, nullptr));
    if (t == 0) {
      first = y;
    } else {
      CHECK(ad::bitwise_equal(first, y));
    }
  }
  ad::Graph g;
  ParamLeaves p(g, store);
  CHECK_THROWS_AS(net.residual_block(p, g.constant(x), b, 4, Mode::Eval, nullptr, nullptr), ConfigError);
}

TEST_CASE("residual_block: a nonzero adapter for task 0 separates tasks 0 and 1") {
  auto c = tiny();
  c.ra_enabled = true;
  auto [net, store] = build_network(c, 4);
  const auto& b = net.blocks()[0];
  Rng rng(3);
  auto& w = store.at(b.prefix + ".ra.t0.w").value;
  w = random_tensor(rng, w.shape);
  const Tensor x = random_tensor(rng, {2, b.in_channels, b.in_size, b.in_size});
  std::vector<Tensor> ys;
  for (int t = 0; t < 2; ++t) {
    ad::Graph g;
    ParamLeaves p(g, store);
    ys.push_back(g.evaluate(net.residual_block(p, g.constant(x), b, t, Mode::Eval, nullptr, nullptr)));
  }
  CHECK_FALSE(ad::bitwise_equal(ys[0], ys[1]));
}

TEST_CASE("forward: shapes, interface and errors") {
  const auto [net, store] = build_network(tiny(), 1);
  ad::Graph g;
  ParamLeaves p(g, store);
  const auto r = net.forward(p, g.constant(images(1, 2, 16)), 1, Mode::Train);
  CHECK(r.output.shape() == Shape{2, 4, 16, 16});
  CHECK(r.interface.shape() == Shape{2, 8, 4, 4});
  CHECK(r.bn_taps.size() == 1 + 2 * net.blocks().size());
  CHECK_THROWS_AS(net.forward(p, g.constant(images(1, 2, 8)), 0, Mode::Eval), ShapeError);
  CHECK_THROWS_AS(net.forward(p, g.constant(images(1, 2, 16)), 7, Mode::Eval), ConfigError);
}

TEST_CASE("forward: identical per-task parameters give identical outputs") {
  auto c = tiny("edge,depth");
  c.se_mode = SeMode::PerTask;
  c.ra_enabled = true;
  auto [net, store] = build_network(c, 8);
  store.at("head.t1.w").value = store.at("head.t0.w").value;
  store.at("head.t1.b").value = store.at("head.t0.b").value;
  const Tensor x = images(2, 3, 16);
  CHECK(ad::bitwise_equal(run(net, store, x, 0, Mode::Train), run(net, store, x, 1, Mode::Train)));
}

TEST_CASE("forward: eval mode is repeatable") {
  auto c = tiny();
  c.se_mode = SeMode::Shared;
  const auto [net, store] = build_network(c, 8);
  const Tensor x = images(3, 2, 16);
  CHECK(ad::bitwise_equal(run(net, store, x, 2, Mode::Eval), run(net, store, x, 2, Mode::Eval)));
}

TEST_CASE("forward: identity start matches the unmodulated network") {
  auto base = tiny();
  base.bn_mode = BnMode::Shared;
  auto mod = base;
  mod.se_mode = SeMode::PerTask;
  mod.ra_enabled = true;
  const auto [bnet, bstore] = build_network(base, 11);
  const auto [mnet, mstore] = build_network(mod, 11);
  HardMasks ones;
  for (const auto& b : mnet.blocks()) ones[b.index] = std::vector<double>(static_cast<std::size_t>(b.out_channels), 1.0);
  const Tensor x = images(4, 2, 16);
  for (int t = 0; t < 4; ++t) {
    CHECK(ad::bitwise_equal(run(bnet, bstore, x, t, Mode::Train), run(mnet, mstore, x, t, Mode::Train, &ones)));
  }
}

TEST_CASE("params_used: ownership partition") {
  auto c = tiny();
  c.bn_mode = BnMode::Shared;
  {
    const auto [net, store] = build_network(c, 1);
    std::set<std::string> owned_used;
    for (const auto& id : net.params_used(0)) {
      if (store.at(id).owner.kind == Owner::Kind::Task) owned_used.insert(id);
    }
    CHECK(owned_used == std::set<std::string>{"head.t0.b", "head.t0.w"});
  }
  c.se_mode = SeMode::PerTask;
  c.ra_enabled = true;
  c.bn_mode.reset();
  const auto [net, store] = build_network(c, 1);
  const auto shared = store.select([](const Owner& o) { return o.kind == Owner::Kind::Shared; });
  std::set<std::string> all;
  for (int t = 0; t < 4; ++t) {
    const auto u = net.params_used(t);
    all.insert(u.begin(), u.end());
    for (const auto& id : u) {
      const auto& o = store.at(id).owner;
      CHECK((o.kind == Owner::Kind::Shared || o.is_task(t)));
      CHECK(store.at(id).role != Role::BnRunning);
    }
    for (int v = t + 1; v < 4; ++v) {
      std::set<std::string> inter;
      const auto w = net.params_used(v);
      std::set_intersection(u.begin(), u.end(), w.begin(), w.end(), std::inserter(inter, inter.end()));
      CHECK(inter == shared);
    }
  }
  const auto trainable = store.trainable_ids();
  CHECK(all == std::set<std::string>(trainable.begin(), trainable.end()));
}

TEST_CASE("gradient isolation: task t's loss leaves other tasks' parameters at zero") {
  auto c = tiny("edge,seg,depth");
  c.se_mode = SeMode::PerTask;
  c.ra_enabled = true;
  const auto [net, store] = build_network(c, 3);
  ad::Graph g;
  ParamLeaves p(g, store);
  const auto r = net.forward(p, g.constant(images(5, 2, 16)), 1, Mode::Train);
  const Var loss = ad::mean_all(r.output * r.output);
  std::vector<std::string> ids;
  std::vector<Var> leaves;
  for (const auto& [id, e] : store.entries()) {
    if (!e.trainable()) continue;
    ids.push_back(id);
    leaves.push_back(p.get(id));
  }
  const auto grads = g.evaluate(ad::backward(loss, leaves));
  int nonzero_own = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& o = store.at(ids[i]).owner;
    if (o.kind == Owner::Kind::Task && o.task != 1) {
      for (double v : grads[i].data) CHECK(v == 0.0);
    }
    if (o.is_task(1)) {
      for (double v : grads[i].data) nonzero_own += v != 0.0;
    }
  }
  CHECK(nonzero_own > 0);
}

TEST_CASE("update_running_stats: momentum average with unbiased variance") {
  ParameterStore s;
  s.add("bn.rmean", Tensor({2}, {0.0, 1.0}), Owner::shared(), Role::BnRunning);
  s.add("bn.rvar", Tensor({2}, {1.0, 1.0}), Owner::shared(), Role::BnRunning);
  ad::Graph g;
  const std::vector<BnTap> taps{{"bn", g.zeros({1, 2, 1, 1}), g.zeros({1, 2, 1, 1}), 5}};
  update_running_stats(s, taps, {Tensor({1, 2, 1, 1}, {2.0, -1.0})}, {Tensor({1, 2, 1, 1}, {4.0, 0.0})}, 0.1);
  CHECK(s.at("bn.rmean").value[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(s.at("bn.rmean").value[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s.at("bn.rvar").value[0] == doctest::Approx(0.9 + 0.1 * 4.0 * 5.0 / 4.0).epsilon(1e-15));
  CHECK(s.at("bn.rvar").value[1] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("export_se_gates: CSV rows, zero-weight gates and refusal without per-task SE") {
  auto c = tiny("edge,seg");
  c.se_mode = SeMode::PerTask;
  auto [net, store] = build_network(c, 6);
  const Tensor x = images(6, 3, 16);
  const auto dir = std::filesystem::temp_directory_path() / "taskmod_gates_test";
  std::filesystem::create_directories(dir);

  // identical per-task SE parameters at init -> rows agree across tasks
  const auto rows = se_gate_table(net, store, x);
  std::map<std::tuple<int, int>, double> by_task0;
  for (const auto& r : rows) {
    CHECK(r.mean_gate >= 0.0);
    CHECK(r.mean_gate <= 1.0);
    if (r.task == 0) by_task0[{r.block, r.channel}] = r.mean_gate;
  }
  for (const auto& r : rows) {
    if (r.task == 1) CHECK(r.mean_gate == by_task0.at({r.block, r.channel}));
  }

  for (auto& [id, e] : store.entries()) {
    if (id.find(".se.") != std::string::npos) store.at(id).value = Tensor(e.value.shape, 0.0);
  }
  export_se_gates(net, store, x, dir / "gates.csv");
  std::ifstream is(dir / "gates.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "block_index,task_id,channel,mean_gate");
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    CHECK(line.substr(line.rfind(',') + 1) == "0.5");
  }
  int expected = 0;
  for (const auto& b : net.blocks()) expected += 2 * b.out_channels;
  CHECK(n == expected);

  auto plain = tiny("edge,seg");
  const auto [pnet, pstore] = build_network(plain, 6);
  CHECK_THROWS_AS(export_se_gates(pnet, pstore, x, dir / "none.csv"), ConfigError);
  std::filesystem::remove_all(dir);
}
