// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "taskmod/adversarial/adversarial.hpp"
#include "taskmod/autodiff/fd_check.hpp"
#include "taskmod/autodiff/ops.hpp"
#include "taskmod/common/error.hpp"
#include "test_support.hpp"

using namespace taskmod;
using ad::Shape;
using ad::Tensor;
using ad::Var;
using taskmod::testing::random_coeffs;
using taskmod::testing::random_tensor;

namespace {

// A one-conv "network" whose output is the interface, followed by a
// nonlinear task loss.
struct ToyNet {
  ad::Graph g;
  Var w, interface, loss;
  ad::Bindings bindings;

  explicit ToyNet(std::uint64_t seed, double loss_scale = 1.0) {
    Rng rng(seed);
    w = g.leaf({3, 2, 3, 3}, "w");
    bindings[w.id] = random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
    const Var x = g.constant(random_tensor(rng, {2, 2, 5, 5}));
    interface = ad::conv2d(x, w, 1, 1);
    const Var c = g.constant(random_coeffs(rng, {2, 3, 5, 5}));
    loss = ad::scale(ad::sum_all(ad::sigmoid(interface) * c + interface * interface), loss_scale);
  }
};

}  // namespace

TEST_CASE("extract_gradient: linear and quadratic losses") {
  ad::Graph g;
  Rng rng(1);
  const Tensor xv = random_tensor(rng, {2, 3, 2, 2});
  const Var x = g.constant(xv);
  const Var i = ad::scale(x, 1.0);
  CHECK(g.evaluate(extract_gradient(ad::sum_all(i), i)).data == std::vector<double>(xv.size(), 1.0));
  const Tensor q = g.evaluate(extract_gradient(ad::scale(ad::sum_all(i * i), 0.5), i));
  for (std::size_t k = 0; k < q.size(); ++k) CHECK(q[k] == doctest::Approx(xv[k]).epsilon(1e-15));
  const Var other = g.constant(xv);
  CHECK_THROWS_AS(extract_gradient(ad::sum_all(i), other), Error);
}

TEST_CASE("extract_gradient: second-order path matches finite differences") {
  for (std::uint64_t seed : {2, 3, 4}) {
    ToyNet net(seed);
    const Var gr = extract_gradient(net.loss, net.interface);
    Rng rng(seed + 100);
    const Var s = ad::sum_all(gr * net.g.constant(random_coeffs(rng, gr.shape())));
    CHECK(ad::fd_check(net.g, s, net.w, 1e-6, net.bindings) < 1e-4);
    const Var sn = ad::sum_all(normalize_gradient(gr) * net.g.constant(random_coeffs(rng, gr.shape())));
    CHECK(ad::fd_check(net.g, sn, net.w, 1e-6, net.bindings) < 1e-4);
  }
}

TEST_CASE("normalize_gradient: unit norm per sample, scale invariance, zero guard") {
  ad::Graph g;
  Rng rng(5);
  const Tensor v = random_tensor(rng, {3, 4, 2, 2});
  const Tensor n1 = g.evaluate(normalize_gradient(g.constant(v)));
  Tensor big = v;
  for (auto& x : big.data) x *= 1000.0;
  const Tensor n2 = g.evaluate(normalize_gradient(g.constant(big)));
  for (std::int64_t s = 0; s < 3; ++s) {
    double ss = 0.0;
    for (std::size_t k = 0; k < 16; ++k) ss += n1[static_cast<std::size_t>(s) * 16 + k] * n1[static_cast<std::size_t>(s) * 16 + k];
    CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-9);
  }
  for (std::size_t k = 0; k < v.size(); ++k) CHECK(std::abs(n1[k] - n2[k]) < 1e-9);
  const Tensor z = g.evaluate(normalize_gradient(g.zeros({2, 4, 2, 2})));
  for (double x : z.data) CHECK(x == 0.0);
}

TEST_CASE("normalized gradient does not depend on the task loss weight") {
  ToyNet a(7, 1.0), b(7, 50.0 * 0.9);
  const Tensor ga = a.g.evaluate(normalize_gradient(extract_gradient(a.loss, a.interface)), a.bindings);
  const Tensor gb = b.g.evaluate(normalize_gradient(extract_gradient(b.loss, b.interface)), b.bindings);
  for (std::size_t k = 0; k < ga.size(); ++k) CHECK(std::abs(ga[k] - gb[k]) < 1e-12);
}

TEST_CASE("discriminate: zero weights give ln T, hand-set logits, strong favouring") {
  ParameterStore s;
  add_discriminator(s, 4, 8, 4, 1);
  for (const auto& id : discriminator_ids(s)) s.at(id).value = Tensor(s.at(id).value.shape, 0.0);
  CHECK(discriminator_ids(s).size() == 4);
  {
    ad::Graph g;
    ParamLeaves p(g, s);
    Rng rng(1);
    const auto d = discriminate(p, g.constant(random_tensor(rng, {2, 4, 3, 3})), 2);
    CHECK(d.logits.shape() == Shape{2, 4, 3, 3});
    CHECK(std::abs(g.evaluate(d.loss)[0] - std::log(4.0)) < 1e-12);
  }
  {
    // one pixel, C=1, hidden 1, T=2: h = relu(g) = 1, logits (2, 0)
    ParameterStore h;
    h.add("disc.conv1.w", Tensor({1, 1, 1, 1}, 1.0), Owner::discriminator(), Role::Weight);
    h.add("disc.conv1.b", Tensor({1}), Owner::discriminator(), Role::Bias);
    h.add("disc.conv2.w", Tensor({2, 1, 1, 1}, {2.0, 0.0}), Owner::discriminator(), Role::Weight);
    h.add("disc.conv2.b", Tensor({2}), Owner::discriminator(), Role::Bias);
    ad::Graph g;
    ParamLeaves p(g, h);
    const Var one = g.constant(Tensor({1, 1, 1, 1}, 1.0));
    CHECK(g.evaluate(discriminate(p, one, 0).loss)[0] == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
    CHECK(g.evaluate(discriminate(p, one, 1).loss)[0] == doctest::Approx(std::log1p(std::exp(2.0))).epsilon(1e-14));

    h.at("disc.conv2.w").value = Tensor({2, 1, 1, 1}, {60.0, 0.0});
    ad::Graph g2;
    ParamLeaves p2(g2, h);
    CHECK(g2.evaluate(discriminate(p2, g2.constant(Tensor({1, 1, 1, 1}, 1.0)), 0).loss)[0] < 1e-20);
  }
  ad::Graph g;
  ParamLeaves p(g, s);
  CHECK_THROWS_AS(discriminate(p, g.zeros({1, 3, 2, 2}), 0), ShapeError);
  CHECK_THROWS_AS(discriminate(p, g.zeros({1, 4, 2, 2}), 4), ConfigError);
}

TEST_CASE("adversarial_step_terms: reversal, stop-gradients and lambda = 0") {
  for (double lambda : {0.0, 0.25, 1.0}) {
    ToyNet net(11);
    ParameterStore s;
    add_discriminator(s, 3, 6, 4, 3);
    ParamLeaves p(net.g, s);
    const Var ghat = normalize_gradient(extract_gradient(net.loss, net.interface));
    const auto terms = adversarial_step_terms(p, ghat, 1, lambda, 0.1);
    // unreversed reference: w_d L_d through g with D frozen
    const Var ref = ad::scale(discriminate(p, ghat, 1, true).loss, 0.1);
    const Var dw1 = p.get("disc.conv1.w");
    const auto vals = net.g.evaluate(
        std::vector<Var>{ad::backward(terms.network_update_loss, net.w), ad::backward(ref, net.w),
                         ad::backward(terms.disc_update_loss, net.w), ad::backward(terms.network_update_loss, dw1),
                         ad::backward(terms.disc_update_loss, dw1)},
        net.bindings);
    for (std::size_t k = 0; k < vals[0].size(); ++k) {
      CHECK(std::abs(vals[0][k] - (-lambda) * vals[1][k]) <= 1e-12);
      if (lambda == 0.0) CHECK(vals[0][k] == 0.0);
      CHECK(vals[2][k] == 0.0);  // disc side sends nothing into the network
    }
    double disc_grad = 0.0;
    for (std::size_t k = 0; k < vals[3].size(); ++k) {
      CHECK(vals[3][k] == 0.0);  // network side sends nothing into D
      disc_grad += std::abs(vals[4][k]);
    }
    CHECK(disc_grad > 0.0);
  }
}

TEST_CASE("adv config: validation, ramp and JSON") {
  AdvConfig c;
  c.validate();
  c.lambda = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.lambda = 0.5;
  c.w_d = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.w_d = 0.1;
  c.lambda_ramp_steps = 10;
  CHECK(c.lambda_at(0) == 0.0);
  CHECK(c.lambda_at(5) == 0.25);
  CHECK(c.lambda_at(50) == 0.5);
  const nlohmann::json j = c;
  AdvConfig back;
  from_json(j, back);
  CHECK(nlohmann::json(back) == j);
}
