// SPDX-License-Identifier: Apache-2.0

#include "taskmod/network/network.hpp"

#include <cmath>
#include <fstream>

#include "taskmod/autodiff/ops.hpp"
#include "taskmod/common/error.hpp"
#include "taskmod/common/rng.hpp"

namespace taskmod {

using ad::Shape;
using ad::Tensor;
using ad::Var;

SeOutput se_modulate(ParamLeaves& params, Var features, const SeParamIds& ids, const std::vector<double>* hard_mask) {
  const Shape fs = features.shape();
  if (fs.size() != 4) throw ShapeError("se_modulate: expected [N,C,H,W] features, got " + ad::to_string(fs));
  const std::int64_t c = fs[1];
  if (hard_mask) {
    if (static_cast<std::int64_t>(hard_mask->size()) != c) {
      throw ShapeError("se_modulate: mask has " + std::to_string(hard_mask->size()) + " entries for " +
                       std::to_string(c) + " channels");
    }
    const Var m = params.graph().constant(Tensor({1, c, 1, 1}, *hard_mask), "hard_mask");
    return {features * m, m};
  }
  const Var w1 = params.get(ids.w1);
  const Var b1 = params.get(ids.b1);
  const Var w2 = params.get(ids.w2);
  const Var b2 = params.get(ids.b2);
  const Shape s1 = w1.shape();
  if (s1.size() != 4 || s1[1] != c || w2.shape() != Shape{c, s1[0], 1, 1}) {
    throw ShapeError("se_modulate: SE weights " + ad::to_string(s1) + " / " + ad::to_string(w2.shape()) +
                     " do not fit " + std::to_string(c) + " channels");
  }
  const std::int64_t h = s1[0];
  const Var z = ad::relu(ad::conv2d(ad::global_avg_pool(features), w1) + ad::reshape(b1, {1, h, 1, 1}));
  const Var gate = ad::sigmoid(ad::conv2d(z, w2) + ad::reshape(b2, {1, c, 1, 1}));
  return {features * gate, gate};
}

Network::Network(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  const bool se_enc = config_.se_mode != SeMode::None && config_.se_scope != SeScope::Decoder;
  const bool se_dec = config_.se_mode != SeMode::None && config_.se_scope != SeScope::Encoder;
  int size = config_.input_size;
  int c = config_.stem_channels;
  const auto& stages = config_.stage_channels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    for (int j = 0; j < config_.blocks_per_stage; ++j) {
      BlockInfo b;
      b.index = static_cast<int>(blocks_.size());
      b.prefix = "enc.s" + std::to_string(i) + ".b" + std::to_string(j);
      b.in_channels = c;
      b.out_channels = stages[i];
      b.stride = (i > 0 && j == 0) ? 2 : 1;
      b.se = se_enc;
      b.in_size = size;
      b.out_size = size / b.stride;
      blocks_.push_back(b);
      c = b.out_channels;
      size = b.out_size;
    }
  }
  num_encoder_blocks_ = blocks_.size();
  interface_channels_ = c;
  interface_size_ = size;
  // Decoder: mirror the stage widths back up to half the input size.
  for (int j = 0; j + 2 < static_cast<int>(stages.size()); ++j) {
    BlockInfo b;
    b.index = static_cast<int>(blocks_.size());
    b.prefix = "dec.u" + std::to_string(j);
    b.in_channels = c;
    b.out_channels = stages[stages.size() - 2 - static_cast<std::size_t>(j)];
    b.upsample = true;
    b.decoder = true;
    b.se = se_dec;
    b.in_size = size * 2;
    b.out_size = size * 2;
    blocks_.push_back(b);
    c = b.out_channels;
    size = b.out_size;
  }
  head_channels_ = c;
  head_size_ = size;
}

void Network::check_task(int task) const {
  if (task < 0 || task >= num_tasks()) {
    throw ConfigError("unknown task id " + std::to_string(task) + " (network has " + std::to_string(num_tasks()) +
                      " tasks)");
  }
}

std::string Network::bn_prefix(const std::string& site, int task) const {
  return config_.effective_bn_mode() == BnMode::PerTask ? site + ".t" + std::to_string(task) : site;
}

SeParamIds Network::se_ids(const BlockInfo& block, int task) const {
  const std::string p =
      block.prefix + ".se" + (config_.se_mode == SeMode::PerTask ? ".t" + std::to_string(task) : std::string());
  return {p + ".w1", p + ".b1", p + ".w2", p + ".b2"};
}

template <class F>
void Network::visit_params(int task_filter, F&& f) const {
  const int tasks = num_tasks();
  auto for_owners = [&](bool per_task, auto&& g) {
    if (!per_task) {
      g(std::string(), Owner::shared());
      return;
    }
    for (int t = 0; t < tasks; ++t) {
      if (task_filter < 0 || task_filter == t) g(".t" + std::to_string(t), Owner::of_task(t));
    }
  };
  auto conv = [&](const std::string& id, std::int64_t co, std::int64_t ci, std::int64_t k, Owner o, Init init,
                  const std::string& tag) {
    f(ParamSpec{id, {co, ci, k, k}, o, Role::Weight, init, ci * k * k, tag});
  };
  const bool bn_task = config_.effective_bn_mode() == BnMode::PerTask;
  auto bn = [&](const std::string& site, std::int64_t c) {
    for_owners(bn_task, [&](const std::string& sfx, Owner o) {
      const std::string p = site + sfx;
      f(ParamSpec{p + ".gain", {c}, o, Role::BnGain, Init::One, 0, site + ".gain"});
      f(ParamSpec{p + ".bias", {c}, o, Role::BnBias, Init::Zero, 0, site + ".bias"});
      f(ParamSpec{p + ".rmean", {c}, o, Role::BnRunning, Init::Zero, 0, site + ".rmean"});
      f(ParamSpec{p + ".rvar", {c}, o, Role::BnRunning, Init::One, 0, site + ".rvar"});
    });
  };

  conv("stem.conv.w", config_.stem_channels, 3, 3, Owner::shared(), Init::He, "stem.conv.w");
  bn("stem.bn", config_.stem_channels);
  for (const auto& b : blocks_) {
    const std::int64_t ci = b.in_channels, co = b.out_channels;
    conv(b.prefix + ".conv1.w", co, ci, 3, Owner::shared(), Init::He, b.prefix + ".conv1.w");
    bn(b.prefix + ".bn1", co);
    conv(b.prefix + ".conv2.w", co, co, 3, Owner::shared(), Init::He, b.prefix + ".conv2.w");
    bn(b.prefix + ".bn2", co);
    if (b.projection()) conv(b.prefix + ".proj.w", co, ci, 1, Owner::shared(), Init::He, b.prefix + ".proj.w");
    if (b.se) {
      const std::int64_t h = co / config_.se_reduction;
      const std::string site = b.prefix + ".se";
      for_owners(config_.se_mode == SeMode::PerTask, [&](const std::string& sfx, Owner o) {
        const std::string p = site + sfx;
        conv(p + ".w1", h, co, 1, o, Init::He, site + ".w1");
        f(ParamSpec{p + ".b1", {h}, o, Role::Bias, Init::Zero, 0, site + ".b1"});
        conv(p + ".w2", co, h, 1, o, Init::He, site + ".w2");
        f(ParamSpec{p + ".b2", {co}, o, Role::Bias, Init::Zero, 0, site + ".b2"});
      });
    }
    if (config_.ra_enabled) {
      for_owners(true, [&](const std::string& sfx, Owner o) {
        conv(b.prefix + ".ra" + sfx + ".w", co, ci, 1, o, Init::Zero, b.prefix + ".ra.w");
      });
    }
  }
  for_owners(true, [&](const std::string& sfx, Owner o) {
    const auto& spec = config_.tasks[static_cast<std::size_t>(o.task)];
    const std::string p = "head" + sfx;
    conv(p + ".w", spec.out_channels, head_channels_, 1, o, Init::He, p + ".w");
    f(ParamSpec{p + ".b", {spec.out_channels}, o, Role::Bias, Init::Zero, 0, p + ".b"});
  });
}

std::vector<ParamSpec> Network::param_specs() const {
  std::vector<ParamSpec> out;
  visit_params(-1, [&](ParamSpec s) { out.push_back(std::move(s)); });
  return out;
}

std::set<std::string> Network::params_used(int task) const {
  check_task(task);
  std::set<std::string> out;
  visit_params(task, [&](const ParamSpec& s) {
    if (s.role != Role::BnRunning) out.insert(s.id);
  });
  return out;
}

Var Network::batch_norm(ParamLeaves& params, Var x, const std::string& site, int task, Mode mode,
                        ForwardResult* taps) const {
  const std::string p = bn_prefix(site, task);
  const Var gain = params.get(p + ".gain");
  const Var bias = params.get(p + ".bias");
  if (mode == Mode::Eval) {
    return ad::batch_norm_eval(x, gain, bias, params.get(p + ".rmean"), params.get(p + ".rvar"));
  }
  const auto r = ad::batch_norm_train(x, gain, bias);
  if (taps) {
    const Shape s = x.shape();
    taps->bn_taps.push_back({p, r.batch_mean, r.batch_var, s[0] * s[2] * s[3]});
  }
  return r.out;
}

Var Network::residual_block(ParamLeaves& params, Var x, const BlockInfo& b, int task, Mode mode,
                            const HardMasks* masks, ForwardResult* taps) const {
  check_task(task);
  Var a = ad::conv2d(x, params.get(b.prefix + ".conv1.w"), b.stride, 1);
  a = ad::relu(batch_norm(params, a, b.prefix + ".bn1", task, mode, taps));
  a = ad::conv2d(a, params.get(b.prefix + ".conv2.w"), 1, 1);
  a = batch_norm(params, a, b.prefix + ".bn2", task, mode, taps);
  if (b.se) {
    const std::vector<double>* mask = nullptr;
    if (masks) {
      auto it = masks->find(b.index);
      if (it != masks->end()) mask = &it->second;
    }
    const auto se = se_modulate(params, a, se_ids(b, task), mask);
    a = se.out;
    if (taps) taps->se_gates.push_back({b.index, se.gate});
  }
  const Var skip = b.projection() ? ad::conv2d(x, params.get(b.prefix + ".proj.w"), b.stride, 0) : x;
  Var s = skip + a;
  if (config_.ra_enabled) {
    s = s + ad::conv2d(x, params.get(b.prefix + ".ra.t" + std::to_string(task) + ".w"), b.stride, 0);
  }
  return ad::relu(s);
}

ForwardResult Network::forward(ParamLeaves& params, Var images, int task, Mode mode, const HardMasks* masks) const {
  check_task(task);
  const Shape s = images.shape();
  const std::int64_t side = config_.input_size;
  if (s.size() != 4 || s[1] != 3 || s[2] != side || s[3] != side) {
    throw ShapeError("forward: expected images [N,3," + std::to_string(side) + "," + std::to_string(side) +
                     "], got " + ad::to_string(s));
  }
  ForwardResult r;
  Var h = ad::conv2d(images, params.get("stem.conv.w"), 1, 1);
  h = ad::relu(batch_norm(params, h, "stem.bn", task, mode, &r));
  for (const auto& b : blocks_) {
    if (b.upsample) h = ad::upsample(h, 2);
    h = residual_block(params, h, b, task, mode, masks, &r);
    if (static_cast<std::size_t>(b.index) + 1 == num_encoder_blocks_) r.interface = h;
  }
  const std::string head = "head.t" + std::to_string(task);
  const std::int64_t out_c = config_.tasks[static_cast<std::size_t>(task)].out_channels;
  Var o = ad::conv2d(h, params.get(head + ".w")) + ad::reshape(params.get(head + ".b"), {1, out_c, 1, 1});
  r.output = ad::upsample(o, side / head_size_);
  return r;
}

ParameterStore init_parameters(const Network& net, std::uint64_t seed) {
  ParameterStore store;
  for (const auto& spec : net.param_specs()) {
    Tensor t(spec.shape, spec.init == Init::One ? 1.0 : 0.0);
    if (spec.init == Init::He) {
      Rng rng(mix_seed(seed, spec.seed_tag));
      const double sd = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
      for (auto& v : t.data) v = sd * rng.normal();
    }
    store.add(spec.id, std::move(t), spec.owner, spec.role);
  }
  return store;
}

std::pair<Network, ParameterStore> build_network(const NetworkConfig& config, std::uint64_t seed) {
  Network net(config);
  ParameterStore store = init_parameters(net, seed);
  return {std::move(net), std::move(store)};
}

void update_running_stats(ParameterStore& store, const std::vector<BnTap>& taps, const std::vector<Tensor>& means,
                          const std::vector<Tensor>& vars, double momentum) {
  for (std::size_t i = 0; i < taps.size(); ++i) {
    auto& rm = store.at(taps[i].prefix + ".rmean").value;
    auto& rv = store.at(taps[i].prefix + ".rvar").value;
    const double n = static_cast<double>(taps[i].count);
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = (1.0 - momentum) * rm[c] + momentum * means[i][c];
      rv[c] = (1.0 - momentum) * rv[c] + momentum * vars[i][c] * unbias;
    }
  }
}

std::vector<GateRow> se_gate_table(const Network& net, const ParameterStore& store, const Tensor& images) {
  std::vector<GateRow> rows;
  for (int t = 0; t < net.num_tasks(); ++t) {
    ad::Graph g;
    ParamLeaves params(g, store);
    const Var x = g.constant(images, "images");
    const auto r = net.forward(params, x, t, Mode::Eval);
    std::vector<Var> gates;
    for (const auto& tap : r.se_gates) gates.push_back(tap.gate);
    const auto values = g.evaluate(gates);
    for (std::size_t k = 0; k < values.size(); ++k) {
      const Tensor& v = values[k];
      const std::int64_t n = v.dim(0), c = v.dim(1);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) acc += v.at(i, ch, 0, 0);
        rows.push_back({r.se_gates[k].block, t, static_cast<int>(ch), acc / static_cast<double>(n)});
      }
    }
  }
  return rows;
}

void export_se_gates(const Network& net, const ParameterStore& store, const Tensor& images,
                     const std::filesystem::path& out_path) {
  if (net.config().se_mode != SeMode::PerTask) {
    throw ConfigError("export_se_gates needs se_mode=per_task (configured: " +
                      std::string(to_string(net.config().se_mode)) + ")");
  }
  const auto rows = se_gate_table(net, store, images);
  std::ofstream os(out_path);
  if (!os) throw IoError("cannot write " + out_path.string());
  os.precision(17);
  os << "block_index,task_id,channel,mean_gate\n";
  for (const auto& r : rows) os << r.block << ',' << r.task << ',' << r.channel << ',' << r.mean_gate << '\n';
  if (!os) throw IoError("write failed for " + out_path.string());
}

}  // namespace taskmod
