// SPDX-License-Identifier: Apache-2.0

#include "taskmod/eval/resources.hpp"

#include "taskmod/autodiff/graph.hpp"

namespace taskmod {

std::int64_t conv_params(std::int64_t k, std::int64_t cin, std::int64_t cout, bool bias) {
  return k * k * cin * cout + (bias ? cout : 0);
}

std::int64_t conv_madds(std::int64_t k, std::int64_t cin, std::int64_t cout, std::int64_t hout, std::int64_t wout) {
  return k * k * cin * cout * hout * wout;
}

std::int64_t se_params(std::int64_t c, std::int64_t r) {
  return 2 * c * c / r + c / r + c;
}

void to_json(nlohmann::json& j, const ResourceReport& r) {
  nlohmann::json per_task = nlohmann::json::object(), madds = nlohmann::json::object();
  for (const auto& [t, n] : r.per_task_params) per_task[std::to_string(t)] = n;
  for (const auto& [t, n] : r.madds_per_forward) madds[std::to_string(t)] = n;
  j = nlohmann::json{{"shared_params", r.shared_params},
                     {"per_task_params", per_task},
                     {"total_params", r.total_params},
                     {"madds_per_forward", madds},
                     {"discriminator_params", r.discriminator_params}};
}

ResourceReport count_resources(const NetworkConfig& cfg, int disc_hidden) {
  cfg.validate();
  const int tasks = cfg.num_tasks();
  const bool bn_task = cfg.effective_bn_mode() == BnMode::PerTask;
  const bool se_task = cfg.se_mode == SeMode::PerTask;
  const std::int64_t r = cfg.se_reduction;

  ResourceReport rep;
  std::int64_t per_task_common = 0;  // identical for every task
  std::int64_t madds_common = 0;
  auto add_bn = [&](std::int64_t c) { (bn_task ? per_task_common : rep.shared_params) += 2 * c; };
  auto add_block = [&](std::int64_t ci, std::int64_t co, std::int64_t stride, std::int64_t out_size, bool se) {
    rep.shared_params += conv_params(3, ci, co, false) + conv_params(3, co, co, false);
    madds_common += conv_madds(3, ci, co, out_size, out_size) + conv_madds(3, co, co, out_size, out_size);
    add_bn(co);
    add_bn(co);
    if (stride != 1 || ci != co) {
      rep.shared_params += conv_params(1, ci, co, false);
      madds_common += conv_madds(1, ci, co, out_size, out_size);
    }
    if (se) {
      (se_task ? per_task_common : rep.shared_params) += se_params(co, r);
      madds_common += conv_madds(1, co, co / r, 1, 1) + conv_madds(1, co / r, co, 1, 1);
    }
    if (cfg.ra_enabled) {
      per_task_common += conv_params(1, ci, co, false);
      madds_common += conv_madds(1, ci, co, out_size, out_size);
    }
  };

  std::int64_t size = cfg.input_size;
  std::int64_t c = cfg.stem_channels;
  rep.shared_params += conv_params(3, 3, c, false);
  madds_common += conv_madds(3, 3, c, size, size);
  add_bn(c);
  const bool se_enc = cfg.se_mode != SeMode::None && cfg.se_scope != SeScope::Decoder;
  const bool se_dec = cfg.se_mode != SeMode::None && cfg.se_scope != SeScope::Encoder;
  const auto k = static_cast<std::int64_t>(cfg.stage_channels.size());
  for (std::int64_t i = 0; i < k; ++i) {
    for (int j = 0; j < cfg.blocks_per_stage; ++j) {
      const std::int64_t stride = (i > 0 && j == 0) ? 2 : 1;
      size /= stride;
      add_block(c, cfg.stage_channels[static_cast<std::size_t>(i)], stride, size, se_enc);
      c = cfg.stage_channels[static_cast<std::size_t>(i)];
    }
  }
  std::int64_t disc_in = c;
  for (std::int64_t j = 0; j + 2 < k; ++j) {
    size *= 2;
    const std::int64_t co = cfg.stage_channels[static_cast<std::size_t>(k - 2 - j)];
    add_block(c, co, 1, size, se_dec);
    c = co;
  }
  for (int t = 0; t < tasks; ++t) {
    const std::int64_t out = cfg.tasks[static_cast<std::size_t>(t)].out_channels;
    rep.per_task_params[t] = per_task_common + conv_params(1, c, out, true);
    rep.madds_per_forward[t] = madds_common + conv_madds(1, c, out, size, size);
  }
  rep.total_params = rep.shared_params;
  for (const auto& [t, n] : rep.per_task_params) rep.total_params += n;
  if (cfg.adv_enabled) {
    rep.discriminator_params = conv_params(1, disc_in, disc_hidden, true) + conv_params(1, disc_hidden, tasks, true);
  }
  return rep;
}

ResourceReport count_store(const ParameterStore& store) {
  ResourceReport rep;
  for (const auto& [id, e] : store.entries()) {
    if (!e.trainable()) continue;
    const auto n = static_cast<std::int64_t>(e.value.size());
    switch (e.owner.kind) {
      case Owner::Kind::Shared:
        rep.shared_params += n;
        break;
      case Owner::Kind::Task:
        rep.per_task_params[e.owner.task] += n;
        break;
      case Owner::Kind::Discriminator:
        rep.discriminator_params += n;
        break;
    }
  }
  rep.total_params = rep.shared_params;
  for (const auto& [t, n] : rep.per_task_params) rep.total_params += n;
  return rep;
}

std::map<int, std::int64_t> count_graph_madds(const Network& net, const ParameterStore& store) {
  std::map<int, std::int64_t> out;
  const std::int64_t s = net.config().input_size;
  for (int t = 0; t < net.num_tasks(); ++t) {
    ad::Graph g;
    ParamLeaves params(g, store);
    const auto images = g.zeros({1, 3, s, s});
    net.forward(params, images, t, Mode::Eval);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& node = g.node(static_cast<ad::NodeId>(i));
      if (node.op != ad::OpKind::Conv2d) continue;
      const auto& w = g.node(node.inputs[1]).shape;
      total += w[0] * w[1] * w[2] * w[3] * node.shape[2] * node.shape[3];
    }
    out[t] = total;
  }
  return out;
}

}  // namespace taskmod
