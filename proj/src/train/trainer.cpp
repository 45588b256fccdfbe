// SPDX-License-Identifier: Apache-2.0

#include "taskmod/train/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "taskmod/autodiff/ops.hpp"
#include "taskmod/common/error.hpp"
#include "taskmod/common/rng.hpp"

namespace taskmod {

using ad::Tensor;
using ad::Var;

void TrainConfig::validate() const {
  net.validate();
  adv.validate();
  optim.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(depth_gamma >= 0.0)) throw ConfigError("depth_gamma must be >= 0");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"network", c.net},       {"adversarial", c.adv},         {"optimizer", c.optim},
                     {"seed", c.seed},         {"epochs", c.epochs},           {"depth_gamma", c.depth_gamma},
                     {"bn_momentum", c.bn_momentum}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    if (j.contains("network")) from_json(j.at("network"), c.net);
    if (j.contains("adversarial")) from_json(j.at("adversarial"), c.adv);
    if (j.contains("optimizer")) from_json(j.at("optimizer"), c.optim);
    c.seed = j.value("seed", c.seed);
    c.epochs = j.value("epochs", c.epochs);
    c.depth_gamma = j.value("depth_gamma", c.depth_gamma);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
}

std::string config_digest(const TrainConfig& config) {
  const nlohmann::json j = config;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

Trainer::Trainer(TrainConfig config, std::int64_t max_iter)
    : config_(std::move(config)), net_((config_.validate(), config_.net)) {
  store_ = init_parameters(net_, config_.seed);
  if (config_.net.adv_enabled) {
    add_discriminator(store_, net_.interface_channels(), config_.adv.disc_hidden, net_.num_tasks(), config_.seed);
    disc_ids_ = discriminator_ids(store_);
  }
  opt_ = make_opt_state(store_, config_.optim, std::max<std::int64_t>(1, max_iter));
}

std::set<std::string> Trainer::step_params(int task) const {
  auto used = net_.params_used(task);
  used.insert(disc_ids_.begin(), disc_ids_.end());
  return used;
}

StepStats Trainer::task_step(const Batch& batch, int task) {
  const auto& spec = net_.config().tasks.at(static_cast<std::size_t>(task));
  const bool adv = config_.net.adv_enabled;
  const double w_d = adv ? config_.adv.w_d : 0.0;

  ad::Graph g;
  ParamLeaves params(g, store_);
  const auto fr = net_.forward(params, g.constant(batch.images), task, Mode::Train);
  const Var lt = task_loss(spec, fr.output, batch.targets, config_.depth_gamma);
  Var total = ad::scale(lt, (1.0 - w_d) * spec.loss_weight);

  std::vector<Var> extra{lt};
  Var disc_loss, norms;
  if (adv) {
    const Var ghat = normalize_gradient(extract_gradient(total, fr.interface));
    const auto terms = adversarial_step_terms(params, ghat, task, config_.adv.lambda_at(opt_.iter), w_d);
    total = total + terms.disc_update_loss + terms.network_update_loss;
    disc_loss = terms.disc_loss;
    norms = ad::l2_norm(ghat, {1, 2, 3});
    extra.push_back(disc_loss);
    extra.push_back(norms);
  }

  const auto used = step_params(task);
  std::vector<Var> leaves;
  for (const auto& id : used) leaves.push_back(params.get(id));
  std::vector<Var> targets = ad::backward(total, leaves);
  targets.insert(targets.end(), extra.begin(), extra.end());
  for (const auto& tap : fr.bn_taps) {
    targets.push_back(tap.mean);
    targets.push_back(tap.var);
  }
  const auto values = g.evaluate(targets);

  std::map<std::string, Tensor> grads;
  std::size_t k = 0;
  for (const auto& id : used) {
    const Tensor& v = values[k++];
    for (double x : v.data) {
      if (!std::isfinite(x)) throw DivergenceError("non-finite gradient for '" + id + "' on task " + spec.name);
    }
    grads.emplace(id, v);
  }
  StepStats st;
  st.task = task;
  st.task_loss = values[k++].data.at(0);
  if (!std::isfinite(st.task_loss)) throw DivergenceError("non-finite loss on task " + spec.name);
  if (adv) {
    st.disc_loss = values[k++].data.at(0);
    if (!std::isfinite(*st.disc_loss)) throw DivergenceError("non-finite discriminator loss on task " + spec.name);
    st.disc_input_norms = values[k++].data;
  }
  std::vector<Tensor> means, vars;
  for (std::size_t i = 0; i < fr.bn_taps.size(); ++i) {
    means.push_back(values[k++]);
    vars.push_back(values[k++]);
  }
  update_running_stats(store_, fr.bn_taps, means, vars, config_.bn_momentum);
  sgd_step(store_, grads, used, opt_, net_.num_tasks());
  return st;
}

IterationStats Trainer::iteration(const Batch& batch) {
  IterationStats it;
  std::map<int, double> losses, weights;
  double disc = 0.0;
  for (int t = 0; t < net_.num_tasks(); ++t) {
    it.steps.push_back(task_step(batch, t));
    losses[t] = it.steps.back().task_loss;
    weights[t] = net_.config().tasks[static_cast<std::size_t>(t)].loss_weight;
    if (it.steps.back().disc_loss) disc += *it.steps.back().disc_loss;
  }
  const bool adv = config_.net.adv_enabled;
  it.report = make_loss_report(losses, weights, adv ? disc / net_.num_tasks() : 0.0, adv ? config_.adv.w_d : 0.0);
  return it;
}

std::vector<std::vector<std::size_t>> Trainer::epoch_batches(std::size_t n, int epoch_index) const {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(config_.seed, "shuffle" + std::to_string(epoch_index)));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  }
  std::vector<std::vector<std::size_t>> out;
  const auto bs = static_cast<std::size_t>(config_.optim.batch_size);
  for (std::size_t i = 0; i < n; i += bs) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + bs)));
  }
  return out;
}

EpochStats Trainer::epoch(const std::vector<Sample>& train, int epoch_index) {
  if (train.empty()) throw ConfigError("training set is empty");
  EpochStats es;
  es.epoch = epoch_index;
  for (const auto& idx : epoch_batches(train.size(), epoch_index)) {
    const auto it = iteration(make_batch(train, idx));
    for (const auto& [t, l] : it.report.per_task) es.mean_task_loss[t] += l;
    es.mean_disc_loss += it.report.discriminator;
    es.mean_composite += it.report.composite;
    ++es.iterations;
  }
  const double n = static_cast<double>(es.iterations);
  for (auto& [t, l] : es.mean_task_loss) l /= n;
  es.mean_disc_loss /= n;
  es.mean_composite /= n;
  return es;
}

std::vector<EpochStats> Trainer::fit(const std::vector<Sample>& train,
                                     const std::function<void(const EpochStats&)>& on_epoch) {
  if (train.empty()) throw ConfigError("training set is empty");
  const auto bs = static_cast<std::size_t>(config_.optim.batch_size);
  const auto batches = static_cast<std::int64_t>((train.size() + bs - 1) / bs);
  opt_.max_iter = static_cast<std::int64_t>(config_.epochs) * batches * net_.num_tasks();
  std::vector<EpochStats> out;
  for (int e = 0; e < config_.epochs; ++e) {
    out.push_back(epoch(train, e));
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

}  // namespace taskmod
