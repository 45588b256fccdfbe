// SPDX-License-Identifier: Apache-2.0
//
// Task-adversarial training on gradients: the gradient a task sends into the
// interface feature map is exposed as a graph node (double backprop),
// normalized, and classified by a small fully-convolutional discriminator.
// The discriminator's loss is reversed into the network.

#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "taskmod/autodiff/graph.hpp"
#include "taskmod/network/parameter_store.hpp"

namespace taskmod {

struct AdvConfig {
  double lambda = 1.0;
  double w_d = 0.1;
  int disc_hidden = 64;
  // When positive, lambda ramps linearly from 0 over this many task-steps.
  std::int64_t lambda_ramp_steps = 0;

  double lambda_at(std::int64_t iter) const;
  void validate() const;  // throws ConfigError
};

void to_json(nlohmann::json& j, const AdvConfig& c);
void from_json(const nlohmann::json& j, AdvConfig& c);

// Adds disc.conv1.{w,b} ([hidden,C,1,1], [hidden]) and disc.conv2.{w,b}
// ([T,hidden,1,1], [T]), owned by the discriminator.
void add_discriminator(ParameterStore& store, int in_channels, int hidden, int num_tasks, std::uint64_t seed);
std::set<std::string> discriminator_ids(const ParameterStore& store);

// d(task_loss)/d(interface) as a differentiable node. Throws Error when the
// interface does not feed the loss.
ad::Var extract_gradient(ad::Var task_loss, ad::Var interface);

// g / (||g||_F + 1e-12) per sample (over all axes but the first).
ad::Var normalize_gradient(ad::Var g);

struct DiscOutput {
  ad::Var logits;  // [N,T,h,w]
  ad::Var loss;    // mean over positions of softmax CE against `task`
};

// With freeze set, the discriminator parameters enter through detach and
// receive no gradient from this output.
DiscOutput discriminate(ParamLeaves& params, ad::Var g, int task, bool freeze = false);

struct AdvTerms {
  ad::Var disc_update_loss;     // w_d L_d(detach(g), D)
  ad::Var network_update_loss;  // -lambda w_d L_d(g, detach(D))
  ad::Var disc_loss;            // L_d as seen by the discriminator update
};

AdvTerms adversarial_step_terms(ParamLeaves& params, ad::Var g_normalized, int task, double lambda, double w_d);

}  // namespace taskmod
