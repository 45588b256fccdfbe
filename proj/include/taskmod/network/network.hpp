// SPDX-License-Identifier: Apache-2.0
//
// Task-routable residual encoder/decoder. One forward pass runs one task:
// shared weights plus whatever that task owns (SE gates, residual adapters,
// batch-norm, head) under the configured modes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "taskmod/autodiff/graph.hpp"
#include "taskmod/network/config.hpp"
#include "taskmod/network/parameter_store.hpp"

namespace taskmod {

enum class Mode { Train, Eval };

// Residual-block index -> binary channel mask replacing the soft SE gate.
using HardMasks = std::map<int, std::vector<double>>;

struct BlockInfo {
  int index = 0;       // position in Network::blocks()
  std::string prefix;  // "enc.s1.b0", "dec.u0"
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  bool upsample = false;  // nearest x2 applied to the block input
  bool decoder = false;
  bool se = false;
  int in_size = 0;   // spatial side of the block input (after upsampling)
  int out_size = 0;  // spatial side of the block output
  bool projection() const { return stride != 1 || in_channels != out_channels; }
};

enum class Init { He, Zero, One };

struct ParamSpec {
  std::string id;
  ad::Shape shape;
  Owner owner;
  Role role = Role::Weight;
  Init init = Init::Zero;
  std::int64_t fan_in = 0;
  // RNG stream tag; per-task copies of one site share it, so tasks start
  // from the same values.
  std::string seed_tag;
};

// Per-channel batch statistics of one train-mode batch-norm, used to update
// the running estimates after the step.
struct BnTap {
  std::string prefix;  // ids are prefix + ".rmean" / ".rvar"
  ad::Var mean;        // [1,C,1,1]
  ad::Var var;         // biased, [1,C,1,1]
  std::int64_t count = 0;
};

struct SeTap {
  int block = 0;
  ad::Var gate;  // [N,C,1,1]
};

struct ForwardResult {
  ad::Var output;     // [N,out_channels,S,S]
  ad::Var interface;  // final encoder feature map
  std::vector<BnTap> bn_taps;
  std::vector<SeTap> se_gates;
};

struct SeParamIds {
  std::string w1, b1, w2, b2;
};

struct SeOutput {
  ad::Var out;
  ad::Var gate;  // [N,C,1,1]; the mask itself on the hard path
};

// Soft path: gate = sigmoid(W2 relu(W1 avgpool(F) + b1) + b2), out = gate*F.
// With a hard mask the SE parameters are not touched and out[:,c] = m[c]*F[:,c].
SeOutput se_modulate(ParamLeaves& params, ad::Var features, const SeParamIds& ids,
                     const std::vector<double>* hard_mask = nullptr);

class Network {
 public:
  // Validates the config; throws ConfigError.
  explicit Network(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  int num_tasks() const { return config_.num_tasks(); }
  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  int interface_channels() const { return interface_channels_; }
  int interface_size() const { return interface_size_; }
  int head_channels() const { return head_channels_; }
  int head_size() const { return head_size_; }

  // Every parameter of the network for all tasks, in construction order.
  std::vector<ParamSpec> param_specs() const;
  // Trainable parameters on task t's soft forward path (hard masks, a
  // test-only override, bypass the SE parameters without changing this set).
  std::set<std::string> params_used(int task) const;

  // images: [N,3,S,S] node. Throws ShapeError on a size mismatch and
  // ConfigError on an unknown task id.
  ForwardResult forward(ParamLeaves& params, ad::Var images, int task, Mode mode,
                        const HardMasks* masks = nullptr) const;

  // One residual block: relu(skip + SE(L(x)) + RA_t(x)).
  ad::Var residual_block(ParamLeaves& params, ad::Var x, const BlockInfo& block, int task, Mode mode,
                         const HardMasks* masks, ForwardResult* taps) const;

  SeParamIds se_ids(const BlockInfo& block, int task) const;

 private:
  void check_task(int task) const;
  std::string bn_prefix(const std::string& site, int task) const;
  ad::Var batch_norm(ParamLeaves& params, ad::Var x, const std::string& site, int task, Mode mode,
                     ForwardResult* taps) const;
  template <class F>
  void visit_params(int task_filter, F&& f) const;

  NetworkConfig config_;
  std::vector<BlockInfo> blocks_;
  std::size_t num_encoder_blocks_ = 0;
  int interface_channels_ = 0;
  int interface_size_ = 0;
  int head_channels_ = 0;
  int head_size_ = 0;
};

ParameterStore init_parameters(const Network& net, std::uint64_t seed);
std::pair<Network, ParameterStore> build_network(const NetworkConfig& config, std::uint64_t seed);

// rm <- (1-m) rm + m mean, rv <- (1-m) rv + m var * n/(n-1), from evaluated taps.
void update_running_stats(ParameterStore& store, const std::vector<BnTap>& taps,
                          const std::vector<ad::Tensor>& means, const std::vector<ad::Tensor>& vars,
                          double momentum = 0.1);

// Per block and task, the SE gate averaged over `images` ([N,3,S,S], eval
// mode). Rows: block_index, task_id, channel, mean_gate.
struct GateRow {
  int block = 0;
  int task = 0;
  int channel = 0;
  double mean_gate = 0.0;
};
std::vector<GateRow> se_gate_table(const Network& net, const ParameterStore& store, const ad::Tensor& images);
// Throws ConfigError unless se_mode is per_task; IoError when the file
// cannot be written.
void export_se_gates(const Network& net, const ParameterStore& store, const ad::Tensor& images,
                     const std::filesystem::path& out_path);

}  // namespace taskmod
