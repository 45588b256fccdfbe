// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "taskmod/autodiff/graph.hpp"

namespace taskmod {

struct Owner {
  enum class Kind { Shared, Task, Discriminator };
  Kind kind = Kind::Shared;
  int task = -1;

  static Owner shared() { return {Kind::Shared, -1}; }
  static Owner of_task(int t) { return {Kind::Task, t}; }
  static Owner discriminator() { return {Kind::Discriminator, -1}; }

  bool is_task(int t) const { return kind == Kind::Task && task == t; }
  bool operator==(const Owner&) const = default;
};

enum class Role { Weight, Bias, BnGain, BnBias, BnRunning };

std::string to_string(const Owner& o);  // "shared", "task:2", "discriminator"
Owner owner_from_string(const std::string& s);
std::string_view to_string(Role r);
Role role_from_string(const std::string& s);

struct ParamEntry {
  ad::Tensor value;
  Owner owner;
  Role role = Role::Weight;

  bool trainable() const { return role != Role::BnRunning; }
};

// All network and discriminator weights, keyed by stable identifiers.
// Iteration order is the lexicographic id order.
class ParameterStore {
 public:
  // Throws ConfigError when the id already exists.
  void add(const std::string& id, ad::Tensor value, Owner owner, Role role);

  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  // Throws ConfigError naming the id when it does not exist.
  const ParamEntry& at(const std::string& id) const;
  ParamEntry& at(const std::string& id);

  const std::map<std::string, ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> ids() const;
  std::vector<std::string> trainable_ids() const;
  // Trainable ids whose owner satisfies `pred`.
  template <class Pred>
  std::set<std::string> select(Pred pred) const {
    std::set<std::string> out;
    for (const auto& [id, e] : entries_) {
      if (e.trainable() && pred(e.owner)) out.insert(id);
    }
    return out;
  }

  bool operator==(const ParameterStore& other) const;

 private:
  std::map<std::string, ParamEntry> entries_;
};

// Graph leaves for store parameters, created on first use. Each leaf holds a
// copy of the parameter value at the time of the call.
class ParamLeaves {
 public:
  ParamLeaves(ad::Graph& graph, const ParameterStore& store) : graph_(&graph), store_(&store) {}

  ad::Var get(const std::string& id);
  ad::Graph& graph() { return *graph_; }
  const ParameterStore& store() const { return *store_; }
  // id -> leaf for every parameter requested so far.
  const std::map<std::string, ad::Var>& leaves() const { return leaves_; }

 private:
  ad::Graph* graph_;
  const ParameterStore* store_;
  std::map<std::string, ad::Var> leaves_;
};

}  // namespace taskmod
