// SPDX-License-Identifier: Apache-2.0

#include "taskmod/network/parameter_store.hpp"

#include "taskmod/common/error.hpp"

namespace taskmod {

std::string to_string(const Owner& o) {
  switch (o.kind) {
    case Owner::Kind::Shared:
      return "shared";
    case Owner::Kind::Task:
      return "task:" + std::to_string(o.task);
    case Owner::Kind::Discriminator:
      return "discriminator";
  }
  return "?";
}

Owner owner_from_string(const std::string& s) {
  if (s == "shared") return Owner::shared();
  if (s == "discriminator") return Owner::discriminator();
  if (s.rfind("task:", 0) == 0) {
    try {
      return Owner::of_task(std::stoi(s.substr(5)));
    } catch (const std::exception&) {
    }
  }
  throw FormatError("unknown parameter owner '" + s + "'");
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Weight:
      return "weight";
    case Role::Bias:
      return "bias";
    case Role::BnGain:
      return "bn_gain";
    case Role::BnBias:
      return "bn_bias";
    case Role::BnRunning:
      return "bn_running";
  }
  return "?";
}

Role role_from_string(const std::string& s) {
  for (Role r : {Role::Weight, Role::Bias, Role::BnGain, Role::BnBias, Role::BnRunning}) {
    if (to_string(r) == s) return r;
  }
  throw FormatError("unknown parameter role '" + s + "'");
}

void ParameterStore::add(const std::string& id, ad::Tensor value, Owner owner, Role role) {
  if (entries_.count(id)) throw ConfigError("duplicate parameter id '" + id + "'");
  entries_.emplace(id, ParamEntry{std::move(value), owner, role});
}

const ParamEntry& ParameterStore::at(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ConfigError("unknown parameter id '" + id + "'");
  return it->second;
}

ParamEntry& ParameterStore::at(const std::string& id) {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ConfigError("unknown parameter id '" + id + "'");
  return it->second;
}

std::vector<std::string> ParameterStore::ids() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(id);
  return out;
}

std::vector<std::string> ParameterStore::trainable_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, e] : entries_) {
    if (e.trainable()) out.push_back(id);
  }
  return out;
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (auto a = entries_.begin(), b = other.entries_.begin(); a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || !ad::bitwise_equal(a->second.value, b->second.value) || !(a->second.owner == b->second.owner) ||
        a->second.role != b->second.role) {
      return false;
    }
  }
  return true;
}

ad::Var ParamLeaves::get(const std::string& id) {
  auto it = leaves_.find(id);
  if (it != leaves_.end()) return it->second;
  const ad::Var v = graph_->constant(store_->at(id).value, id);
  leaves_.emplace(id, v);
  return v;
}

}  // namespace taskmod
