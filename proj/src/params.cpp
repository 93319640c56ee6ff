// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/params.hpp"

#include <unordered_map>

#include "gfit/error.hpp"
#include "gfit/rng.hpp"

namespace gfit {

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::FrozenBase:
      return "frozen_base";
    case ParamGroup::Lora:
      return "lora";
    case ParamGroup::Adapter:
      return "adapter";
  }
  return "?";
}

void ParamStore::add(std::string name, ParamGroup group, Tensor tensor) {
  if (!tensor.defined()) throw IntegrityError("param '" + name + "' is undefined");
  if (find(name) != nullptr) throw IntegrityError("param name '" + name + "' registered twice");
  entries_.push_back(ParamEntry{std::move(name), group, std::move(tensor)});
}

const ParamEntry* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t ParamStore::count(ParamGroup group) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.group == group) n += e.tensor.numel();
  }
  return n;
}

std::size_t ParamStore::total() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

std::uint64_t ParamStore::checksum(ParamGroup group) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries_) {
    if (e.group == group) h = mix64(h ^ gfit::checksum(e.tensor));
  }
  return h;
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries_) h = mix64(h ^ gfit::checksum(e.tensor));
  return h;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ParamPartition enumerate_trainable(const ParamStore& store) {
  ParamPartition p;
  std::unordered_map<std::uint64_t, const ParamEntry*> owner;
  for (const auto& e : store.entries()) {
    auto [it, inserted] = owner.emplace(e.tensor.id(), &e);
    if (!inserted) {
      throw IntegrityError("tensor claimed by '" + it->second->name + "' (" + param_group_name(it->second->group) +
                           ") and '" + e.name + "' (" + param_group_name(e.group) + ")");
    }
    switch (e.group) {
      case ParamGroup::FrozenBase:
        p.frozen_base.push_back(&e);
        p.base_count += e.tensor.numel();
        break;
      case ParamGroup::Lora:
        p.lora.push_back(&e);
        p.lora_count += e.tensor.numel();
        break;
      case ParamGroup::Adapter:
        p.adapter.push_back(&e);
        p.adapter_count += e.tensor.numel();
        break;
    }
  }
  return p;
}

}  // namespace gfit
