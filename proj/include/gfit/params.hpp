// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gfit/tensor.hpp"

namespace gfit {

enum class ParamGroup { FrozenBase, Lora, Adapter };

const char* param_group_name(ParamGroup g);

struct ParamEntry {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

/// Flat registry of every model parameter. Entries alias the tensors held by
/// the layers, so there is exactly one copy of each weight.
class ParamStore {
 public:
  void add(std::string name, ParamGroup group, Tensor tensor);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  const ParamEntry* find(const std::string& name) const;

  std::size_t count(ParamGroup group) const;
  std::size_t total() const;
  /// Hash over the values of every parameter in `group`.
  std::uint64_t checksum(ParamGroup group) const;
  std::uint64_t checksum() const;

  void zero_grad();

 private:
  std::vector<ParamEntry> entries_;
};

struct ParamPartition {
  std::vector<const ParamEntry*> frozen_base;
  std::vector<const ParamEntry*> lora;
  std::vector<const ParamEntry*> adapter;
  std::size_t base_count = 0;
  std::size_t lora_count = 0;
  std::size_t adapter_count = 0;

  std::size_t total() const { return base_count + lora_count + adapter_count; }
};

/// Splits the registry into frozen base / LoRA / adapter groups with element
/// counts. Throws IntegrityError if one tensor is registered twice.
ParamPartition enumerate_trainable(const ParamStore& store);

}  // namespace gfit
