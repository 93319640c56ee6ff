// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//   "DFCK" | u32 LE version (1) | u64 LE header length | JSON header | payload
// The header maps each tensor name to {dtype:"f32", shape, offset, nbytes}
// (offsets relative to the payload start) and carries "config", "step" and
// "rng". Two FNV-1a digests guard the header and the payload.

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "gfit/tensor.hpp"
#include "json.hpp"

namespace gfit {

struct Checkpoint {
  nlohmann::json config;
  std::int64_t step = 0;
  std::string rng;
  std::map<std::string, Tensor> tensors;  // always f32 once loaded
};

std::string serialize_checkpoint(const Checkpoint& ck);
/// Validates everything before returning; throws FormatError (with the byte
/// offset of the first problem) on bad magic, version, lengths, digests or
/// tensor records.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gfit
