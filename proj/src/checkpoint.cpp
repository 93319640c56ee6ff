// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "gfit/error.hpp"
#include "gfit/image.hpp"
#include "gfit/rng.hpp"

namespace gfit {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPrefix = 16;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t pos) {
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  return v;
}

std::uint64_t header_digest(nlohmann::json header) {
  header.erase("header_fnv");
  return fnv1a64(header.dump());
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json header = nlohmann::json::object();
  std::string payload;
  for (const auto& [name, t] : ck.tensors) {
    if (name == "config" || name == "step" || name == "rng" || name == "header_fnv" || name == "payload_fnv") {
      throw ConfigError("checkpoint: reserved tensor name '" + name + "'");
    }
    const Tensor f = t.dtype() == DType::F32 ? t : t.to(DType::F32);
    const auto data = f.data<float>();
    const std::size_t nbytes = data.size() * sizeof(float);
    header[name] = {{"dtype", "f32"}, {"shape", f.shape()}, {"offset", payload.size()}, {"nbytes", nbytes}};
    payload.append(reinterpret_cast<const char*>(data.data()), nbytes);
  }
  header["config"] = ck.config;
  header["step"] = ck.step;
  header["rng"] = ck.rng;
  header["payload_fnv"] = hex64(fnv1a64(payload.data(), payload.size()));
  header["header_fnv"] = hex64(header_digest(header));
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kPrefix) throw FormatError("checkpoint: file shorter than its fixed prefix", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic", 0);
  if (get<std::uint32_t>(bytes, 4) != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(get<std::uint32_t>(bytes, 4)), 4);
  }
  const std::uint64_t hlen = get<std::uint64_t>(bytes, 8);
  if (hlen > bytes.size() - kPrefix) throw FormatError("checkpoint: header length exceeds file size", 8);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPrefix, bytes.begin() + static_cast<std::ptrdiff_t>(kPrefix + hlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what(), kPrefix + e.byte);
  }
  if (!header.is_object() || !header.contains("header_fnv") || !header["header_fnv"].is_string()) {
    throw FormatError("checkpoint: header lacks its digest", kPrefix);
  }
  if (header["header_fnv"].get<std::string>() != hex64(header_digest(header))) {
    throw FormatError("checkpoint: header digest mismatch", kPrefix);
  }
  const std::size_t payload_start = kPrefix + hlen;
  const std::size_t payload_size = bytes.size() - payload_start;
  if (!header.contains("payload_fnv") ||
      header["payload_fnv"] != hex64(fnv1a64(bytes.data() + payload_start, payload_size))) {
    throw FormatError("checkpoint: payload digest mismatch", payload_start);
  }

  Checkpoint ck;
  try {
    ck.config = header.at("config");
    ck.step = header.at("step").get<std::int64_t>();
    ck.rng = header.at("rng").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad metadata: ") + e.what(), kPrefix);
  }
  for (const auto& [name, rec] : header.items()) {
    if (name == "config" || name == "step" || name == "rng" || name == "header_fnv" || name == "payload_fnv") continue;
    Shape shape;
    std::uint64_t offset = 0, nbytes = 0;
    try {
      if (rec.at("dtype") != "f32") throw FormatError("checkpoint: tensor '" + name + "' is not f32", kPrefix);
      shape = rec.at("shape").get<Shape>();
      offset = rec.at("offset").get<std::uint64_t>();
      nbytes = rec.at("nbytes").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("checkpoint: bad record for '" + name + "': " + e.what(), kPrefix);
    }
    if (nbytes != shape_numel(shape) * sizeof(float)) {
      throw FormatError("checkpoint: tensor '" + name + "' size disagrees with its shape", kPrefix);
    }
    if (offset > payload_size || nbytes > payload_size - offset) {
      throw FormatError("checkpoint: tensor '" + name + "' runs past the end of the file", payload_start + offset);
    }
    Tensor t(shape, DType::F32);
    std::memcpy(t.mutable_data<float>().data(), bytes.data() + payload_start + offset, nbytes);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace gfit
