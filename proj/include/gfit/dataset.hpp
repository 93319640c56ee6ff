// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Paired garment/person corpus generation and on-disk layout:
//   index.json  [{id, ref_path, target_path, mask_path, spec, captions}]
//   ref_NNNNN.ppm, target_NNNNN.ppm, mask_NNNNN.pgm

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gfit/garment.hpp"
#include "gfit/image.hpp"
#include "json.hpp"

namespace gfit {

struct GarmentSample {
  std::size_t id = 0;
  SampleSpec spec;
  Image reference;
  Image target;
  Mask mask;
  std::array<std::string, 3> captions;  // indexed by CaptionTier

  const std::string& caption_for(CaptionTier t) const { return captions[static_cast<std::size_t>(t)]; }
};

struct DatasetOptions {
  /// Share of samples drawn as free-form "textured" patches instead of the
  /// four garment patterns.
  double free_patch_fraction = 0.0;
};

/// Deterministic in (n, seed, options). Pattern of sample i is i mod 4 unless
/// it is drawn as a free patch.
std::vector<GarmentSample> gen_dataset(std::size_t n, std::uint64_t seed, const DatasetOptions& options = {});
GarmentSample make_sample(std::size_t id, const SampleSpec& spec);

nlohmann::json to_json(const SampleSpec& spec);
SampleSpec sample_spec_from_json(const nlohmann::json& j);

/// Builds the corpus in a sibling temp directory, then renames it over `dir`.
void write_corpus(const std::string& dir, const std::vector<GarmentSample>& samples);
std::vector<GarmentSample> load_corpus(const std::string& dir);

}  // namespace gfit
