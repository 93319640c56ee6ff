// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end generation: prompt rewrite, text encoding, reference encoding,
// guided DDIM sampling and decoding.

#pragma once

#include <cstdint>
#include <string>

#include "gfit/diffusion.hpp"
#include "gfit/enricher.hpp"
#include "gfit/image.hpp"
#include "gfit/text.hpp"
#include "gfit/unet.hpp"

namespace gfit {

struct GenerateOptions {
  GuidanceConfig guidance;  // 7.5 / 50 unless set
  EnrichMode enrich = EnrichMode::Template;
  std::string endpoint;
  /// When false the reference is ignored in both guidance branches.
  bool use_reference = true;
};

struct Generation {
  Image image;
  EnrichedPrompt prompt;
};

/// Initial latent for a seed, drawn from the "sample" substream.
Tensor initial_noise(const ModelConfig& cfg, std::uint64_t seed);

/// The conditional branch sees the text and (optionally) the reference
/// features; the unconditional branch sees neither.
Generation generate(const ToyUNet& model, const std::string& text_raw, const Image& reference,
                    const GenerateOptions& options, std::uint64_t seed);

}  // namespace gfit
