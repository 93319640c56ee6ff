// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inference-time prompt rewriting. The template path reads the garment off
// the reference image; the external path asks a rewrite service and falls
// back to the template path on any failure.

#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "gfit/garment.hpp"
#include "gfit/image.hpp"

namespace gfit {

enum class PromptSource { Template, External, Passthrough };
const char* source_name(PromptSource s);

struct EnrichedPrompt {
  std::string original;
  std::string text;
  PromptSource source = PromptSource::Template;
  /// Set when the pattern was not recognized or the external call failed.
  bool warning = false;
  std::string diagnostic;
};

/// What a pixel region looks like in palette terms.
struct RegionAnalysis {
  Color fg = Color::Black;
  Color bg = Color::White;
  Pattern pattern = Pattern::Textured;
  int scale = 2;
  /// Best normalized cross-correlation against the pattern generators.
  double correlation = 0.0;
  bool recognized = false;
};

/// Palette quantization by nearest RGB distance.
Color nearest_color(Rgb c);
/// Dominant two palette colours, then the best-correlated generator at both
/// scales. Negative correlation swaps fg and bg. Correlation below 0.6 gives
/// Pattern::Textured with recognized = false.
RegionAnalysis analyze_region(const Image& img, const Rect& region);
/// Bounding box of pixels that differ from the reference ground colour;
/// throws ContractError when there are none.
Rect find_reference_region(const Image& reference);
/// Mean colour outside the person silhouette, snapped to the nearest scene
/// background.
Background classify_background(const Image& person_image);

/// Template rewrite. Text that already parses as a rich caption passes
/// through unchanged. A background named in `user_text` is kept; without
/// one the background clause is omitted.
EnrichedPrompt enrich(std::string_view user_text, const Image& reference);

/// POST {endpoint}/v1/rewrite with {"prompt", "image_base64"} (the PPM bytes)
/// and read {"rewritten_prompt"}. Never throws; any failure falls back to
/// enrich() with warning set.
EnrichedPrompt enrich_external(std::string_view user_text, const Image& reference, const std::string& endpoint,
                               double timeout_seconds = 10.0);

/// Environment variable holding the default rewrite endpoint.
constexpr const char* kRewriteEndpointEnv = "GFIT_REWRITE_URL";

enum class EnrichMode { Off, Template, External };
std::optional<EnrichMode> parse_enrich_mode(std::string_view s);

/// Dispatches on `mode`; External uses `endpoint` or, when empty, the
/// environment variable (template fallback if neither is set).
EnrichedPrompt apply_enrichment(EnrichMode mode, std::string_view user_text, const Image& reference,
                                const std::string& endpoint = {});

}  // namespace gfit
