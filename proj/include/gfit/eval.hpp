// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Texture and text consistency scores and the seeded benchmark protocol.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gfit/dataset.hpp"
#include "gfit/image.hpp"
#include "gfit/pipeline.hpp"
#include "gfit/unet.hpp"
#include "json.hpp"

namespace gfit {

/// 27-bin RGB histogram (3 bins per channel) and 8-bin magnitude-weighted
/// unsigned gradient-orientation histogram, each L2-normalized, concatenated.
std::vector<double> texture_features(const Image& img, const Mask& region);

/// Cosine similarity of two feature vectors clipped to [0, 1]; 0 when either
/// vector is zero.
double feature_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Similarity of the masked region of `generated` to the garment region of
/// `reference`. Throws MetricError on an empty mask.
double texture_sim(const Image& generated, const Mask& mask, const Image& reference);

/// Fraction of the caption's named attributes (fg colour, pattern, scene
/// background) the image shows; nullopt when the caption names none.
std::optional<double> text_score(const Image& generated, const Mask& mask, const std::string& caption);

enum class PromptMode { Fixed, Simple, Rich, Enriched };
const char* prompt_mode_name(PromptMode m);
std::optional<PromptMode> parse_prompt_mode(std::string_view s);

/// Prompt a benchmark row uses before any rewriting. Enriched mode starts
/// from the simple caption plus the scene background and runs the template
/// rewriter.
std::string benchmark_prompt(const GarmentSample& sample, PromptMode mode);

struct BenchmarkOptions {
  std::size_t seeds = 5;
  std::uint64_t seed_base = 0;
  PromptMode prompt = PromptMode::Simple;
  GuidanceConfig guidance;
  bool include_baseline = true;
};

struct MetricRow {
  std::size_t sample_id = 0;
  std::uint64_t seed = 0;
  std::string condition;  // "conditioned" or "baseline"
  std::string prompt;
  double texture_sim = 0.0;
  std::optional<double> text_score;
};

struct Aggregate {
  std::size_t count = 0;
  double texture_mean = 0.0;
  double texture_std = 0.0;
  std::size_t text_count = 0;
  double text_mean = 0.0;
  double text_std = 0.0;
  bool operator==(const Aggregate&) const = default;
};

struct MetricReport {
  nlohmann::json meta;
  std::vector<MetricRow> rows;
  std::map<std::string, Aggregate> aggregates;

  /// Conditioned minus baseline mean texture_sim.
  double texture_gap() const;
  nlohmann::json to_json() const;
  std::string to_text() const;
  static MetricReport from_json(const nlohmann::json& j);
};

/// Per-condition mean and population std; text stats skip n/a rows.
std::map<std::string, Aggregate> aggregate_rows(const std::vector<MetricRow>& rows);

/// Seed of generation k for a sample; shared by the conditioned and
/// baseline rows.
std::uint64_t generation_seed(std::uint64_t seed_base, std::size_t sample_id, std::size_t k);

MetricReport run_benchmark(const ToyUNet& model, const std::vector<GarmentSample>& data,
                           const BenchmarkOptions& options, const std::string& checkpoint_hash = {});

}  // namespace gfit
