// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "gfit/enricher.hpp"
#include "gfit/error.hpp"
#include "gfit/rng.hpp"

namespace gfit {

std::vector<double> texture_features(const Image& img, const Mask& region) {
  if (region.width != img.width || region.height != img.height) {
    throw MetricError("texture_features: mask does not match image size");
  }
  if (region.count() == 0) throw MetricError("texture_features: empty mask");
  std::vector<double> f(27 + 8, 0.0);
  auto gray = [&](std::size_t x, std::size_t y) {
    const Rgb c = img.at(x, y);
    return (c.r + c.g + c.b) / 3.0;
  };
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      if (!region.at(x, y)) continue;
      const Rgb c = img.at(x, y);
      const std::size_t bin = (c.r * 3 / 256) * 9 + (c.g * 3 / 256) * 3 + (c.b * 3 / 256);
      f[bin] += 1.0;
      if (x == 0 || y == 0 || x + 1 >= img.width || y + 1 >= img.height) continue;
      if (!region.at(x - 1, y) || !region.at(x + 1, y) || !region.at(x, y - 1) || !region.at(x, y + 1)) continue;
      const double gx = gray(x + 1, y) - gray(x - 1, y);
      const double gy = gray(x, y + 1) - gray(x, y - 1);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double theta = std::atan2(gy, gx);
      if (theta < 0) theta += std::numbers::pi;
      const std::size_t ob = std::min<std::size_t>(7, static_cast<std::size_t>(theta / (std::numbers::pi / 8)));
      f[27 + ob] += mag;
    }
  auto normalize = [&](std::size_t lo, std::size_t hi) {
    double s = 0;
    for (std::size_t i = lo; i < hi; ++i) s += f[i] * f[i];
    if (s == 0) return;
    s = std::sqrt(s);
    for (std::size_t i = lo; i < hi; ++i) f[i] /= s;
  };
  normalize(0, 27);
  normalize(27, 35);
  return f;
}

double feature_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw MetricError("feature_similarity: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

namespace {

Mask rect_mask(std::size_t w, std::size_t h, const Rect& r) {
  Mask m(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m.set(x, y, r.contains(x, y));
  return m;
}

Rect bounding_box(const Mask& m) {
  std::size_t x0 = m.width, y0 = m.height, x1 = 0, y1 = 0;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

}  // namespace

double texture_sim(const Image& generated, const Mask& mask, const Image& reference) {
  if (mask.count() == 0) throw MetricError("texture_sim: empty mask");
  Rect ref_region;
  try {
    ref_region = find_reference_region(reference);
  } catch (const ContractError& e) {
    throw MetricError(std::string("texture_sim: ") + e.what());
  }
  const auto a = texture_features(generated, mask);
  const auto b = texture_features(reference, rect_mask(reference.width, reference.height, ref_region));
  return feature_similarity(a, b);
}

std::optional<double> text_score(const Image& generated, const Mask& mask, const std::string& caption) {
  const CaptionAttributes named = parse_attributes(caption);
  const std::size_t n = named.scored_count();
  if (n == 0) return std::nullopt;
  if (mask.count() == 0) throw MetricError("text_score: empty mask");
  const RegionAnalysis a = analyze_region(generated, bounding_box(mask));
  std::size_t hit = 0;
  if (named.fg && *named.fg == a.fg) ++hit;
  if (named.pattern && *named.pattern == a.pattern) ++hit;
  if (named.background && *named.background == classify_background(generated)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(n);
}

namespace {

constexpr const char* kPromptModes[] = {"fixed", "simple", "rich", "enriched"};

void mean_std(const std::vector<double>& v, double& mean, double& stddev) {
  mean = 0;
  stddev = 0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) stddev += (x - mean) * (x - mean);
  stddev = std::sqrt(stddev / static_cast<double>(v.size()));
}

}  // namespace

const char* prompt_mode_name(PromptMode m) { return kPromptModes[static_cast<int>(m)]; }

std::optional<PromptMode> parse_prompt_mode(std::string_view s) {
  for (int i = 0; i < 4; ++i) {
    if (s == kPromptModes[i]) return static_cast<PromptMode>(i);
  }
  return std::nullopt;
}

std::string benchmark_prompt(const GarmentSample& s, PromptMode mode) {
  switch (mode) {
    case PromptMode::Fixed: return s.caption_for(CaptionTier::Fixed);
    case PromptMode::Simple: return s.caption_for(CaptionTier::Simple);
    case PromptMode::Rich: return s.caption_for(CaptionTier::Rich);
    case PromptMode::Enriched:
      return s.caption_for(CaptionTier::Simple) + ", " + background_name(s.spec.background) + " background";
  }
  return {};
}

std::map<std::string, Aggregate> aggregate_rows(const std::vector<MetricRow>& rows) {
  std::map<std::string, std::vector<double>> tex, txt;
  for (const auto& r : rows) {
    tex[r.condition].push_back(r.texture_sim);
    if (r.text_score) txt[r.condition].push_back(*r.text_score);
  }
  std::map<std::string, Aggregate> out;
  for (const auto& [cond, v] : tex) {
    Aggregate a;
    a.count = v.size();
    mean_std(v, a.texture_mean, a.texture_std);
    const auto& t = txt[cond];
    a.text_count = t.size();
    mean_std(t, a.text_mean, a.text_std);
    out[cond] = a;
  }
  return out;
}

double MetricReport::texture_gap() const {
  auto c = aggregates.find("conditioned");
  auto b = aggregates.find("baseline");
  if (c == aggregates.end() || b == aggregates.end()) throw MetricError("report lacks conditioned or baseline rows");
  return c->second.texture_mean - b->second.texture_mean;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"sample_id", r.sample_id},
                      {"seed", r.seed},
                      {"condition", r.condition},
                      {"prompt", r.prompt},
                      {"texture_sim", r.texture_sim},
                      {"text_score", r.text_score ? nlohmann::json(*r.text_score) : nlohmann::json(nullptr)}});
  }
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& [cond, a] : aggregates) {
    agg[cond] = {{"count", a.count},
                 {"texture_sim", {{"mean", a.texture_mean}, {"std", a.texture_std}}},
                 {"text_score", {{"count", a.text_count}, {"mean", a.text_mean}, {"std", a.text_std}}}};
  }
  return {{"meta", meta}, {"rows", rows_j}, {"aggregates", agg}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.meta = j.at("meta");
  for (const auto& row : j.at("rows")) {
    MetricRow m;
    m.sample_id = row.at("sample_id").get<std::size_t>();
    m.seed = row.at("seed").get<std::uint64_t>();
    m.condition = row.at("condition").get<std::string>();
    m.prompt = row.at("prompt").get<std::string>();
    m.texture_sim = row.at("texture_sim").get<double>();
    if (!row.at("text_score").is_null()) m.text_score = row.at("text_score").get<double>();
    r.rows.push_back(std::move(m));
  }
  for (const auto& [cond, a] : j.at("aggregates").items()) {
    Aggregate g;
    g.count = a.at("count").get<std::size_t>();
    g.texture_mean = a.at("texture_sim").at("mean").get<double>();
    g.texture_std = a.at("texture_sim").at("std").get<double>();
    g.text_count = a.at("text_score").at("count").get<std::size_t>();
    g.text_mean = a.at("text_score").at("mean").get<double>();
    g.text_std = a.at("text_score").at("std").get<double>();
    r.aggregates[cond] = g;
  }
  return r;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %6s  %-17s %6s  %-17s\n", "condition", "rows", "texture_sim", "rated",
                "text_score");
  os << line;
  for (const auto& [cond, a] : aggregates) {
    char text_col[32] = "n/a";
    if (a.text_count > 0) std::snprintf(text_col, sizeof text_col, "%.4f +- %.4f", a.text_mean, a.text_std);
    std::snprintf(line, sizeof line, "%-12s %6zu  %.4f +- %.4f   %6zu  %-17s\n", cond.c_str(), a.count,
                  a.texture_mean, a.texture_std, a.text_count, text_col);
    os << line;
  }
  if (aggregates.count("conditioned") && aggregates.count("baseline")) {
    std::snprintf(line, sizeof line, "texture gap (conditioned - baseline): %+.4f\n", texture_gap());
    os << line;
  }
  os << "aesthetic score: out of scope (no desk-scale proxy)\n";
  return os.str();
}

std::uint64_t generation_seed(std::uint64_t seed_base, std::size_t sample_id, std::size_t k) {
  return mix64(mix64(seed_base ^ 0x6265'6e63'68ULL) ^ (static_cast<std::uint64_t>(sample_id) << 8 | k));
}

MetricReport run_benchmark(const ToyUNet& model, const std::vector<GarmentSample>& data,
                           const BenchmarkOptions& options, const std::string& checkpoint_hash) {
  if (data.empty()) throw ConfigError("run_benchmark: empty dataset");
  if (options.seeds == 0) throw ConfigError("run_benchmark: seeds must be >= 1");
  MetricReport report;
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t k = 0; k < options.seeds; ++k) seeds.push_back(k);
  report.meta = {{"checkpoint", checkpoint_hash},
                 {"seed_base", options.seed_base},
                 {"seeds_per_reference", options.seeds},
                 {"seed_indices", seeds},
                 {"references", data.size()},
                 {"prompt_mode", prompt_mode_name(options.prompt)},
                 {"guidance_scale", options.guidance.scale},
                 {"ddim_steps", options.guidance.num_steps}};

  for (const auto& s : data) {
    const std::string user = benchmark_prompt(s, options.prompt);
    GenerateOptions go;
    go.guidance = options.guidance;
    go.enrich = options.prompt == PromptMode::Enriched ? EnrichMode::Template : EnrichMode::Off;
    for (std::size_t k = 0; k < options.seeds; ++k) {
      const std::uint64_t seed = generation_seed(options.seed_base, s.id, k);
      for (bool conditioned : {true, false}) {
        if (!conditioned && !options.include_baseline) continue;
        go.use_reference = conditioned;
        const Generation g = generate(model, user, s.reference, go, seed);
        MetricRow row;
        row.sample_id = s.id;
        row.seed = seed;
        row.condition = conditioned ? "conditioned" : "baseline";
        row.prompt = g.prompt.text;
        row.texture_sim = texture_sim(g.image, s.mask, s.reference);
        row.text_score = text_score(g.image, s.mask, g.prompt.text);
        report.rows.push_back(std::move(row));
      }
    }
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

}  // namespace gfit
