// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/enricher.hpp"

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>

#include "gfit/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace gfit {

const char* source_name(PromptSource s) {
  switch (s) {
    case PromptSource::Template: return "template";
    case PromptSource::External: return "external";
    case PromptSource::Passthrough: return "passthrough";
  }
  return "?";
}

Color nearest_color(Rgb c) {
  Color best = Color::Black;
  long best_d = std::numeric_limits<long>::max();
  for (Color k : all_colors()) {
    const Rgb p = color_rgb(k);
    const long dr = c.r - p.r, dg = c.g - p.g, db = c.b - p.b;
    const long d = dr * dr + dg * dg + db * db;
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

RegionAnalysis analyze_region(const Image& img, const Rect& region) {
  if (region.width == 0 || region.height == 0 || region.x + region.width > img.width ||
      region.y + region.height > img.height) {
    throw ContractError("analyze_region: region outside the image");
  }
  std::vector<Color> labels;
  std::array<std::size_t, kColorCount> counts{};
  for (std::size_t y = 0; y < region.height; ++y)
    for (std::size_t x = 0; x < region.width; ++x) {
      const Color c = nearest_color(img.at(region.x + x, region.y + y));
      labels.push_back(c);
      ++counts[static_cast<std::size_t>(c)];
    }
  std::size_t first = 0;
  for (std::size_t i = 1; i < kColorCount; ++i) {
    if (counts[i] > counts[first]) first = i;
  }
  std::optional<std::size_t> second;
  for (std::size_t i = 0; i < kColorCount; ++i) {
    if (i == first || counts[i] == 0) continue;
    if (!second || counts[i] > counts[*second]) second = i;
  }

  RegionAnalysis r;
  r.fg = static_cast<Color>(first);
  if (!second) {
    // A single colour: solid, with an arbitrary but fixed accent.
    r.bg = r.fg == Color::White ? Color::Black : Color::White;
    r.pattern = Pattern::Solid;
    r.correlation = 1.0;
    r.recognized = true;
    return r;
  }
  r.bg = static_cast<Color>(*second);

  std::vector<double> indicator(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) indicator[i] = labels[i] == r.fg ? 1.0 : 0.0;

  double best = 0.0;
  for (Pattern p : {Pattern::Solid, Pattern::Stripes, Pattern::Checker, Pattern::Dots}) {
    for (int scale : {2, 4}) {
      if (p == Pattern::Solid && scale == 4) continue;
      GarmentSpec g{p, Color::Black, Color::White, scale, 0};
      std::vector<double> tmpl(labels.size());
      for (std::size_t y = 0; y < region.height; ++y)
        for (std::size_t x = 0; x < region.width; ++x)
          tmpl[y * region.width + x] = pattern_is_fg(g, x, y, region.width, region.height) ? 1.0 : 0.0;
      const double c = correlation(indicator, tmpl);
      if (std::abs(c) > std::abs(best)) {
        best = c;
        r.pattern = p;
        r.scale = scale;
      }
    }
  }
  r.correlation = std::abs(best);
  if (best < 0) std::swap(r.fg, r.bg);
  r.recognized = r.correlation >= 0.6;
  if (!r.recognized) r.pattern = Pattern::Textured;
  return r;
}

Rect find_reference_region(const Image& ref) {
  std::size_t x0 = ref.width, y0 = ref.height, x1 = 0, y1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < ref.height; ++y)
    for (std::size_t x = 0; x < ref.width; ++x) {
      if (ref.at(x, y) == kReferenceGround) continue;
      any = true;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  if (!any) throw ContractError("reference image contains no garment pixels");
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

Background classify_background(const Image& img) {
  const Mask person = person_mask();
  if (img.width != person.width || img.height != person.height) {
    throw ContractError("classify_background: expected a " + std::to_string(kImageSize) + "x" +
                        std::to_string(kImageSize) + " person image");
  }
  double sum[3] = {0, 0, 0};
  std::size_t n = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      if (person.at(x, y)) continue;
      const Rgb c = img.at(x, y);
      sum[0] += c.r;
      sum[1] += c.g;
      sum[2] += c.b;
      ++n;
    }
  Background best = Background::Gray;
  double best_d = std::numeric_limits<double>::max();
  for (std::size_t i = 0; i < kBackgroundCount; ++i) {
    const Rgb b = background_rgb(static_cast<Background>(i));
    const double dr = sum[0] / n - b.r, dg = sum[1] / n - b.g, db = sum[2] / n - b.b;
    const double d = dr * dr + dg * dg + db * db;
    if (d < best_d) {
      best_d = d;
      best = static_cast<Background>(i);
    }
  }
  return best;
}

EnrichedPrompt enrich(std::string_view user_text, const Image& reference) {
  EnrichedPrompt out;
  out.original = std::string(user_text);
  if (parse_rich(user_text)) {
    out.text = out.original;
    out.source = PromptSource::Passthrough;
    return out;
  }
  const RegionAnalysis a = analyze_region(reference, find_reference_region(reference));
  std::optional<std::string> background;
  if (auto b = parse_attributes(user_text).background) background = background_name(*b);
  out.text = rich_caption(color_name(a.fg), pattern_name(a.pattern), color_name(a.bg), background);
  out.source = PromptSource::Template;
  if (!a.recognized) {
    out.warning = true;
    out.diagnostic = "pattern not recognized (best correlation " + std::to_string(a.correlation) + ")";
  }
  return out;
}

EnrichedPrompt enrich_external(std::string_view user_text, const Image& reference, const std::string& endpoint,
                               double timeout_seconds) {
  auto fallback = [&](const std::string& why) {
    EnrichedPrompt p = enrich(user_text, reference);
    p.source = PromptSource::Template;
    p.warning = true;
    p.diagnostic = "external rewrite failed: " + why;
    std::clog << "warning: " << p.diagnostic << "; using template prompt\n";
    return p;
  };
  try {
    httplib::Client client(endpoint);
    if (!client.is_valid()) return fallback("invalid endpoint '" + endpoint + "'");
    const auto secs = static_cast<time_t>(timeout_seconds);
    const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    const nlohmann::json request = {{"prompt", std::string(user_text)},
                                    {"image_base64", httplib::detail::base64_encode(encode_ppm(reference))}};
    auto res = client.Post("/v1/rewrite", request.dump(), "application/json");
    if (!res) return fallback("request error: " + httplib::to_string(res.error()));
    if (res->status != 200) return fallback("HTTP status " + std::to_string(res->status));
    const auto body = nlohmann::json::parse(res->body, nullptr, false);
    if (body.is_discarded()) return fallback("response is not valid JSON");
    if (!body.is_object() || !body.contains("rewritten_prompt") || !body["rewritten_prompt"].is_string()) {
      return fallback("response lacks a string 'rewritten_prompt'");
    }
    const std::string text = body["rewritten_prompt"].get<std::string>();
    if (text.empty()) return fallback("empty 'rewritten_prompt'");
    return EnrichedPrompt{std::string(user_text), text, PromptSource::External, false, {}};
  } catch (const std::exception& e) {
    return fallback(e.what());
  }
}

std::optional<EnrichMode> parse_enrich_mode(std::string_view s) {
  if (s == "off") return EnrichMode::Off;
  if (s == "template") return EnrichMode::Template;
  if (s == "external") return EnrichMode::External;
  return std::nullopt;
}

EnrichedPrompt apply_enrichment(EnrichMode mode, std::string_view user_text, const Image& reference,
                                const std::string& endpoint) {
  switch (mode) {
    case EnrichMode::Off:
      return {std::string(user_text), std::string(user_text), PromptSource::Passthrough, false, {}};
    case EnrichMode::Template:
      return enrich(user_text, reference);
    case EnrichMode::External: {
      std::string url = endpoint;
      if (url.empty()) {
        if (const char* env = std::getenv(kRewriteEndpointEnv)) url = env;
      }
      if (url.empty()) {
        EnrichedPrompt p = enrich(user_text, reference);
        p.warning = true;
        p.diagnostic = std::string("no rewrite endpoint configured (set ") + kRewriteEndpointEnv + ")";
        return p;
      }
      return enrich_external(user_text, reference, url);
    }
  }
  return enrich(user_text, reference);
}

}  // namespace gfit
