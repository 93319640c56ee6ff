// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "gfit/dataset.hpp"
#include "gfit/error.hpp"
#include "gfit/eval.hpp"
#include "gfit/garment.hpp"
#include "gfit/rng.hpp"

using namespace gfit;

namespace {

Mask rect_mask(const Rect& r) {
  Mask m(kImageSize, kImageSize);
  for (std::size_t y = r.y; y < r.y + r.height; ++y)
    for (std::size_t x = r.x; x < r.x + r.width; ++x) m.set(x, y, true);
  return m;
}

Image paint_torso(const SampleSpec& s, Rgb fill) {
  Image img = render_target(s);
  for (std::size_t y = kTorsoRect.y; y < kTorsoRect.y + kTorsoRect.height; ++y)
    for (std::size_t x = kTorsoRect.x; x < kTorsoRect.x + kTorsoRect.width; ++x) img.set(x, y, fill);
  return img;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 16;
  c.heads = 2;
  c.groups = 4;
  c.lora_rank = 2;
  c.time_hidden = 32;
  c.text_dim = 16;
  return c;
}

}  // namespace

TEST(TextureFeatures, HandComputedSolidRegion) {
  Image img(4, 4, Rgb{255, 0, 0});
  Mask m(4, 4);
  for (std::size_t i = 0; i < 16; ++i) m.pixels[i] = 255;
  const auto f = texture_features(img, m);
  ASSERT_EQ(f.size(), 35u);
  // red falls in bin (2, 0, 0) = 18; a flat region has no gradient energy
  for (std::size_t i = 0; i < 35; ++i) EXPECT_DOUBLE_EQ(f[i], i == 18 ? 1.0 : 0.0) << i;
}

TEST(TextureFeatures, VerticalEdgeHasHorizontalGradient) {
  Image img(6, 6, Rgb{0, 0, 0});
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 3; x < 6; ++x) img.set(x, y, Rgb{255, 255, 255});
  Mask m(6, 6);
  for (auto& p : m.pixels) p = 255;
  const auto f = texture_features(img, m);
  EXPECT_DOUBLE_EQ(f[27], 1.0);
  for (std::size_t i = 28; i < 35; ++i) EXPECT_DOUBLE_EQ(f[i], 0.0);
  EXPECT_NEAR(f[0], 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(f[26], 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(TextureSim, IdenticalRegionScoresOne) {
  const GarmentSpec g{Pattern::Checker, Color::Red, Color::White, 2, 0};
  const Image ref = render_reference(g);
  EXPECT_NEAR(texture_sim(ref, rect_mask(kReferenceRect), ref), 1.0, 1e-12);
}

TEST(TextureSim, RedVersusBlueAtMostHalf) {
  const Image ref = render_reference(GarmentSpec{Pattern::Solid, Color::Red, Color::White, 2, 0});
  Image red(32, 32, kReferenceGround), blue(32, 32, kReferenceGround);
  for (std::size_t y = 4; y < 28; ++y)
    for (std::size_t x = 4; x < 28; ++x) {
      red.set(x, y, color_rgb(Color::Red));
      blue.set(x, y, color_rgb(Color::Blue));
    }
  EXPECT_DOUBLE_EQ(texture_sim(blue, rect_mask(kReferenceRect), red), 0.0);
  SampleSpec s;
  EXPECT_LE(texture_sim(paint_torso(s, color_rgb(Color::Blue)), garment_mask(), ref), 0.5);
}

TEST(TextureSim, InvariantOutsideMaskAndBounded) {
  const Image ref = render_reference(GarmentSpec{Pattern::Stripes, Color::Green, Color::Black, 4, 0});
  SampleSpec a;
  a.garment = {Pattern::Dots, Color::Yellow, Color::Blue, 2, 0};
  SampleSpec b = a;
  b.background = Background::Orange;
  const double sa = texture_sim(render_target(a), garment_mask(), ref);
  const double sb = texture_sim(render_target(b), garment_mask(), ref);
  EXPECT_EQ(sa, sb);
  EXPECT_GE(sa, 0.0);
  EXPECT_LE(sa, 1.0);
  EXPECT_THROW(texture_sim(ref, Mask(32, 32), ref), MetricError);
}

TEST(TextureSim, SymmetricInFeatureArguments) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> a(35), b(35);
    for (auto& x : a) x = rng.uniform();
    for (auto& x : b) x = rng.uniform();
    EXPECT_EQ(feature_similarity(a, b), feature_similarity(b, a));
    std::vector<double> c = a;
    for (auto& x : c) x *= 3.0;
    EXPECT_NEAR(feature_similarity(a, c), 1.0, 1e-12);
  }
}

TEST(TextScore, RenderedFromCaptionScoresOne) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    SampleSpec s;
    s.garment = random_garment(rng, static_cast<Pattern>(i % 4));
    s.background = static_cast<Background>(i % 4);
    const auto score = text_score(render_target(s), garment_mask(), caption(s, CaptionTier::Rich));
    ASSERT_TRUE(score.has_value());
    EXPECT_DOUBLE_EQ(*score, 1.0) << caption(s, CaptionTier::Rich);
  }
}

TEST(TextScore, OneWrongAttributeGivesTwoThirds) {
  SampleSpec s;
  s.garment = {Pattern::Checker, Color::Red, Color::White, 2, 0};
  s.background = Background::Teal;
  SampleSpec wrong = s;
  wrong.background = Background::Orange;
  const auto score = text_score(render_target(s), garment_mask(), caption(wrong, CaptionTier::Rich));
  EXPECT_NEAR(*score, 2.0 / 3.0, 1e-12);
}

TEST(TextScore, FixedCaptionIsNotApplicable) {
  SampleSpec s;
  EXPECT_FALSE(text_score(render_target(s), garment_mask(), caption(s, CaptionTier::Fixed)).has_value());
}

TEST(Report, AggregatesSkipNotApplicableRows) {
  std::vector<MetricRow> rows = {
      {0, 1, "conditioned", "p", 0.8, 1.0},
      {0, 2, "conditioned", "p", 0.6, std::nullopt},
      {0, 1, "baseline", "p", 0.2, 0.0},
  };
  const auto agg = aggregate_rows(rows);
  EXPECT_EQ(agg.at("conditioned").count, 2u);
  EXPECT_NEAR(agg.at("conditioned").texture_mean, 0.7, 1e-15);
  EXPECT_NEAR(agg.at("conditioned").texture_std, 0.1, 1e-15);
  EXPECT_EQ(agg.at("conditioned").text_count, 1u);
  EXPECT_DOUBLE_EQ(agg.at("conditioned").text_mean, 1.0);
  MetricReport r;
  r.rows = rows;
  r.aggregates = agg;
  EXPECT_NEAR(r.texture_gap(), 0.5, 1e-15);
  const std::string text = r.to_text();
  EXPECT_NE(text.find("aesthetic score: out of scope"), std::string::npos);
}

TEST(Report, JsonRoundTripIsExact) {
  MetricReport r;
  r.meta = {{"k", 1}};
  r.rows = {{3, 99, "conditioned", "a person wearing a shirt", 0.123456789012345, std::nullopt},
            {3, 99, "baseline", "a person wearing a shirt", 0.1, 0.5}};
  r.aggregates = aggregate_rows(r.rows);
  const auto back = MetricReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back.to_json().dump(), r.to_json().dump());
  EXPECT_EQ(back.aggregates, r.aggregates);
}

TEST(Benchmark, RowCountDeterminismAndRecomputation) {
  Rng init(5);
  const ToyUNet model(tiny_config(), init);
  const auto data = gen_dataset(2, 3, {});
  BenchmarkOptions opts;
  opts.seeds = 2;
  opts.guidance.num_steps = 3;
  const auto a = run_benchmark(model, data, opts, "abc");
  const auto b = run_benchmark(model, data, opts, "abc");
  EXPECT_EQ(a.rows.size(), data.size() * opts.seeds * 2);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  const auto reparsed = MetricReport::from_json(nlohmann::json::parse(a.to_json().dump()));
  EXPECT_EQ(aggregate_rows(reparsed.rows), a.aggregates);
  EXPECT_EQ(a.rows[0].seed, a.rows[1].seed);
  EXPECT_EQ(a.rows[0].condition, "conditioned");
  EXPECT_EQ(a.rows[1].condition, "baseline");
  EXPECT_NE(a.rows[0].seed, a.rows[2].seed);
  EXPECT_EQ(a.meta.at("checkpoint"), "abc");
}

TEST(Benchmark, PromptModes) {
  const auto s = gen_dataset(1, 2, {})[0];
  EXPECT_EQ(benchmark_prompt(s, PromptMode::Fixed), "a person wearing clothes");
  EXPECT_EQ(benchmark_prompt(s, PromptMode::Rich), s.caption_for(CaptionTier::Rich));
  EXPECT_EQ(benchmark_prompt(s, PromptMode::Enriched),
            std::string("a person wearing a shirt, ") + background_name(s.spec.background) + " background");
  EXPECT_EQ(parse_prompt_mode("enriched"), PromptMode::Enriched);
}
