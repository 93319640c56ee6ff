// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural garments: palette, patterns, person layout, caption tiers and
// caption parsing.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "gfit/image.hpp"

namespace gfit {

class Rng;

enum class Pattern { Solid, Stripes, Checker, Dots, Textured };
enum class Color { Black, White, Red, Green, Blue, Yellow, Cyan, Magenta };
enum class Background { Gray, Orange, Purple, Teal };
enum class CaptionTier { Fixed, Simple, Rich };

constexpr std::size_t kPatternCount = 4;  // excluding Textured
constexpr std::size_t kColorCount = 8;
constexpr std::size_t kBackgroundCount = 4;

const char* pattern_name(Pattern p);
const char* color_name(Color c);
const char* background_name(Background b);
const char* tier_name(CaptionTier t);
std::optional<Pattern> parse_pattern(std::string_view word);
std::optional<Color> parse_color(std::string_view word);
std::optional<Background> parse_background(std::string_view word);
std::optional<CaptionTier> parse_tier(std::string_view word);

Rgb color_rgb(Color c);
Rgb background_rgb(Background b);
const std::array<Color, kColorCount>& all_colors();

struct GarmentSpec {
  Pattern pattern = Pattern::Solid;
  Color fg = Color::Red;
  Color bg = Color::White;
  int scale = 2;               // 2 or 4 pixels
  std::uint64_t texture_seed = 0;  // only used by Textured
  bool operator==(const GarmentSpec&) const = default;
};

struct SampleSpec {
  GarmentSpec garment;
  Background background = Background::Gray;
  bool operator==(const SampleSpec&) const = default;
};

/// Throws ConfigError for fg == bg or an unsupported scale.
void validate(const GarmentSpec& spec);
GarmentSpec random_garment(Rng& rng, Pattern pattern);

/// Foreground test in region-local coordinates. The outermost ring of every
/// region is drawn in the accent (bg) colour.
bool pattern_is_fg(const GarmentSpec& spec, std::size_t x, std::size_t y, std::size_t width, std::size_t height);
/// Renders a width x height garment tile.
Image render_garment(const GarmentSpec& spec, std::size_t width, std::size_t height);

// Fixed 32x32 layout.
struct Rect {
  std::size_t x = 0, y = 0, width = 0, height = 0;
  bool contains(std::size_t px, std::size_t py) const {
    return px >= x && py >= y && px < x + width && py < y + height;
  }
};
constexpr std::size_t kImageSize = 32;
constexpr Rect kTorsoRect{10, 8, 12, 16};
constexpr Rect kReferenceRect{4, 4, 24, 24};
constexpr Rgb kReferenceGround{160, 160, 160};
constexpr Rgb kSkin{230, 180, 140};
constexpr Rgb kTrousers{40, 40, 90};

/// Garment region of the person image (the torso rectangle).
Mask garment_mask();
/// Head, torso and legs; everything outside is scene background.
Mask person_mask();

Image render_target(const SampleSpec& spec);
Image render_reference(const GarmentSpec& spec);

/// Template captions:
///   fixed  "a person wearing clothes"
///   simple "a person wearing a shirt"
///   rich   "a person wearing a {fg} {pattern} shirt with {bg} accents, {background} background"
std::string caption(const SampleSpec& spec, CaptionTier tier);
std::string rich_caption(const std::string& fg, const std::string& pattern, const std::string& bg,
                         const std::optional<std::string>& background);

/// Attributes named by a caption. Fields stay empty when not mentioned.
struct CaptionAttributes {
  std::optional<Pattern> pattern;
  std::optional<Color> fg;
  std::optional<Color> bg;
  std::optional<Background> background;
  bool operator==(const CaptionAttributes&) const = default;
  std::size_t scored_count() const {
    return (pattern ? 1 : 0) + (fg ? 1 : 0) + (background ? 1 : 0);
  }
};

/// Lenient scan usable on any caption: "{color} {pattern}" names fg and the
/// pattern, "{color} shirt" names fg, "{color} accents" names bg and
/// "{name} background" the scene.
CaptionAttributes parse_attributes(std::string_view caption);
/// Strict parse of the rich template (background clause optional).
std::optional<CaptionAttributes> parse_rich(std::string_view caption);
CaptionAttributes attributes_of(const SampleSpec& spec);

}  // namespace gfit
