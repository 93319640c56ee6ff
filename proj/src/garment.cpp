// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/garment.hpp"

#include "gfit/error.hpp"
#include "gfit/rng.hpp"
#include "gfit/text.hpp"

namespace gfit {

namespace {

constexpr const char* kPatternNames[] = {"solid", "stripes", "checker", "dots", "textured"};
constexpr const char* kColorNames[] = {"black", "white", "red", "green", "blue", "yellow", "cyan", "magenta"};
constexpr const char* kBackgroundNames[] = {"gray", "orange", "purple", "teal"};
constexpr const char* kTierNames[] = {"fixed", "simple", "rich"};

template <class E, std::size_t N>
std::optional<E> lookup(const char* const (&names)[N], std::string_view word) {
  for (std::size_t i = 0; i < N; ++i) {
    if (word == names[i]) return static_cast<E>(i);
  }
  return std::nullopt;
}

}  // namespace

const char* pattern_name(Pattern p) { return kPatternNames[static_cast<int>(p)]; }
const char* color_name(Color c) { return kColorNames[static_cast<int>(c)]; }
const char* background_name(Background b) { return kBackgroundNames[static_cast<int>(b)]; }
const char* tier_name(CaptionTier t) { return kTierNames[static_cast<int>(t)]; }
std::optional<Pattern> parse_pattern(std::string_view w) { return lookup<Pattern>(kPatternNames, w); }
std::optional<Color> parse_color(std::string_view w) { return lookup<Color>(kColorNames, w); }
std::optional<Background> parse_background(std::string_view w) { return lookup<Background>(kBackgroundNames, w); }
std::optional<CaptionTier> parse_tier(std::string_view w) { return lookup<CaptionTier>(kTierNames, w); }

Rgb color_rgb(Color c) {
  switch (c) {
    case Color::Black: return {0, 0, 0};
    case Color::White: return {255, 255, 255};
    case Color::Red: return {255, 0, 0};
    case Color::Green: return {0, 255, 0};
    case Color::Blue: return {0, 0, 255};
    case Color::Yellow: return {255, 255, 0};
    case Color::Cyan: return {0, 255, 255};
    case Color::Magenta: return {255, 0, 255};
  }
  return {};
}

Rgb background_rgb(Background b) {
  switch (b) {
    case Background::Gray: return {128, 128, 128};
    case Background::Orange: return {255, 128, 0};
    case Background::Purple: return {128, 0, 128};
    case Background::Teal: return {0, 128, 128};
  }
  return {};
}

const std::array<Color, kColorCount>& all_colors() {
  static const std::array<Color, kColorCount> colors = {Color::Black, Color::White,  Color::Red,  Color::Green,
                                                        Color::Blue,  Color::Yellow, Color::Cyan, Color::Magenta};
  return colors;
}

void validate(const GarmentSpec& spec) {
  if (spec.fg == spec.bg) throw ConfigError("garment: fg and bg colours must differ");
  if (spec.scale != 2 && spec.scale != 4) throw ConfigError("garment: scale must be 2 or 4");
}

GarmentSpec random_garment(Rng& rng, Pattern pattern) {
  GarmentSpec g;
  g.pattern = pattern;
  g.fg = static_cast<Color>(rng.uniform_int(0, kColorCount - 1));
  do {
    g.bg = static_cast<Color>(rng.uniform_int(0, kColorCount - 1));
  } while (g.bg == g.fg);
  g.scale = rng.uniform_int(0, 1) == 0 ? 2 : 4;
  if (pattern == Pattern::Textured) g.texture_seed = rng.next_u64();
  return g;
}

bool pattern_is_fg(const GarmentSpec& spec, std::size_t x, std::size_t y, std::size_t width, std::size_t height) {
  if (x == 0 || y == 0 || x + 1 == width || y + 1 == height) return false;
  const std::size_t s = static_cast<std::size_t>(spec.scale);
  switch (spec.pattern) {
    case Pattern::Solid:
      return true;
    case Pattern::Stripes:
      return (y / s) % 2 == 0;
    case Pattern::Checker:
      return ((x / s) + (y / s)) % 2 == 0;
    case Pattern::Dots:
      return x % (2 * s) < s && y % (2 * s) < s;
    case Pattern::Textured: {
      // Cell-wise coin flips keyed by the texture seed.
      const std::uint64_t cell = (static_cast<std::uint64_t>(y / s) << 32) | (x / s);
      return (mix64(spec.texture_seed ^ mix64(cell)) & 1u) != 0;
    }
  }
  return false;
}

Image render_garment(const GarmentSpec& spec, std::size_t width, std::size_t height) {
  validate(spec);
  Image img(width, height);
  const Rgb fg = color_rgb(spec.fg), bg = color_rgb(spec.bg);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) img.set(x, y, pattern_is_fg(spec, x, y, width, height) ? fg : bg);
  return img;
}

Mask garment_mask() {
  Mask m(kImageSize, kImageSize);
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) m.set(x, y, kTorsoRect.contains(x, y));
  return m;
}

namespace {

constexpr Rect kHead{13, 2, 6, 6};
constexpr Rect kLeftLeg{11, 24, 4, 8};
constexpr Rect kRightLeg{17, 24, 4, 8};

}  // namespace

Mask person_mask() {
  Mask m(kImageSize, kImageSize);
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) {
      m.set(x, y, kHead.contains(x, y) || kTorsoRect.contains(x, y) || kLeftLeg.contains(x, y) ||
                      kRightLeg.contains(x, y));
    }
  return m;
}

Image render_target(const SampleSpec& spec) {
  Image img(kImageSize, kImageSize, background_rgb(spec.background));
  const Image tile = render_garment(spec.garment, kTorsoRect.width, kTorsoRect.height);
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) {
      if (kHead.contains(x, y)) img.set(x, y, kSkin);
      if (kLeftLeg.contains(x, y) || kRightLeg.contains(x, y)) img.set(x, y, kTrousers);
      if (kTorsoRect.contains(x, y)) img.set(x, y, tile.at(x - kTorsoRect.x, y - kTorsoRect.y));
    }
  return img;
}

Image render_reference(const GarmentSpec& spec) {
  Image img(kImageSize, kImageSize, kReferenceGround);
  const Image tile = render_garment(spec, kReferenceRect.width, kReferenceRect.height);
  for (std::size_t y = 0; y < kReferenceRect.height; ++y)
    for (std::size_t x = 0; x < kReferenceRect.width; ++x) img.set(kReferenceRect.x + x, kReferenceRect.y + y, tile.at(x, y));
  return img;
}

std::string rich_caption(const std::string& fg, const std::string& pattern, const std::string& bg,
                         const std::optional<std::string>& background) {
  std::string s = "a person wearing a " + fg + " " + pattern + " shirt with " + bg + " accents";
  if (background) s += ", " + *background + " background";
  return s;
}

std::string caption(const SampleSpec& spec, CaptionTier tier) {
  switch (tier) {
    case CaptionTier::Fixed:
      return "a person wearing clothes";
    case CaptionTier::Simple:
      return "a person wearing a shirt";
    case CaptionTier::Rich:
      return rich_caption(color_name(spec.garment.fg), pattern_name(spec.garment.pattern),
                          color_name(spec.garment.bg), std::string(background_name(spec.background)));
  }
  return {};
}

CaptionAttributes parse_attributes(std::string_view text) {
  const auto words = split_words(text);
  CaptionAttributes a;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (auto p = parse_pattern(words[i])) {
      a.pattern = p;
      if (i > 0) {
        if (auto c = parse_color(words[i - 1])) a.fg = c;
      }
    } else if (words[i] == "shirt" && i > 0 && !a.fg) {
      if (auto c = parse_color(words[i - 1])) a.fg = c;
    } else if (words[i] == "accents" && i > 0) {
      if (auto c = parse_color(words[i - 1])) a.bg = c;
    } else if (words[i] == "background" && i > 0) {
      if (auto b = parse_background(words[i - 1])) a.background = b;
    }
  }
  return a;
}

std::optional<CaptionAttributes> parse_rich(std::string_view text) {
  const auto w = split_words(text);
  // a person wearing a FG PATTERN shirt with BG accents [, BACKGROUND background]
  const bool head = w.size() >= 10 && w[0] == "a" && w[1] == "person" && w[2] == "wearing" && w[3] == "a" &&
                    w[6] == "shirt" && w[7] == "with" && w[9] == "accents";
  if (!head || (w.size() != 10 && w.size() != 13)) return std::nullopt;
  CaptionAttributes a;
  a.fg = parse_color(w[4]);
  a.pattern = parse_pattern(w[5]);
  a.bg = parse_color(w[8]);
  if (!a.fg || !a.pattern || !a.bg) return std::nullopt;
  if (w.size() == 13) {
    if (w[10] != "," || w[12] != "background") return std::nullopt;
    a.background = parse_background(w[11]);
    if (!a.background) return std::nullopt;
  }
  return a;
}

CaptionAttributes attributes_of(const SampleSpec& spec) {
  return {spec.garment.pattern, spec.garment.fg, spec.garment.bg, spec.background};
}

}  // namespace gfit
