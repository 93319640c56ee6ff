// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/dataset.hpp"

#include <cstdio>
#include <filesystem>

#include "gfit/error.hpp"
#include "gfit/rng.hpp"

namespace gfit {

namespace fs = std::filesystem;

GarmentSample make_sample(std::size_t id, const SampleSpec& spec) {
  GarmentSample s;
  s.id = id;
  s.spec = spec;
  s.reference = render_reference(spec.garment);
  s.target = render_target(spec);
  s.mask = garment_mask();
  for (auto tier : {CaptionTier::Fixed, CaptionTier::Simple, CaptionTier::Rich}) {
    s.captions[static_cast<std::size_t>(tier)] = caption(spec, tier);
  }
  return s;
}

std::vector<GarmentSample> gen_dataset(std::size_t n, std::uint64_t seed, const DatasetOptions& options) {
  if (n == 0) throw ConfigError("gen_dataset: n must be >= 1");
  if (!(options.free_patch_fraction >= 0.0 && options.free_patch_fraction <= 1.0)) {
    throw ConfigError("gen_dataset: free_patch_fraction must lie in [0, 1]");
  }
  Rng rng = Rng::substream(seed, "data");
  std::vector<GarmentSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Pattern pattern = static_cast<Pattern>(i % kPatternCount);
    if (options.free_patch_fraction > 0.0 && rng.uniform() < options.free_patch_fraction) {
      pattern = Pattern::Textured;
    }
    SampleSpec spec;
    spec.garment = random_garment(rng, pattern);
    spec.background = static_cast<Background>(rng.uniform_int(0, kBackgroundCount - 1));
    out.push_back(make_sample(i, spec));
  }
  return out;
}

nlohmann::json to_json(const SampleSpec& s) {
  nlohmann::json j = {{"pattern", pattern_name(s.garment.pattern)},
                      {"fg", color_name(s.garment.fg)},
                      {"bg", color_name(s.garment.bg)},
                      {"scale", s.garment.scale},
                      {"background", background_name(s.background)}};
  if (s.garment.pattern == Pattern::Textured) j["texture_seed"] = std::to_string(s.garment.texture_seed);
  return j;
}

SampleSpec sample_spec_from_json(const nlohmann::json& j) {
  auto word = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) throw ConfigError(std::string("spec: missing string '") + key + "'");
    return j[key].get<std::string>();
  };
  SampleSpec s;
  auto p = parse_pattern(word("pattern"));
  auto fg = parse_color(word("fg"));
  auto bg = parse_color(word("bg"));
  auto b = parse_background(word("background"));
  if (!p || !fg || !bg || !b) throw ConfigError("spec: unknown attribute value in " + j.dump());
  if (!j.contains("scale") || !j["scale"].is_number_integer()) throw ConfigError("spec: missing integer 'scale'");
  s.garment = {*p, *fg, *bg, j["scale"].get<int>(), 0};
  if (*p == Pattern::Textured) s.garment.texture_seed = std::stoull(word("texture_seed"));
  s.background = *b;
  validate(s.garment);
  return s;
}

namespace {

std::string file_name(const char* stem, std::size_t id, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.%s", stem, id, ext);
  return buf;
}

}  // namespace

void write_corpus(const std::string& dir, const std::vector<GarmentSample>& samples) {
  const fs::path target(dir);
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& s : samples) {
    const std::string ref = file_name("ref", s.id, "ppm");
    const std::string tgt = file_name("target", s.id, "ppm");
    const std::string msk = file_name("mask", s.id, "pgm");
    write_ppm((tmp / ref).string(), s.reference);
    write_ppm((tmp / tgt).string(), s.target);
    write_pgm((tmp / msk).string(), s.mask);
    index.push_back({{"id", s.id},
                     {"ref_path", ref},
                     {"target_path", tgt},
                     {"mask_path", msk},
                     {"spec", to_json(s.spec)},
                     {"captions", {{"fixed", s.captions[0]}, {"simple", s.captions[1]}, {"rich", s.captions[2]}}}});
  }
  write_file_atomic((tmp / "index.json").string(), index.dump(2) + "\n");
  fs::remove_all(target);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::rename(tmp, target);
}

std::vector<GarmentSample> load_corpus(const std::string& dir) {
  const fs::path root(dir);
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file((root / "index.json").string()));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("corpus index: ") + e.what(), e.byte);
  }
  if (!index.is_array()) throw FormatError("corpus index must be a JSON array", 0);
  std::vector<GarmentSample> out;
  for (const auto& row : index) {
    GarmentSample s;
    s.id = row.at("id").get<std::size_t>();
    s.spec = sample_spec_from_json(row.at("spec"));
    s.reference = read_ppm((root / row.at("ref_path").get<std::string>()).string());
    s.target = read_ppm((root / row.at("target_path").get<std::string>()).string());
    s.mask = read_pgm((root / row.at("mask_path").get<std::string>()).string());
    const auto& caps = row.at("captions");
    s.captions = {caps.at("fixed").get<std::string>(), caps.at("simple").get<std::string>(),
                  caps.at("rich").get<std::string>()};
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gfit
