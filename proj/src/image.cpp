// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gfit/error.hpp"

namespace gfit {

Image::Image(std::size_t w, std::size_t h, Rgb fill) : width(w), height(h), pixels(w * h * 3) {
  for (std::size_t i = 0; i < w * h; ++i) {
    pixels[3 * i] = fill.r;
    pixels[3 * i + 1] = fill.g;
    pixels[3 * i + 2] = fill.b;
  }
}

Rgb Image::at(std::size_t x, std::size_t y) const {
  const std::size_t i = 3 * (y * width + x);
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Image::set(std::size_t x, std::size_t y, Rgb c) {
  const std::size_t i = 3 * (y * width + x);
  pixels[i] = c.r;
  pixels[i + 1] = c.g;
  pixels[i + 2] = c.b;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](auto v) { return v != 0; }));
}

namespace {

struct HeaderReader {
  const std::string& s;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < s.size()) {
      if (s[pos] == '#') {
        while (pos < s.size() && s[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      v = v * 10 + static_cast<std::size_t>(s[pos] - '0');
      if (v > (1u << 20)) throw FormatError(std::string("netpbm: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("netpbm: expected ") + what, start);
    return v;
  }
};

// Returns (width, height, payload offset).
std::tuple<std::size_t, std::size_t, std::size_t> parse_header(const std::string& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) {
    throw FormatError(std::string("netpbm: expected magic ") + magic, 0);
  }
  HeaderReader r{bytes, 2};
  const std::size_t w = r.number("width");
  const std::size_t h = r.number("height");
  const std::size_t maxval_pos = r.pos;
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) throw FormatError("netpbm: only maxval 255 is supported", maxval_pos);
  if (r.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos]))) {
    throw FormatError("netpbm: missing separator before pixel data", r.pos);
  }
  return {w, h, r.pos + 1};
}

}  // namespace

std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

Image decode_ppm(const std::string& bytes) {
  auto [w, h, off] = parse_header(bytes, "P6");
  const std::size_t need = w * h * 3;
  if (bytes.size() - off < need) throw FormatError("ppm: truncated pixel data", bytes.size());
  Image img(w, h);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(off), need, img.pixels.begin());
  return img;
}

std::string encode_pgm(const Mask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  for (auto v : mask.pixels) out.push_back(static_cast<char>(v ? 255 : 0));
  return out;
}

Mask decode_pgm(const std::string& bytes) {
  auto [w, h, off] = parse_header(bytes, "P5");
  if (bytes.size() - off < w * h) throw FormatError("pgm: truncated pixel data", bytes.size());
  Mask m(w, h);
  for (std::size_t i = 0; i < w * h; ++i) m.pixels[i] = static_cast<std::uint8_t>(bytes[off + i]) >= 128 ? 255 : 0;
  return m;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

Image read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }
void write_ppm(const std::string& path, const Image& img) { write_file_atomic(path, encode_ppm(img)); }
Mask read_pgm(const std::string& path) { return decode_pgm(read_file(path)); }
void write_pgm(const std::string& path, const Mask& mask) { write_file_atomic(path, encode_pgm(mask)); }

// ---------------------------------------------------------------------------

Shape LatentCodec::latent_shape(std::size_t width, std::size_t height) const {
  if (width % patch_ != 0 || height % patch_ != 0) {
    throw DimensionError("codec: image " + std::to_string(width) + "x" + std::to_string(height) +
                         " is not divisible by patch " + std::to_string(patch_));
  }
  return {3 * patch_ * patch_, height / patch_, width / patch_};
}

Tensor LatentCodec::encode(const Image& img, DType dtype) const {
  const Shape shape = latent_shape(img.width, img.height);
  const std::size_t p = patch_, hl = shape[1], wl = shape[2];
  Tensor z(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    auto d = z.mutable_data<T>();
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t ch = (c * p + y % p) * p + x % p;
          const double v = img.pixels[3 * (y * img.width + x) + c] / 127.5 - 1.0;
          d[(ch * hl + y / p) * wl + x / p] = static_cast<T>(v);
        }
  });
  return z;
}

Image LatentCodec::decode(const Tensor& latent) const {
  const std::size_t p = patch_;
  if (latent.rank() != 3 || latent.dim(0) != 3 * p * p) {
    throw DimensionError("codec: latent " + shape_str(latent.shape()) + " does not match patch " + std::to_string(p));
  }
  const std::size_t hl = latent.dim(1), wl = latent.dim(2);
  Image img(wl * p, hl * p);
  const auto v = latent.values();
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t ch = (c * p + y % p) * p + x % p;
        const double raw = v[(ch * hl + y / p) * wl + x / p];
        const double s = std::isfinite(raw) ? std::clamp(raw, -1.0, 1.0) : 0.0;
        img.pixels[3 * (y * img.width + x) + c] = static_cast<std::uint8_t>(std::lround((s + 1.0) * 127.5));
      }
  return img;
}

}  // namespace gfit
