// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// 8-bit RGB images, binary masks, netpbm I/O and the latent codec.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gfit/tensor.hpp"

namespace gfit {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Interleaved RGB, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, Rgb fill = {});

  Rgb at(std::size_t x, std::size_t y) const;
  void set(std::size_t x, std::size_t y, Rgb c);
  bool operator==(const Image&) const = default;
};

/// One byte per pixel; nonzero means inside.
struct Mask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Mask() = default;
  Mask(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h, 0) {}

  bool at(std::size_t x, std::size_t y) const { return pixels[y * width + x] != 0; }
  void set(std::size_t x, std::size_t y, bool on) { pixels[y * width + x] = on ? 255 : 0; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// Binary P6 (8-bit) encode/decode. Decoding errors are FormatError with the
/// offending byte offset.
std::string encode_ppm(const Image& img);
Image decode_ppm(const std::string& bytes);
/// Binary P5 (8-bit); values written as 0/255.
std::string encode_pgm(const Mask& mask);
Mask decode_pgm(const std::string& bytes);

std::string read_file(const std::string& path);
/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::string& path, const std::string& bytes);

Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);
Mask read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Mask& mask);

/// Fixed invertible image <-> latent map: each p x p pixel patch becomes
/// 3*p*p channels (space-to-depth), values scaled to [-1, 1].
class LatentCodec {
 public:
  explicit LatentCodec(std::size_t patch = 2) : patch_(patch) {}

  std::size_t patch() const { return patch_; }
  Shape latent_shape(std::size_t width, std::size_t height) const;

  Tensor encode(const Image& img, DType dtype = default_dtype()) const;
  /// Values are clamped to [-1, 1] and rounded to the nearest 8-bit level.
  Image decode(const Tensor& latent) const;

 private:
  std::size_t patch_;
};

}  // namespace gfit
