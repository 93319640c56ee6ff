// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen toy text encoder: a closed word vocabulary, hash-seeded embedding
// rows and sinusoidal positions. Nothing here is trained.

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "gfit/tensor.hpp"

namespace gfit {

/// The closed vocabulary. Index 0 is "<unk>".
const std::vector<std::string>& vocabulary();
constexpr std::size_t kUnknownToken = 0;

/// Lower-cases, splits on whitespace and treats ',' as its own token.
std::vector<std::string> split_words(std::string_view text);
std::vector<std::size_t> tokenize(std::string_view text);

/// Caption encoding [tokens x dim].
struct TextEmbedding {
  Tensor tokens;
};

class TextEncoder {
 public:
  explicit TextEncoder(std::size_t dim = 64, std::size_t max_tokens = 24);

  std::size_t dim() const { return dim_; }
  std::size_t max_tokens() const { return max_tokens_; }

  /// At least one row; an empty caption encodes as a single "<unk>".
  TextEmbedding encode(std::string_view caption, DType dtype = default_dtype()) const;

 private:
  std::size_t dim_;
  std::size_t max_tokens_;
  std::vector<double> table_;  // [vocab x dim]
};

}  // namespace gfit
