// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "gfit/error.hpp"
#include "gfit/rng.hpp"

namespace gfit {

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "<unk>",   "a",      "person", "wearing", "clothes",  "shirt",  "with",   "accents", "background",
      ",",       "black",  "white",  "red",     "green",    "blue",   "yellow", "cyan",    "magenta",
      "solid",   "stripes", "checker", "dots",  "textured", "gray",   "orange", "purple",  "teal",
  };
  return words;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (ch == ',') {
      flush();
      out.emplace_back(",");
    } else {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  flush();
  return out;
}

std::vector<std::size_t> tokenize(std::string_view text) {
  const auto& vocab = vocabulary();
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) {
    auto it = std::find(vocab.begin(), vocab.end(), w);
    ids.push_back(it == vocab.end() ? kUnknownToken : static_cast<std::size_t>(it - vocab.begin()));
  }
  return ids;
}

TextEncoder::TextEncoder(std::size_t dim, std::size_t max_tokens) : dim_(dim), max_tokens_(max_tokens) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("text encoder: dim must be positive and even");
  if (max_tokens == 0) throw ConfigError("text encoder: max_tokens must be positive");
  const auto& vocab = vocabulary();
  table_.resize(vocab.size() * dim);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    Rng rng(mix64(fnv1a64(vocab[i]) ^ 0x7465787465ULL));
    for (std::size_t j = 0; j < dim; ++j) table_[i * dim + j] = rng.normal();
  }
}

TextEmbedding TextEncoder::encode(std::string_view caption, DType dtype) const {
  auto ids = tokenize(caption);
  if (ids.empty()) ids.push_back(kUnknownToken);
  if (ids.size() > max_tokens_) ids.resize(max_tokens_);
  std::vector<double> rows(ids.size() * dim_);
  const std::size_t half = dim_ / 2;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    for (std::size_t j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
      rows[p * dim_ + j] = table_[ids[p] * dim_ + j] + std::sin(static_cast<double>(p) * freq);
      rows[p * dim_ + half + j] = table_[ids[p] * dim_ + half + j] + std::cos(static_cast<double>(p) * freq);
    }
  }
  return {Tensor::from_values({ids.size(), dim_}, rows, dtype)};
}

}  // namespace gfit
