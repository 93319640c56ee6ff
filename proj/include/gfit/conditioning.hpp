// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Garment conditioning primitives: LoRA layers gated by the input's role and
// attention that mixes in reference features through adapter projections.

#pragma once

#include <cstddef>
#include <string>

#include "gfit/params.hpp"
#include "gfit/tensor.hpp"

namespace gfit {

class Rng;

/// Which stream a tensor belongs to. The LoRA gate is closed for latent noise
/// and open for reference features.
enum class InputTag { LatentNoise, ReferenceFeature };

/// Low-rank delta B*A with A: [r x fan_in] and B: [fan_out x r]. For
/// convolutions A is stored as [r x C_in x k x k] and B as [C_out x r x 1 x 1],
/// i.e. a factorization over the flattened C_in*k*k input.
struct LoraFactors {
  Tensor a;
  Tensor b;

  bool enabled() const { return a.defined(); }
  std::size_t rank() const { return a.defined() ? a.dim(0) : 0; }
  std::size_t numel() const { return enabled() ? a.numel() + b.numel() : 0; }
};

/// y = x W (+ bias) for row-token input x: [n x d_in], W: [d_in x d_out];
/// plus x A^T B^T when the gate is open.
class GatedLinear {
 public:
  GatedLinear() = default;
  GatedLinear(std::size_t d_in, std::size_t d_out, bool with_bias, std::size_t rank, Rng& rng);

  Tensor forward(const Tensor& x, InputTag tag) const;

  /// A ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), B = 0.
  void reset_lora(Rng& rng);
  void remove_lora() { lora = {}; }
  void register_params(ParamStore& store, const std::string& prefix) const;

  std::size_t d_in() const { return weight.dim(0); }
  std::size_t d_out() const { return weight.dim(1); }

  Tensor weight;
  Tensor bias;
  LoraFactors lora;
};

/// Square-kernel convolution with the same gating rule.
class GatedConv2d {
 public:
  GatedConv2d() = default;
  GatedConv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride, std::size_t rank,
              Rng& rng);

  Tensor forward(const Tensor& x, InputTag tag) const;

  void reset_lora(Rng& rng);
  void remove_lora() { lora = {}; }
  void register_params(ParamStore& store, const std::string& prefix) const;

  Tensor weight;  // [C_out x C_in x k x k]
  Tensor bias;    // [C_out]
  LoraFactors lora;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Self-attention over latent tokens extended with a second softmax term
/// whose keys/values are projected from reference features by trainable
/// adapters:
///
///   Softmax(Q K^T / sqrt(d)) V + Softmax(Q K'^T / sqrt(d)) V'
///   Q = z Wq, K = z Wk, V = z Wv, K' = c Wk', V' = c Wv'
///
/// Wq/Wk/Wv are frozen (LoRA-gated) projections; Wk'/Wv' start as copies of
/// Wk/Wv.
struct AdaptiveAttentionBlock {
  AdaptiveAttentionBlock() = default;
  AdaptiveAttentionBlock(std::size_t d_model, std::size_t heads, std::size_t rank, Rng& rng);

  /// Wk' := Wk, Wv' := Wv (fresh buffers).
  void reset_adapters();
  void register_params(ParamStore& store, const std::string& prefix) const;
  std::size_t d_model() const { return q.d_in(); }

  GatedLinear q, k, v;
  Tensor k_adapter;  // [d_model x d_model]
  Tensor v_adapter;
  std::size_t heads = 1;
};

/// Adaptive attention for hidden: [n x d_model] and reference features
/// ref: [m x d_model]. An undefined `ref` skips the second term entirely.
/// The output projection is not part of this function.
Tensor adaptive_attention(const AdaptiveAttentionBlock& block, const Tensor& hidden, const Tensor& ref,
                          InputTag tag = InputTag::LatentNoise);

}  // namespace gfit
