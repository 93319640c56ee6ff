// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy denoising UNet with gated LoRA, adaptive attention and text
// cross-attention. The same network serves as the garment reference encoder
// when run with the reference tag (LoRA gates open).

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "gfit/conditioning.hpp"
#include "gfit/params.hpp"
#include "gfit/tensor.hpp"
#include "gfit/text.hpp"
#include "json.hpp"

namespace gfit {

class Rng;

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t codec_patch = 2;
  std::size_t stem_patch = 2;  // space-to-depth inside the UNet stem
  std::size_t channels = 64;   // d_model
  std::size_t heads = 4;
  std::size_t groups = 8;
  std::size_t lora_rank = 8;
  std::size_t time_hidden = 128;
  std::size_t text_dim = 64;
  std::size_t max_tokens = 24;

  std::size_t latent_channels() const { return 3 * codec_patch * codec_patch; }
  std::size_t latent_size() const { return image_size / codec_patch; }
  Shape latent_shape() const { return {latent_channels(), latent_size(), latent_size()}; }
  /// Throws ConfigError when extents do not divide.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Captured pre-attention hidden states, one [tokens x channels] matrix per
/// adaptive attention site in execution order.
struct ReferenceFeatures {
  std::vector<Tensor> sites;
};

/// Extra residual added at the end of each block: f(site, hidden) -> delta.
using ResidualHook = std::function<Tensor(std::size_t site, const Tensor& hidden)>;

class ToyUNet {
 public:
  static constexpr std::size_t kSites = 5;
  static const std::array<const char*, kSites>& site_names();

  ToyUNet(const ModelConfig& cfg, Rng& init_rng);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Reference pass: tag = reference, t = 0, null text, no adaptive term.
  ReferenceFeatures encode_reference(const Tensor& ref_latent) const;

  /// Noise prediction. `text == nullptr` attends to the learned null token;
  /// `refs == nullptr` skips the reference term of every adaptive attention.
  Tensor denoise(const Tensor& z_t, int t, const TextEmbedding* text, const ReferenceFeatures* refs) const;

  /// Hidden states entering each adaptive attention site on the latent path.
  std::vector<Tensor> capture_sites(const Tensor& z_t, int t, const TextEmbedding* text) const;

  /// Convolution-only trunk (stem and first residual pair), latent tag.
  Tensor conv_trunk(const Tensor& z, int t) const;

  const AdaptiveAttentionBlock& attention_site(std::size_t i) const { return blocks_.at(i).attn; }

  /// Fresh LoRA factors (A random, B = 0) and adapters copied from the frozen
  /// key/value projections.
  void reset_conditioning(Rng& rng);
  /// Drops every LoRA factor from the layers and the parameter store.
  void strip_lora();

  void set_residual_hook(ResidualHook hook) { hook_ = std::move(hook); }

  /// Overwrites every parameter from `other` by name (dtype converted).
  void copy_params_from(const ToyUNet& other);
  ToyUNet clone() const;
  /// Deep copy with parameters in `dtype`.
  ToyUNet to(DType dtype) const;

 private:
  struct ResBlock {
    Tensor norm1_gamma, norm1_beta;
    GatedConv2d conv1;
    GatedLinear time_proj;
    Tensor norm2_gamma, norm2_beta;
    GatedConv2d conv2;
    GatedConv2d skip;  // 1x1, only when channels change
  };

  struct CrossAttention {
    GatedLinear q, k, v, o;
  };

  struct Block {
    ResBlock res;
    Tensor attn_gamma, attn_beta;
    AdaptiveAttentionBlock attn;
    GatedLinear attn_out;
    Tensor cross_gamma, cross_beta;
    CrossAttention cross;
  };

  ResBlock make_res(std::size_t c_in, std::size_t c_out, Rng& rng) const;
  Block make_block(std::size_t c_in, Rng& rng) const;
  void register_all();
  template <class F>
  void for_each_gated(F&& f);

  Tensor time_embedding(int t) const;
  Tensor res_forward(const ResBlock& r, const Tensor& x, const Tensor& temb, InputTag tag) const;
  Tensor block_forward(std::size_t site, const Block& b, const Tensor& x, const Tensor& temb, const Tensor& text,
                       const Tensor& ref, InputTag tag, std::vector<Tensor>* capture) const;
  /// Full network. With `capture` set, records each site's input and stops
  /// after the last site (returns an undefined tensor).
  Tensor run(const Tensor& z, int t, const Tensor& text, const ReferenceFeatures* refs, InputTag tag,
             std::vector<Tensor>* capture) const;
  const Tensor& text_or_null(const TextEmbedding* text) const;
  void check_latent(const Tensor& z, const char* what) const;

  ModelConfig cfg_;
  GatedLinear time_in_, time_out_;
  GatedConv2d stem_;
  std::array<Block, kSites> blocks_;
  GatedConv2d downsample_;
  Tensor out_gamma_, out_beta_;
  GatedConv2d out_conv_;
  Tensor null_text_;
  ParamStore store_;
  ResidualHook hook_;
};

}  // namespace gfit
