// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/conditioning.hpp"

#include <cmath>

#include "gfit/error.hpp"
#include "gfit/ops.hpp"
#include "gfit/rng.hpp"

namespace gfit {

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

}  // namespace

// ---------------------------------------------------------------------------

GatedLinear::GatedLinear(std::size_t d_in, std::size_t d_out, bool with_bias, std::size_t rank, Rng& rng) {
  weight = kaiming_uniform({d_in, d_out}, d_in, rng);
  if (with_bias) bias = kaiming_uniform({d_out}, d_in, rng);
  if (rank > 0) {
    lora.a = Tensor({rank, d_in});
    lora.b = Tensor({d_out, rank});
    reset_lora(rng);
  }
}

void GatedLinear::reset_lora(Rng& rng) {
  if (!lora.enabled()) return;
  lora.a.assign(kaiming_uniform(lora.a.shape(), d_in(), rng));
  lora.b.assign(Tensor::zeros(lora.b.shape(), lora.b.dtype()));
}

Tensor GatedLinear::forward(const Tensor& x, InputTag tag) const {
  if (x.rank() != 2 || x.dim(1) != d_in()) {
    throw DimensionError("gated linear: input " + shape_str(x.shape()) + " for weight " + shape_str(weight.shape()));
  }
  Tensor y = ops::matmul(x, weight);
  if (bias.defined()) y = ops::add_row_bias(y, bias);
  if (tag == InputTag::ReferenceFeature && lora.enabled()) {
    y = ops::add(y, ops::matmul_nt(ops::matmul_nt(x, lora.a), lora.b));
  }
  return y;
}

void GatedLinear::register_params(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".weight", ParamGroup::FrozenBase, weight);
  if (bias.defined()) store.add(prefix + ".bias", ParamGroup::FrozenBase, bias);
  if (lora.enabled()) {
    store.add(prefix + ".lora_a", ParamGroup::Lora, lora.a);
    store.add(prefix + ".lora_b", ParamGroup::Lora, lora.b);
  }
}

// ---------------------------------------------------------------------------

GatedConv2d::GatedConv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride_,
                         std::size_t rank, Rng& rng)
    : stride(stride_), padding((kernel - 1) / 2) {
  if (kernel % 2 == 0) throw ConfigError("gated conv: kernel size must be odd");
  const std::size_t fan_in = c_in * kernel * kernel;
  weight = kaiming_uniform({c_out, c_in, kernel, kernel}, fan_in, rng);
  bias = kaiming_uniform({c_out}, fan_in, rng);
  if (rank > 0) {
    lora.a = Tensor({rank, c_in, kernel, kernel});
    lora.b = Tensor({c_out, rank, 1, 1});
    reset_lora(rng);
  }
}

void GatedConv2d::reset_lora(Rng& rng) {
  if (!lora.enabled()) return;
  const std::size_t fan_in = weight.dim(1) * weight.dim(2) * weight.dim(3);
  lora.a.assign(kaiming_uniform(lora.a.shape(), fan_in, rng));
  lora.b.assign(Tensor::zeros(lora.b.shape(), lora.b.dtype()));
}

Tensor GatedConv2d::forward(const Tensor& x, InputTag tag) const {
  Tensor y = ops::conv2d(x, weight, bias, stride, padding);
  if (tag == InputTag::ReferenceFeature && lora.enabled()) {
    Tensor low = ops::conv2d(x, lora.a, Tensor(), stride, padding);
    y = ops::add(y, ops::conv2d(low, lora.b, Tensor(), 1, 0));
  }
  return y;
}

void GatedConv2d::register_params(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".weight", ParamGroup::FrozenBase, weight);
  store.add(prefix + ".bias", ParamGroup::FrozenBase, bias);
  if (lora.enabled()) {
    store.add(prefix + ".lora_a", ParamGroup::Lora, lora.a);
    store.add(prefix + ".lora_b", ParamGroup::Lora, lora.b);
  }
}

// ---------------------------------------------------------------------------

AdaptiveAttentionBlock::AdaptiveAttentionBlock(std::size_t d_model, std::size_t heads_, std::size_t rank, Rng& rng)
    : q(d_model, d_model, false, rank, rng),
      k(d_model, d_model, false, rank, rng),
      v(d_model, d_model, false, rank, rng),
      heads(heads_) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("adaptive attention: " + std::to_string(heads) + " heads do not divide d_model " +
                      std::to_string(d_model));
  }
  k_adapter = k.weight.clone();
  v_adapter = v.weight.clone();
}

void AdaptiveAttentionBlock::reset_adapters() {
  k_adapter.assign(k.weight);
  v_adapter.assign(v.weight);
}

void AdaptiveAttentionBlock::register_params(ParamStore& store, const std::string& prefix) const {
  q.register_params(store, prefix + ".q");
  k.register_params(store, prefix + ".k");
  v.register_params(store, prefix + ".v");
  store.add(prefix + ".k_adapter", ParamGroup::Adapter, k_adapter);
  store.add(prefix + ".v_adapter", ParamGroup::Adapter, v_adapter);
}

Tensor adaptive_attention(const AdaptiveAttentionBlock& block, const Tensor& hidden, const Tensor& ref,
                          InputTag tag) {
  const std::size_t d = block.d_model();
  if (hidden.rank() != 2 || hidden.dim(1) != d) {
    throw DimensionError("adaptive attention: hidden " + shape_str(hidden.shape()) + ", d_model " + std::to_string(d));
  }
  Tensor q = block.q.forward(hidden, tag);
  Tensor k = block.k.forward(hidden, tag);
  Tensor v = block.v.forward(hidden, tag);
  Tensor out = ops::attention(q, k, v, block.heads);
  if (!ref.defined()) return out;
  if (ref.rank() != 2 || ref.dim(1) != d) {
    throw DimensionError("adaptive attention: reference features " + shape_str(ref.shape()) + " do not match d_model " +
                         std::to_string(d));
  }
  Tensor k_ref = ops::matmul(ref, block.k_adapter);
  Tensor v_ref = ops::matmul(ref, block.v_adapter);
  return ops::add(out, ops::attention(q, k_ref, v_ref, block.heads));
}

}  // namespace gfit
