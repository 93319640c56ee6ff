// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/pipeline.hpp"

#include "gfit/rng.hpp"

namespace gfit {

Tensor initial_noise(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "sample");
  return Tensor::randn(cfg.latent_shape(), rng);
}

Generation generate(const ToyUNet& model, const std::string& text_raw, const Image& reference,
                    const GenerateOptions& options, std::uint64_t seed) {
  NoGradGuard no_grad;
  const ModelConfig& cfg = model.config();
  Generation out;
  out.prompt = apply_enrichment(options.enrich, text_raw, reference, options.endpoint);

  const TextEncoder encoder(cfg.text_dim, cfg.max_tokens);
  const TextEmbedding text = encoder.encode(out.prompt.text);
  const LatentCodec codec(cfg.codec_patch);
  ReferenceFeatures refs;
  if (options.use_reference) refs = model.encode_reference(codec.encode(reference));
  const ReferenceFeatures* refs_ptr = options.use_reference ? &refs : nullptr;

  EpsModel eps = [&](const Tensor& z, int t, bool conditional) {
    return conditional ? model.denoise(z, t, &text, refs_ptr) : model.denoise(z, t, nullptr, nullptr);
  };
  const NoiseSchedule sched = make_schedule();
  Tensor z0 = ddim_sample(eps, initial_noise(cfg, seed), options.guidance, sched, seed);
  out.image = codec.decode(z0);
  return out;
}

}  // namespace gfit
