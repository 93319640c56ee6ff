// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/unet.hpp"

#include <cmath>
#include <set>

#include "gfit/diffusion.hpp"
#include "gfit/error.hpp"
#include "gfit/ops.hpp"
#include "gfit/rng.hpp"

namespace gfit {

namespace {

constexpr std::size_t kDown1 = 0, kDown2 = 1, kMid = 2, kUp2 = 3, kUp1 = 4;

std::pair<Tensor, Tensor> norm_params(std::size_t c) { return {Tensor::full({c}, 1.0), Tensor::zeros({c})}; }

const NoiseSchedule& default_schedule() {
  static const NoiseSchedule s = make_schedule();
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (codec_patch == 0 || stem_patch == 0 || image_size == 0) fail("sizes must be positive");
  if (image_size % codec_patch != 0) fail("image_size must be divisible by codec_patch");
  const std::size_t inner = latent_size();
  if (inner % (2 * stem_patch) != 0) fail("latent size must be divisible by 2*stem_patch");
  if (channels == 0 || heads == 0 || channels % heads != 0) fail("heads must divide channels");
  if (groups == 0 || channels % groups != 0) fail("groups must divide channels");
  if (text_dim == 0 || text_dim % 2 != 0) fail("text_dim must be positive and even");
  if (channels % 2 != 0) fail("channels must be even");
  if (time_hidden == 0 || max_tokens == 0) fail("time_hidden and max_tokens must be positive");
  if (lora_rank > channels) fail("lora_rank must not exceed channels");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size}, {"codec_patch", c.codec_patch}, {"stem_patch", c.stem_patch},
          {"channels", c.channels},     {"heads", c.heads},             {"groups", c.groups},
          {"lora_rank", c.lora_rank},   {"time_hidden", c.time_hidden}, {"text_dim", c.text_dim},
          {"max_tokens", c.max_tokens}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  const std::pair<const char*, std::size_t*> fields[] = {
      {"image_size", &c.image_size}, {"codec_patch", &c.codec_patch}, {"stem_patch", &c.stem_patch},
      {"channels", &c.channels},     {"heads", &c.heads},             {"groups", &c.groups},
      {"lora_rank", &c.lora_rank},   {"time_hidden", &c.time_hidden}, {"text_dim", &c.text_dim},
      {"max_tokens", &c.max_tokens}};
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& [name, dst] : fields) {
      if (key != name) continue;
      if (!value.is_number_unsigned()) throw ConfigError("model config: '" + key + "' must be a non-negative integer");
      *dst = value.get<std::size_t>();
      known = true;
    }
    if (!known) throw ConfigError("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

const std::array<const char*, ToyUNet::kSites>& ToyUNet::site_names() {
  static const std::array<const char*, kSites> names = {"down1", "down2", "mid", "up2", "up1"};
  return names;
}

ToyUNet::ResBlock ToyUNet::make_res(std::size_t c_in, std::size_t c_out, Rng& rng) const {
  ResBlock r;
  std::tie(r.norm1_gamma, r.norm1_beta) = norm_params(c_in);
  r.conv1 = GatedConv2d(c_in, c_out, 3, 1, cfg_.lora_rank, rng);
  r.time_proj = GatedLinear(cfg_.channels, c_out, true, 0, rng);
  std::tie(r.norm2_gamma, r.norm2_beta) = norm_params(c_out);
  r.conv2 = GatedConv2d(c_out, c_out, 3, 1, cfg_.lora_rank, rng);
  if (c_in != c_out) r.skip = GatedConv2d(c_in, c_out, 1, 1, 0, rng);
  return r;
}

ToyUNet::Block ToyUNet::make_block(std::size_t c_in, Rng& rng) const {
  const std::size_t c = cfg_.channels;
  Block b;
  b.res = make_res(c_in, c, rng);
  std::tie(b.attn_gamma, b.attn_beta) = norm_params(c);
  b.attn = AdaptiveAttentionBlock(c, cfg_.heads, cfg_.lora_rank, rng);
  b.attn_out = GatedLinear(c, c, true, cfg_.lora_rank, rng);
  std::tie(b.cross_gamma, b.cross_beta) = norm_params(c);
  b.cross.q = GatedLinear(c, c, false, 0, rng);
  b.cross.k = GatedLinear(cfg_.text_dim, c, false, 0, rng);
  b.cross.v = GatedLinear(cfg_.text_dim, c, false, 0, rng);
  b.cross.o = GatedLinear(c, c, true, 0, rng);
  return b;
}

ToyUNet::ToyUNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t c = cfg_.channels;
  const std::size_t stem_in = cfg_.latent_channels() * cfg_.stem_patch * cfg_.stem_patch;
  time_in_ = GatedLinear(c, cfg_.time_hidden, true, 0, rng);
  time_out_ = GatedLinear(cfg_.time_hidden, c, true, 0, rng);
  stem_ = GatedConv2d(stem_in, c, 3, 1, 0, rng);
  blocks_[kDown1] = make_block(c, rng);
  downsample_ = GatedConv2d(c, c, 3, 2, 0, rng);
  blocks_[kDown2] = make_block(c, rng);
  blocks_[kMid] = make_block(c, rng);
  blocks_[kUp2] = make_block(2 * c, rng);
  blocks_[kUp1] = make_block(2 * c, rng);
  std::tie(out_gamma_, out_beta_) = norm_params(c);
  out_conv_ = GatedConv2d(c, stem_in, 3, 1, 0, rng);
  null_text_ = Tensor::randn({1, cfg_.text_dim}, rng);
  register_all();
}

void ToyUNet::register_all() {
  store_ = ParamStore();
  auto base = [&](const std::string& n, const Tensor& t) { store_.add(n, ParamGroup::FrozenBase, t); };
  time_in_.register_params(store_, "time.in");
  time_out_.register_params(store_, "time.out");
  stem_.register_params(store_, "stem");
  for (std::size_t i = 0; i < kSites; ++i) {
    const std::string p = site_names()[i];
    const Block& b = blocks_[i];
    base(p + ".res.norm1.gamma", b.res.norm1_gamma);
    base(p + ".res.norm1.beta", b.res.norm1_beta);
    b.res.conv1.register_params(store_, p + ".res.conv1");
    b.res.time_proj.register_params(store_, p + ".res.time_proj");
    base(p + ".res.norm2.gamma", b.res.norm2_gamma);
    base(p + ".res.norm2.beta", b.res.norm2_beta);
    b.res.conv2.register_params(store_, p + ".res.conv2");
    if (b.res.skip.weight.defined()) b.res.skip.register_params(store_, p + ".res.skip");
    base(p + ".attn.norm.gamma", b.attn_gamma);
    base(p + ".attn.norm.beta", b.attn_beta);
    b.attn.register_params(store_, p + ".attn");
    b.attn_out.register_params(store_, p + ".attn.out");
    base(p + ".cross.norm.gamma", b.cross_gamma);
    base(p + ".cross.norm.beta", b.cross_beta);
    b.cross.q.register_params(store_, p + ".cross.q");
    b.cross.k.register_params(store_, p + ".cross.k");
    b.cross.v.register_params(store_, p + ".cross.v");
    b.cross.o.register_params(store_, p + ".cross.o");
    if (i == kDown1) downsample_.register_params(store_, "downsample");
  }
  base("out.norm.gamma", out_gamma_);
  base("out.norm.beta", out_beta_);
  out_conv_.register_params(store_, "out.conv");
  base("null_text", null_text_);
  enumerate_trainable(store_);  // rejects aliasing
}

template <class F>
void ToyUNet::for_each_gated(F&& f) {
  for (auto& b : blocks_) {
    f(b.res.conv1);
    f(b.res.conv2);
    f(b.attn.q);
    f(b.attn.k);
    f(b.attn.v);
    f(b.attn_out);
  }
}

void ToyUNet::reset_conditioning(Rng& rng) {
  for_each_gated([&](auto& layer) { layer.reset_lora(rng); });
  for (auto& b : blocks_) b.attn.reset_adapters();
}

void ToyUNet::strip_lora() {
  for_each_gated([](auto& layer) { layer.remove_lora(); });
  register_all();
}

void ToyUNet::copy_params_from(const ToyUNet& other) {
  if (!(other.cfg_ == cfg_)) throw ConfigError("copy_params_from: model configs differ");
  for (auto& e : store_.entries()) {
    const ParamEntry* src = other.store_.find(e.name);
    if (src == nullptr) throw IntegrityError("copy_params_from: source lacks '" + e.name + "'");
    e.tensor.assign(src->tensor);
  }
}

ToyUNet ToyUNet::clone() const { return to(store_.entries().front().tensor.dtype()); }

ToyUNet ToyUNet::to(DType dtype) const {
  DTypeScope scope(dtype);
  Rng scratch(0);
  ToyUNet copy(cfg_, scratch);
  bool has_lora = store_.count(ParamGroup::Lora) > 0;
  if (!has_lora) copy.strip_lora();
  copy.copy_params_from(*this);
  copy.hook_ = hook_;
  return copy;
}

// ---------------------------------------------------------------------------

void ToyUNet::check_latent(const Tensor& z, const char* what) const {
  if (z.shape() != cfg_.latent_shape()) {
    throw DimensionError(std::string(what) + ": latent " + shape_str(z.shape()) + " does not match configured " +
                         shape_str(cfg_.latent_shape()));
  }
}

Tensor ToyUNet::time_embedding(int t) const {
  const std::size_t c = cfg_.channels, half = c / 2;
  std::vector<double> v(c);
  for (std::size_t j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
    v[j] = std::sin(t * freq);
    v[half + j] = std::cos(t * freq);
  }
  Tensor s = Tensor::from_values({1, c}, v, time_in_.weight.dtype());
  Tensor h = ops::silu(time_in_.forward(s, InputTag::LatentNoise));
  return ops::silu(time_out_.forward(h, InputTag::LatentNoise));
}

Tensor ToyUNet::res_forward(const ResBlock& r, const Tensor& x, const Tensor& temb, InputTag tag) const {
  Tensor a = ops::silu(ops::group_norm(x, r.norm1_gamma, r.norm1_beta, cfg_.groups));
  a = r.conv1.forward(a, tag);
  Tensor tb = r.time_proj.forward(temb, InputTag::LatentNoise);
  a = ops::add_channel_bias(a, ops::reshape(tb, {tb.numel()}));
  a = ops::silu(ops::group_norm(a, r.norm2_gamma, r.norm2_beta, cfg_.groups));
  a = r.conv2.forward(a, tag);
  Tensor skip = r.skip.weight.defined() ? r.skip.forward(x, InputTag::LatentNoise) : x;
  return ops::add(skip, a);
}

Tensor ToyUNet::block_forward(std::size_t site, const Block& b, const Tensor& x, const Tensor& temb,
                              const Tensor& text, const Tensor& ref, InputTag tag,
                              std::vector<Tensor>* capture) const {
  Tensor h = res_forward(b.res, x, temb, tag);
  const std::size_t hh = h.dim(1), ww = h.dim(2);
  Tensor tokens = ops::to_tokens(ops::group_norm(h, b.attn_gamma, b.attn_beta, cfg_.groups));
  if (capture != nullptr) capture->push_back(tokens);
  Tensor a = b.attn_out.forward(adaptive_attention(b.attn, tokens, ref, tag), tag);
  h = ops::add(h, ops::from_tokens(a, hh, ww));
  if (hook_) {
    Tensor extra = hook_(site, h);
    if (extra.defined()) h = ops::add(h, extra);
  }
  Tensor q_in = ops::to_tokens(ops::group_norm(h, b.cross_gamma, b.cross_beta, cfg_.groups));
  Tensor q = b.cross.q.forward(q_in, InputTag::LatentNoise);
  Tensor k = b.cross.k.forward(text, InputTag::LatentNoise);
  Tensor v = b.cross.v.forward(text, InputTag::LatentNoise);
  Tensor c = b.cross.o.forward(ops::attention(q, k, v, cfg_.heads), InputTag::LatentNoise);
  return ops::add(h, ops::from_tokens(c, hh, ww));
}

Tensor ToyUNet::run(const Tensor& z, int t, const Tensor& text, const ReferenceFeatures* refs, InputTag tag,
                    std::vector<Tensor>* capture) const {
  auto ref = [&](std::size_t i) { return refs != nullptr ? refs->sites[i] : Tensor(); };
  const Tensor temb = time_embedding(t);
  Tensor h = stem_.forward(ops::space_to_depth(z, cfg_.stem_patch), InputTag::LatentNoise);
  h = block_forward(kDown1, blocks_[kDown1], h, temb, text, ref(kDown1), tag, capture);
  const Tensor skip1 = h;
  h = downsample_.forward(h, InputTag::LatentNoise);
  h = block_forward(kDown2, blocks_[kDown2], h, temb, text, ref(kDown2), tag, capture);
  const Tensor skip2 = h;
  h = block_forward(kMid, blocks_[kMid], h, temb, text, ref(kMid), tag, capture);
  h = block_forward(kUp2, blocks_[kUp2], ops::concat({h, skip2}, 0), temb, text, ref(kUp2), tag, capture);
  h = ops::concat({ops::upsample_nearest2x(h), skip1}, 0);
  h = block_forward(kUp1, blocks_[kUp1], h, temb, text, ref(kUp1), tag, capture);
  if (capture != nullptr) return Tensor();
  h = ops::silu(ops::group_norm(h, out_gamma_, out_beta_, cfg_.groups));
  const Tensor v = ops::depth_to_space(out_conv_.forward(h, InputTag::LatentNoise), cfg_.stem_patch);
  // The network body predicts velocity; the noise estimate is
  // sqrt(1 - a) z + sqrt(a) v. Errors in v reach the implied clean latent
  // unamplified, where a direct noise head is blown up by sqrt((1 - a) / a).
  const double a = default_schedule().alpha_bar_at(t);
  return ops::add(ops::scale(z, std::sqrt(1.0 - a)), ops::scale(v, std::sqrt(a)));
}

const Tensor& ToyUNet::text_or_null(const TextEmbedding* text) const {
  if (text == nullptr) return null_text_;
  const Tensor& t = text->tokens;
  if (!t.defined() || t.rank() != 2 || t.dim(1) != cfg_.text_dim || t.dim(0) == 0) {
    throw DimensionError("text embedding " + (t.defined() ? shape_str(t.shape()) : std::string("undefined")) +
                         " does not match text_dim " + std::to_string(cfg_.text_dim));
  }
  return t;
}

ReferenceFeatures ToyUNet::encode_reference(const Tensor& ref_latent) const {
  check_latent(ref_latent, "encode_reference");
  ReferenceFeatures f;
  run(ref_latent, 0, null_text_, nullptr, InputTag::ReferenceFeature, &f.sites);
  return f;
}

std::vector<Tensor> ToyUNet::capture_sites(const Tensor& z_t, int t, const TextEmbedding* text) const {
  check_latent(z_t, "capture_sites");
  std::vector<Tensor> out;
  run(z_t, t, text_or_null(text), nullptr, InputTag::LatentNoise, &out);
  return out;
}

Tensor ToyUNet::denoise(const Tensor& z_t, int t, const TextEmbedding* text, const ReferenceFeatures* refs) const {
  check_latent(z_t, "denoise");
  if (refs != nullptr) {
    if (refs->sites.size() != kSites) {
      throw ContractError("denoise: reference feature set has " + std::to_string(refs->sites.size()) +
                          " entries, the model has " + std::to_string(kSites) + " sites");
    }
    for (std::size_t i = 0; i < kSites; ++i) {
      const Tensor& r = refs->sites[i];
      if (!r.defined() || r.rank() != 2 || r.dim(1) != cfg_.channels) {
        throw ContractError(std::string("denoise: reference feature for site ") + site_names()[i] +
                            " is missing or has the wrong width");
      }
    }
  }
  return run(z_t, t, text_or_null(text), refs, InputTag::LatentNoise, nullptr);
}

Tensor ToyUNet::conv_trunk(const Tensor& z, int t) const {
  check_latent(z, "conv_trunk");
  Tensor h = stem_.forward(ops::space_to_depth(z, cfg_.stem_patch), InputTag::LatentNoise);
  return res_forward(blocks_[kDown1].res, h, time_embedding(t), InputTag::LatentNoise);
}

}  // namespace gfit
