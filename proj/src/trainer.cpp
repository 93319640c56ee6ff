// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "gfit/error.hpp"
#include "gfit/ops.hpp"

namespace gfit {

// ---------------------------------------------------------------------------
// AdamW

void adamw_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::int64_t step, const AdamWConfig& cfg) {
  if (param.shape() != grad.shape() || param.shape() != m.shape() || param.shape() != v.shape()) {
    throw DimensionError("adamw: state shapes do not match parameter " + shape_str(param.shape()));
  }
  if (step < 1) throw ConfigError("adamw: step must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const std::vector<double> g = grad.values();
  for (double x : g) {
    if (!std::isfinite(x)) throw NumericError("adamw: non-finite gradient");
  }
  dispatch(param.dtype(), [&]<class T>() {
    auto p = param.mutable_data<T>();
    auto mm = m.mutable_data<T>();
    auto vv = v.mutable_data<T>();
    for (std::size_t i = 0; i < p.size(); ++i) {
      double pi = static_cast<double>(p[i]);
      pi -= cfg.lr * cfg.weight_decay * pi;
      const double mi = cfg.beta1 * static_cast<double>(mm[i]) + (1.0 - cfg.beta1) * g[i];
      const double vi = cfg.beta2 * static_cast<double>(vv[i]) + (1.0 - cfg.beta2) * g[i] * g[i];
      mm[i] = static_cast<T>(mi);
      vv[i] = static_cast<T>(vi);
      pi -= cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      p[i] = static_cast<T>(pi);
    }
  });
}

AdamW::AdamW(std::vector<ParamEntry> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.shape(), p.tensor.dtype());
    v_.emplace_back(p.tensor.shape(), p.tensor.dtype());
  }
}

void AdamW::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    adamw_step(p, p.grad(), m_[i], v_[i], step_, cfg_);
  }
}

void AdamW::export_state(std::map<std::string, Tensor>& out) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out["adamw.m." + params_[i].name] = m_[i];
    out["adamw.v." + params_[i].name] = v_[i];
  }
}

void AdamW::import_state(const std::map<std::string, Tensor>& in, std::int64_t step) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (auto [prefix, dst] : {std::pair{"adamw.m.", &m_[i]}, std::pair{"adamw.v.", &v_[i]}}) {
      auto it = in.find(prefix + params_[i].name);
      if (it == in.end()) throw IntegrityError("optimizer state lacks '" + std::string(prefix) + params_[i].name + "'");
      dst->assign(it->second);
    }
  }
  step_ = step;
}

double clip_grad_norm(const std::vector<ParamEntry>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    dispatch(p.tensor.dtype(), [&]<class T>() {
      for (T g : p.tensor.grad_data<T>()) sq += static_cast<double>(g) * static_cast<double>(g);
    });
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > max_norm) {
    const double s = max_norm / (norm + 1e-6);
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      dispatch(t.dtype(), [&]<class T>() {
        for (T& g : t.mutable_grad_data<T>()) g = static_cast<T>(g * s);
      });
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

constexpr const char* kModeNames[] = {"finetuning", "only_lora", "only_adapter", "full"};
constexpr const char* kStageNames[] = {"base", "conditioning"};

}  // namespace

const char* mode_name(AblationMode m) { return kModeNames[static_cast<int>(m)]; }
const char* stage_name(TrainStage s) { return kStageNames[static_cast<int>(s)]; }

std::optional<AblationMode> parse_mode(std::string_view s) {
  for (int i = 0; i < 4; ++i) {
    if (s == kModeNames[i]) return static_cast<AblationMode>(i);
  }
  return std::nullopt;
}

std::optional<TrainStage> parse_stage(std::string_view s) {
  for (int i = 0; i < 2; ++i) {
    if (s == kStageNames[i]) return static_cast<TrainStage>(i);
  }
  return std::nullopt;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
  if (steps < 1) fail("steps must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(cfg_dropout >= 0.0 && cfg_dropout < 1.0)) fail("cfg_dropout must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
  if (log_every < 1) fail("log_every must be >= 1");
  if (caption_tier != "mixed" && !parse_tier(caption_tier)) fail("caption_tier must be fixed, simple, rich or mixed");
  if (data_dir.empty() && data_n < 1) fail("data_n must be >= 1");
  model.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"stage", stage_name(c.stage)},
          {"mode", mode_name(c.mode)},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"cfg_dropout", c.cfg_dropout},
          {"seed", c.seed},
          {"caption_tier", c.caption_tier},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"log_every", c.log_every},
          {"lora_rank", c.model.lora_rank},
          {"model", to_json(c.model)},
          {"data_dir", c.data_dir},
          {"data_n", c.data_n},
          {"data_seed", c.data_seed},
          {"base_checkpoint", c.base_checkpoint}};
}

TrainConfig merge_train_config(const TrainConfig& base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c = base;
  auto num = [](const std::string& key, const nlohmann::json& v) {
    if (!v.is_number()) throw ConfigError("train config: '" + key + "' must be a number");
    return v.get<double>();
  };
  auto count = [](const std::string& key, const nlohmann::json& v) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw ConfigError("train config: '" + key + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  };
  auto str = [](const std::string& key, const nlohmann::json& v) {
    if (!v.is_string()) throw ConfigError("train config: '" + key + "' must be a string");
    return v.get<std::string>();
  };
  // Applied after the nested model block so the flat key wins.
  std::optional<std::size_t> rank;
  for (const auto& [key, v] : j.items()) {
    if (key == "stage") {
      auto s = parse_stage(str(key, v));
      if (!s) throw ConfigError("train config: stage must be 'base' or 'conditioning'");
      c.stage = *s;
    } else if (key == "mode") {
      auto m = parse_mode(str(key, v));
      if (!m) throw ConfigError("train config: unknown mode '" + v.get<std::string>() + "'");
      c.mode = *m;
    } else if (key == "lr") {
      c.lr = num(key, v);
    } else if (key == "batch_size") {
      c.batch_size = count(key, v);
    } else if (key == "steps") {
      c.steps = count(key, v);
    } else if (key == "cfg_dropout") {
      c.cfg_dropout = num(key, v);
    } else if (key == "seed") {
      c.seed = count(key, v);
    } else if (key == "caption_tier") {
      c.caption_tier = str(key, v);
    } else if (key == "weight_decay") {
      c.weight_decay = num(key, v);
    } else if (key == "grad_clip") {
      c.grad_clip = num(key, v);
    } else if (key == "log_every") {
      c.log_every = count(key, v);
    } else if (key == "lora_rank") {
      rank = count(key, v);
    } else if (key == "model") {
      c.model = model_config_from_json(v);
    } else if (key == "data_dir") {
      c.data_dir = str(key, v);
    } else if (key == "data_n") {
      c.data_n = count(key, v);
    } else if (key == "data_seed") {
      c.data_seed = count(key, v);
    } else if (key == "base_checkpoint") {
      c.base_checkpoint = str(key, v);
    } else {
      throw ConfigError("train config: unknown key '" + key + "'");
    }
  }
  if (rank) c.model.lora_rank = *rank;
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j) { return merge_train_config(TrainConfig{}, j); }

// ---------------------------------------------------------------------------
// Parameter accounting

bool group_trainable(ParamGroup g, TrainStage stage, AblationMode mode) {
  if (stage == TrainStage::Base) return g == ParamGroup::FrozenBase;
  switch (mode) {
    case AblationMode::Finetuning:
      return true;
    case AblationMode::Full:
      return g != ParamGroup::FrozenBase;
    case AblationMode::OnlyLora:
      return g == ParamGroup::Lora;
    case AblationMode::OnlyAdapter:
      return g == ParamGroup::Adapter;
  }
  return false;
}

ParamReport report_params(const ToyUNet& model, AblationMode mode, TrainStage stage) {
  const ParamPartition part = enumerate_trainable(model.params());
  ParamReport r;
  r.mode = mode;
  r.stage = stage;
  r.base = part.base_count;
  r.lora = part.lora_count;
  r.adapter = part.adapter_count;
  r.sites = ToyUNet::kSites;
  r.total = part.total();
  if (group_trainable(ParamGroup::FrozenBase, stage, mode)) r.trainable += r.base;
  if (group_trainable(ParamGroup::Lora, stage, mode)) r.trainable += r.lora;
  if (group_trainable(ParamGroup::Adapter, stage, mode)) r.trainable += r.adapter;
  return r;
}

nlohmann::json ParamReport::to_json() const {
  return {{"mode", mode_name(mode)},
          {"stage", stage_name(stage)},
          {"groups",
           {{"frozen_base", {{"count", base}, {"trainable", group_trainable(ParamGroup::FrozenBase, stage, mode)}}},
            {"lora", {{"count", lora}, {"trainable", group_trainable(ParamGroup::Lora, stage, mode)}}},
            {"adapter", {{"count", adapter}, {"trainable", group_trainable(ParamGroup::Adapter, stage, mode)}}}}},
          {"attention_sites", sites},
          {"trainable", trainable},
          {"total", total}};
}

std::string ParamReport::to_text() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "mode %s, stage %s\n", mode_name(mode), stage_name(stage));
  os << line;
  std::snprintf(line, sizeof line, "%-12s %12s  %s\n", "group", "params", "trainable");
  os << line;
  const std::tuple<const char*, std::size_t, ParamGroup> rows[] = {{"frozen_base", base, ParamGroup::FrozenBase},
                                                                   {"lora", lora, ParamGroup::Lora},
                                                                   {"adapter", adapter, ParamGroup::Adapter}};
  for (const auto& [name, n, g] : rows) {
    std::snprintf(line, sizeof line, "%-12s %12zu  %s\n", name, n, group_trainable(g, stage, mode) ? "yes" : "no");
    os << line;
  }
  std::snprintf(line, sizeof line, "%-12s %12zu\n%-12s %12zu\n", "trainable", trainable, "total", total);
  os << line;
  return os.str();
}

// ---------------------------------------------------------------------------
// Training

Trainer::Trainer(ToyUNet& model, TrainConfig cfg, std::vector<GarmentSample> data, bool fresh)
    : model_(model), cfg_(std::move(cfg)), sched_(make_schedule()), rng_(Rng::substream(cfg_.seed, "train")) {
  cfg_.validate();
  if (!(cfg_.model == model_.config())) throw ConfigError("trainer: model config differs from the train config");
  if (data.empty()) throw ConfigError("trainer: empty dataset");
  if (fresh && cfg_.stage == TrainStage::Conditioning) {
    Rng init = Rng::substream(cfg_.seed, "model-init");
    model_.reset_conditioning(init);
  }

  for (auto& e : model_.params().entries()) {
    Tensor t = e.tensor;
    t.zero_grad();
    if (group_trainable(e.group, cfg_.stage, cfg_.mode)) {
      t.set_requires_grad(true);
      trainable_.push_back(e);
    } else {
      t.set_requires_grad(false);
      frozen_.push_back(e);
      frozen_checksums_[e.name] = gfit::checksum(e.tensor);
    }
  }

  const LatentCodec codec(model_.config().codec_patch);
  const TextEncoder text(model_.config().text_dim, model_.config().max_tokens);
  std::map<std::string, std::size_t> seen;
  for (const auto& s : data) {
    Prepared p;
    p.target_latent = codec.encode(s.target);
    p.reference_latent = codec.encode(s.reference);
    for (std::size_t k = 0; k < 3; ++k) {
      auto [it, inserted] = seen.emplace(s.captions[k], text_cache_.size());
      if (inserted) text_cache_.push_back(text.encode(s.captions[k]));
      p.caption_ids[k] = it->second;
    }
    if (p.target_latent.shape() != model_.config().latent_shape()) {
      throw DimensionError("trainer: sample latent " + shape_str(p.target_latent.shape()) +
                           " does not match the model");
    }
    data_.push_back(std::move(p));
  }
  optimizer_ = std::make_unique<AdamW>(trainable_, AdamWConfig{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay});
}

const TextEmbedding& Trainer::text_for(const Prepared& p) {
  std::size_t tier = 0;
  if (cfg_.caption_tier == "mixed") {
    tier = static_cast<std::size_t>(rng_.uniform_int(0, 2));
  } else {
    tier = static_cast<std::size_t>(*parse_tier(cfg_.caption_tier));
  }
  return text_cache_[p.caption_ids[tier]];
}

double Trainer::step() {
  const bool with_refs = cfg_.stage == TrainStage::Conditioning;
  double total = 0.0;
  for (auto& e : trainable_) e.tensor.zero_grad();
  tape().clear();
  for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
    const auto& p = data_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(data_.size()) - 1))];
    const int t = static_cast<int>(rng_.uniform_int(1, sched_.steps));
    const Tensor eps = Tensor::randn(p.target_latent.shape(), rng_);
    const bool drop = rng_.uniform() < cfg_.cfg_dropout;
    const TextEmbedding& text = text_for(p);

    const Tensor z_t = forward_diffuse(p.target_latent, t, eps, sched_);
    Tensor pred;
    if (drop) {
      pred = model_.denoise(z_t, t, nullptr, nullptr);
    } else if (with_refs) {
      const ReferenceFeatures refs = model_.encode_reference(p.reference_latent);
      pred = model_.denoise(z_t, t, &text, &refs);
    } else {
      pred = model_.denoise(z_t, t, &text, nullptr);
    }
    Tensor loss = ops::scale(diffusion_loss(eps, pred), 1.0 / static_cast<double>(cfg_.batch_size));
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("training loss is not finite at step " + std::to_string(step_count() + 1));
    total += value;
    backward(loss);
  }
  clip_grad_norm(trainable_, cfg_.grad_clip);
  optimizer_->step();
  for (auto& e : trainable_) e.tensor.zero_grad();
  verify_frozen();
  losses_.push_back({step_count(), total});
  return total;
}

void Trainer::verify_frozen() const {
  for (const auto& e : frozen_) {
    if (e.tensor.has_grad() || gfit::checksum(e.tensor) != frozen_checksums_.at(e.name)) {
      throw IntegrityError("frozen parameter '" + e.name + "' changed during training");
    }
  }
}

void Trainer::run(const std::function<void(const LossRecord&)>& on_step) {
  while (step_count() < static_cast<std::int64_t>(cfg_.steps)) {
    step();
    if (on_step) on_step(losses_.back());
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = to_json(cfg_);
  ck.step = step_count();
  ck.rng = rng_.state();
  for (const auto& e : model_.params().entries()) ck.tensors[e.name] = e.tensor;
  optimizer_->export_state(ck.tensors);
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  load_model_params(model_, ck);
  optimizer_->import_state(ck.tensors, ck.step);
  rng_.set_state(ck.rng);
  frozen_checksums_.clear();
  for (const auto& e : frozen_) frozen_checksums_[e.name] = gfit::checksum(e.tensor);
}

ToyUNet model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.config.is_object() || !ck.config.contains("model")) {
    throw ConfigError("checkpoint config lacks a 'model' block");
  }
  Rng scratch(0);
  ToyUNet model(model_config_from_json(ck.config.at("model")), scratch);
  load_model_params(model, ck);
  return model;
}

void load_model_params(ToyUNet& model, const Checkpoint& ck, bool allow_missing_conditioning) {
  // Validate everything first so a failure leaves the model untouched.
  std::vector<std::pair<Tensor, const Tensor*>> plan;
  for (auto& e : model.params().entries()) {
    auto it = ck.tensors.find(e.name);
    if (it == ck.tensors.end()) {
      if (allow_missing_conditioning && e.group != ParamGroup::FrozenBase) continue;
      throw IntegrityError("checkpoint lacks parameter '" + e.name + "'");
    }
    if (it->second.shape() != e.tensor.shape()) {
      throw DimensionError("checkpoint parameter '" + e.name + "' has shape " + shape_str(it->second.shape()) +
                           ", model expects " + shape_str(e.tensor.shape()));
    }
    plan.emplace_back(e.tensor, &it->second);
  }
  for (auto& [dst, src] : plan) dst.assign(*src);
}

std::vector<GarmentSample> load_training_data(const TrainConfig& cfg) {
  if (!cfg.data_dir.empty()) return load_corpus(cfg.data_dir);
  return gen_dataset(cfg.data_n, cfg.data_seed);
}

}  // namespace gfit
