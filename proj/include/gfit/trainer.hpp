// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimizer, training configuration, the two-stage training loop and
// parameter-budget reporting.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gfit/checkpoint.hpp"
#include "gfit/dataset.hpp"
#include "gfit/diffusion.hpp"
#include "gfit/image.hpp"
#include "gfit/rng.hpp"
#include "gfit/text.hpp"
#include "gfit/unet.hpp"
#include "json.hpp"

namespace gfit {

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// One decoupled-decay AdamW update of `param` in place. `step` is 1-based
/// and drives bias correction. Throws NumericError on a non-finite gradient.
void adamw_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::int64_t step, const AdamWConfig& cfg);

class AdamW {
 public:
  AdamW(std::vector<ParamEntry> params, AdamWConfig cfg);

  /// Updates every parameter from its accumulated gradient (zero when none).
  void step();
  std::int64_t steps_taken() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  /// Moment tensors keyed "adamw.m.<param>" / "adamw.v.<param>".
  void export_state(std::map<std::string, Tensor>& out) const;
  void import_state(const std::map<std::string, Tensor>& in, std::int64_t step);

 private:
  std::vector<ParamEntry> params_;
  std::vector<Tensor> m_, v_;
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
};

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<ParamEntry>& params, double max_norm);

// ---------------------------------------------------------------------------
// Configuration

enum class AblationMode { Finetuning, OnlyLora, OnlyAdapter, Full };
enum class TrainStage { Base, Conditioning };

const char* mode_name(AblationMode m);
std::optional<AblationMode> parse_mode(std::string_view s);
const char* stage_name(TrainStage s);
std::optional<TrainStage> parse_stage(std::string_view s);

struct TrainConfig {
  TrainStage stage = TrainStage::Conditioning;
  AblationMode mode = AblationMode::Full;
  double lr = 1e-4;
  std::size_t batch_size = 8;
  std::size_t steps = 2000;
  double cfg_dropout = 0.1;
  std::uint64_t seed = 0;
  /// "fixed", "simple", "rich" or "mixed" (uniform over the three per sample).
  std::string caption_tier = "rich";
  double weight_decay = 1e-2;
  double grad_clip = 1.0;
  std::size_t log_every = 50;
  ModelConfig model;
  /// Corpus directory; when empty, `data_n` samples are generated from `data_seed`.
  std::string data_dir;
  std::size_t data_n = 512;
  std::uint64_t data_seed = 1;
  /// Stage-0 checkpoint the conditioning stage starts from.
  std::string base_checkpoint;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep defaults; unknown keys are rejected by name.
TrainConfig train_config_from_json(const nlohmann::json& j);
/// Applies the keys present in `overrides` on top of `base`.
TrainConfig merge_train_config(const TrainConfig& base, const nlohmann::json& overrides);

// ---------------------------------------------------------------------------
// Parameter accounting

struct ParamReport {
  AblationMode mode = AblationMode::Full;
  TrainStage stage = TrainStage::Conditioning;
  std::size_t base = 0;
  std::size_t lora = 0;
  std::size_t adapter = 0;
  std::size_t sites = 0;
  std::size_t trainable = 0;
  std::size_t total = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Which parameter groups a (stage, mode) pair trains.
bool group_trainable(ParamGroup g, TrainStage stage, AblationMode mode);
ParamReport report_params(const ToyUNet& model, AblationMode mode, TrainStage stage = TrainStage::Conditioning);

// ---------------------------------------------------------------------------
// Training

struct LossRecord {
  std::int64_t step = 0;
  double loss = 0.0;
};

class Trainer {
 public:
  /// `model` must outlive the trainer. For the conditioning stage the caller
  /// loads the base weights first; the trainer resets LoRA and adapters
  /// unless `fresh == false` (resume).
  Trainer(ToyUNet& model, TrainConfig cfg, std::vector<GarmentSample> data, bool fresh = true);

  /// One optimizer step over a sampled batch. Returns the mean batch loss.
  double step();
  /// Runs until `config().steps`; `on_step` sees every record.
  void run(const std::function<void(const LossRecord&)>& on_step = {});

  std::int64_t step_count() const { return optimizer_->steps_taken(); }
  const std::vector<LossRecord>& losses() const { return losses_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<ParamEntry>& trainable() const { return trainable_; }

  Checkpoint checkpoint() const;
  /// Restores weights, optimizer moments, step and RNG from `ck`.
  void restore(const Checkpoint& ck);

 private:
  struct Prepared {
    Tensor target_latent;
    Tensor reference_latent;
    std::array<std::size_t, 3> caption_ids;  // into text_cache_
  };

  const TextEmbedding& text_for(const Prepared& p);
  void verify_frozen() const;

  ToyUNet& model_;
  TrainConfig cfg_;
  std::vector<Prepared> data_;
  std::vector<TextEmbedding> text_cache_;
  NoiseSchedule sched_;
  Rng rng_;
  std::vector<ParamEntry> trainable_;
  std::vector<ParamEntry> frozen_;
  std::unordered_map<std::string, std::uint64_t> frozen_checksums_;
  std::unique_ptr<AdamW> optimizer_;
  std::vector<LossRecord> losses_;
};

/// Builds a model from a checkpoint's config and copies its parameters.
ToyUNet model_from_checkpoint(const Checkpoint& ck);
/// Copies every model parameter present in `ck` (missing names are an error
/// unless `allow_missing` lists their group).
void load_model_params(ToyUNet& model, const Checkpoint& ck, bool allow_missing_conditioning = false);
/// Loads the training dataset a config points at.
std::vector<GarmentSample> load_training_data(const TrainConfig& cfg);

}  // namespace gfit
