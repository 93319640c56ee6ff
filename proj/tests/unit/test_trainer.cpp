// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gfit/checkpoint.hpp"
#include "gfit/dataset.hpp"
#include "gfit/diffusion.hpp"
#include "gfit/error.hpp"
#include "gfit/ops.hpp"
#include "gfit/rng.hpp"
#include "gfit/text.hpp"
#include "gfit/trainer.hpp"

using namespace gfit;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.image_size = 32;
  c.channels = 16;
  c.heads = 2;
  c.groups = 4;
  c.lora_rank = 2;
  c.time_hidden = 16;
  c.text_dim = 8;
  c.max_tokens = 12;
  return c;
}

TrainConfig small_train(TrainStage stage, AblationMode mode, std::size_t steps) {
  TrainConfig t;
  t.stage = stage;
  t.mode = mode;
  t.steps = steps;
  t.batch_size = 2;
  t.model = small_config();
  t.seed = 3;
  return t;
}

std::vector<double> loss_values(const std::vector<LossRecord>& l) {
  std::vector<double> v;
  for (const auto& r : l) v.push_back(r.loss);
  return v;
}

std::uint64_t group_checksum(const ToyUNet& m, ParamGroup g) { return m.params().checksum(g); }

}  // namespace

// ---------------------------------------------------------------------------
// AdamW

TEST(AdamW, ZeroGradientZeroDecayLeavesParams) {
  Tensor p = Tensor::from_values({3}, {1.0, -2.0, 0.5}, DType::F64);
  Tensor m = Tensor::zeros({3}, DType::F64), v = Tensor::zeros({3}, DType::F64);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(p, Tensor::zeros({3}, DType::F64), m, v, 1, cfg);
  EXPECT_EQ(p.values(), (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(AdamW, ScriptedScalarTrace) {
  // Reference recurrence written out for a scalar with gradients 1, -0.5, 2.
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  Tensor p = Tensor::scalar(0.0, DType::F64), m = Tensor::scalar(0.0, DType::F64), v = Tensor::scalar(0.0, DType::F64);
  double rp = 0, rm = 0, rv = 0;
  const double grads[] = {1.0, -0.5, 2.0};
  for (int k = 1; k <= 3; ++k) {
    const double g = grads[k - 1];
    adamw_step(p, Tensor::scalar(g, DType::F64), m, v, k, cfg);
    rm = 0.9 * rm + 0.1 * g;
    rv = 0.999 * rv + 0.001 * g * g;
    const double mh = rm / (1 - std::pow(0.9, k));
    const double vh = rv / (1 - std::pow(0.999, k));
    rp -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.item(), rp, 1e-15) << "step " << k;
    if (k == 1) EXPECT_NEAR(p.item(), -0.1, 1e-8);
  }
}

TEST(AdamW, DecoupledDecayShrinksParam) {
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  Tensor p = Tensor::scalar(2.0, DType::F64), m = Tensor::scalar(0.0, DType::F64), v = Tensor::scalar(0.0, DType::F64);
  adamw_step(p, Tensor::scalar(0.0, DType::F64), m, v, 1, cfg);
  EXPECT_DOUBLE_EQ(p.item(), 2.0 * (1 - 0.01 * 0.1));
}

TEST(AdamW, NonFiniteGradientAborts) {
  Tensor p = Tensor::scalar(1.0), m = Tensor::scalar(0.0), v = Tensor::scalar(0.0);
  EXPECT_THROW(adamw_step(p, Tensor::scalar(std::nan("")), m, v, 1, {}), NumericError);
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  Tensor a = Tensor::zeros({2}, DType::F64);
  a.set_requires_grad(true);
  Tensor loss = ops::sum(ops::mul(a, Tensor::from_values({2}, {3.0, 4.0}, DType::F64)));
  backward(loss);
  std::vector<ParamEntry> ps = {{"a", ParamGroup::Lora, a}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  // scale = max_norm / (norm + 1e-6)
  EXPECT_NEAR(a.grad().at(0), 3.0 / (5.0 + 1e-6), 1e-15);
  EXPECT_NEAR(a.grad().at(1), 4.0 / (5.0 + 1e-6), 1e-15);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  TrainConfig t = small_train(TrainStage::Conditioning, AblationMode::OnlyLora, 7);
  const TrainConfig back = train_config_from_json(to_json(t));
  EXPECT_EQ(to_json(back), to_json(t));
  try {
    train_config_from_json({{"learning_rate", 0.1}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  EXPECT_THROW(train_config_from_json({{"lr", -1.0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"cfg_dropout", 1.0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"mode", "everything"}}), ConfigError);
  const TrainConfig merged = merge_train_config(t, {{"steps", 11}, {"lora_rank", 4}});
  EXPECT_EQ(merged.steps, 11u);
  EXPECT_EQ(merged.model.lora_rank, 4u);
  EXPECT_EQ(merged.mode, AblationMode::OnlyLora);
}

// ---------------------------------------------------------------------------
// Parameter accounting

TEST(ReportParams, AdditivityAndOrdering) {
  Rng rng(1);
  const ToyUNet m(ModelConfig{}, rng);
  const auto full = report_params(m, AblationMode::Full);
  const auto lora = report_params(m, AblationMode::OnlyLora);
  const auto adapter = report_params(m, AblationMode::OnlyAdapter);
  const auto finetune = report_params(m, AblationMode::Finetuning);
  EXPECT_EQ(lora.trainable + adapter.trainable, full.trainable);
  EXPECT_EQ(full.trainable, full.lora + full.adapter);
  EXPECT_GT(finetune.trainable, full.trainable);
  EXPECT_GT(full.trainable, lora.trainable);
  EXPECT_GT(lora.trainable, adapter.trainable);
  EXPECT_EQ(adapter.trainable, 2u * 64 * 64 * ToyUNet::kSites);
  const auto j = full.to_json();
  EXPECT_EQ(j.at("trainable"), full.trainable);
  EXPECT_NE(full.to_text().find("adapter"), std::string::npos);
  EXPECT_EQ(report_params(m, AblationMode::Full, TrainStage::Base).trainable, full.base);
}

// ---------------------------------------------------------------------------
// Training

TEST(Trainer, ModesTouchOnlyTheirGroups) {
  const auto data = gen_dataset(8, 2, {});
  for (AblationMode mode : {AblationMode::OnlyLora, AblationMode::OnlyAdapter, AblationMode::Full}) {
    Rng rng(4);
    ToyUNet m(small_config(), rng);
    Trainer t(m, small_train(TrainStage::Conditioning, mode, 3), data);
    const auto base = group_checksum(m, ParamGroup::FrozenBase);
    const auto lora = group_checksum(m, ParamGroup::Lora);
    const auto adapter = group_checksum(m, ParamGroup::Adapter);
    t.run();
    EXPECT_EQ(group_checksum(m, ParamGroup::FrozenBase), base) << mode_name(mode);
    EXPECT_EQ(group_checksum(m, ParamGroup::Lora) == lora, mode == AblationMode::OnlyAdapter) << mode_name(mode);
    EXPECT_EQ(group_checksum(m, ParamGroup::Adapter) == adapter, mode == AblationMode::OnlyLora) << mode_name(mode);
    for (const auto& e : m.params().entries()) {
      if (!group_trainable(e.group, TrainStage::Conditioning, mode)) EXPECT_FALSE(e.tensor.has_grad()) << e.name;
    }
    EXPECT_EQ(t.trainable().size() > 0, true);
  }
}

TEST(Trainer, FullModeTrainableCountIsLoraPlusAdapter) {
  Rng rng(5);
  ToyUNet m(small_config(), rng);
  Trainer t(m, small_train(TrainStage::Conditioning, AblationMode::Full, 1), gen_dataset(4, 1, {}));
  std::size_t n = 0;
  for (const auto& e : t.trainable()) n += e.tensor.numel();
  const auto part = enumerate_trainable(m.params());
  EXPECT_EQ(n, part.lora_count + part.adapter_count);
}

TEST(Trainer, FrozenWeightChangeIsAnIntegrityFailure) {
  Rng rng(6);
  ToyUNet m(small_config(), rng);
  Trainer t(m, small_train(TrainStage::Conditioning, AblationMode::Full, 2), gen_dataset(4, 1, {}));
  t.step();
  Tensor w = m.params().find("stem.weight")->tensor;
  w.mutable_data<float>()[0] += 1.0f;
  EXPECT_THROW(t.step(), IntegrityError);
}

TEST(Trainer, DeterministicLossTrace) {
  const auto data = gen_dataset(8, 2, {});
  auto trace = [&] {
    Rng rng(7);
    ToyUNet m(small_config(), rng);
    Trainer t(m, small_train(TrainStage::Base, AblationMode::Full, 4), data);
    t.run();
    return std::make_pair(loss_values(t.losses()), m.params().checksum());
  };
  const auto a = trace();
  const auto b = trace();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Trainer, ResumeReproducesUninterruptedTrace) {
  const auto data = gen_dataset(8, 2, {});
  const TrainConfig cfg = small_train(TrainStage::Conditioning, AblationMode::Full, 6);
  Rng rng(8);
  const ToyUNet init(small_config(), rng);

  ToyUNet straight = init.clone();
  Trainer full(straight, cfg, data);
  full.run();

  ToyUNet first = init.clone();
  Trainer part(first, cfg, data);
  for (int i = 0; i < 3; ++i) part.step();
  const std::string bytes = serialize_checkpoint(part.checkpoint());

  const Checkpoint ck = deserialize_checkpoint(bytes);
  ToyUNet resumed = model_from_checkpoint(ck);
  Trainer rest(resumed, train_config_from_json(ck.config), data, false);
  rest.restore(ck);
  rest.run();

  std::vector<double> joined = loss_values(part.losses());
  for (double l : loss_values(rest.losses())) joined.push_back(l);
  EXPECT_EQ(joined, loss_values(full.losses()));
  EXPECT_EQ(resumed.params().checksum(), straight.params().checksum());
}

TEST(Trainer, TinyStepsDescendOnTheirOwnBatch) {
  const auto data = gen_dataset(4, 9, {});
  const LatentCodec codec;
  const TextEncoder enc(small_config().text_dim, small_config().max_tokens);
  const NoiseSchedule sched = make_schedule();
  int descended = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    ToyUNet m = ToyUNet(small_config(), rng).to(DType::F64);
    for (auto& e : m.params().entries()) {
      if (e.group == ParamGroup::Lora) e.tensor.assign(Tensor::randn(e.tensor.shape(), rng, 0.1));
    }
    const auto& s = data[seed % data.size()];
    const Tensor z0 = codec.encode(s.target, DType::F64);
    const Tensor eps = Tensor::randn(z0.shape(), rng, 1.0, DType::F64);
    const int t = static_cast<int>(rng.uniform_int(1, 1000));
    const auto text = enc.encode(s.caption_for(CaptionTier::Rich), DType::F64);
    std::vector<ParamEntry> trainable;
    for (auto& e : m.params().entries()) {
      if (e.group != ParamGroup::FrozenBase) {
        e.tensor.set_requires_grad(true);
        trainable.push_back(e);
      }
    }
    auto loss_fn = [&] {
      const auto refs = m.encode_reference(codec.encode(s.reference, DType::F64));
      return diffusion_loss(eps, m.denoise(forward_diffuse(z0, t, eps, sched), t, &text, &refs));
    };
    Tensor before = loss_fn();
    backward(before);
    clip_grad_norm(trainable, 1.0);
    AdamWConfig cfg;
    cfg.lr = 1e-6;
    AdamW opt(trainable, cfg);
    opt.step();
    Tensor after;
    {
      NoGradGuard ng;
      after = loss_fn();
    }
    if (after.item() < before.item()) ++descended;
  }
  EXPECT_EQ(descended, 10);
}

TEST(Trainer, RejectsMismatchedInputs) {
  Rng rng(10);
  ToyUNet m(small_config(), rng);
  TrainConfig cfg = small_train(TrainStage::Base, AblationMode::Full, 1);
  EXPECT_THROW(Trainer(m, cfg, {}), ConfigError);
  cfg.model.channels = 32;
  EXPECT_THROW(Trainer(m, cfg, gen_dataset(2, 1, {})), ConfigError);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  Rng rng(11);
  ToyUNet m(small_config(), rng);
  Trainer t(m, small_train(TrainStage::Conditioning, AblationMode::Full, 2), gen_dataset(4, 1, {}));
  t.run();
  const auto dir = std::filesystem::temp_directory_path() / "gfit_test_ck";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "a.ck").string();
  save_checkpoint(path, t.checkpoint());
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(serialize_checkpoint(back), read_file(path));
  EXPECT_EQ(back.step, 2);
  EXPECT_TRUE(back.tensors.count("adamw.m.down1.attn.k_adapter"));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, LayoutPrefix) {
  Checkpoint ck;
  ck.config = {{"k", 1}};
  ck.step = 5;
  ck.rng = "state";
  ck.tensors["w"] = Tensor::from_values({2}, {1.0, -2.0});
  const std::string b = serialize_checkpoint(ck);
  EXPECT_EQ(b.substr(0, 4), "DFCK");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1u);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[8 + i])) << (8 * i);
  const auto header = nlohmann::json::parse(b.substr(16, hlen));
  EXPECT_EQ(header.at("w").at("dtype"), "f32");
  EXPECT_EQ(header.at("w").at("shape"), nlohmann::json::array({2}));
  EXPECT_EQ(header.at("w").at("nbytes"), 8);
  EXPECT_EQ(header.at("step"), 5);
  EXPECT_EQ(b.size(), 16 + hlen + 8);
  float x;
  std::memcpy(&x, b.data() + 16 + hlen + header.at("w").at("offset").get<std::size_t>() + 4, 4);
  EXPECT_EQ(x, -2.0f);
}

TEST(Checkpoint, EveryHeaderByteCorruptionIsDetected) {
  Checkpoint ck;
  ck.config = {{"model", to_json(small_config())}};
  ck.tensors["a"] = Tensor::from_values({3}, {1, 2, 3});
  ck.tensors["b"] = Tensor::from_values({1}, {4});
  const std::string good = serialize_checkpoint(ck);
  for (std::size_t i = 0; i < good.size(); ++i) {
    std::string bad = good;
    bad[i] = static_cast<char>(bad[i] ^ 0x5a);
    EXPECT_THROW(deserialize_checkpoint(bad), FormatError) << "byte " << i;
  }
  for (std::size_t n : {0u, 3u, 15u, 20u}) EXPECT_THROW(deserialize_checkpoint(good.substr(0, n)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 1)), FormatError);
  try {
    deserialize_checkpoint("XFCK" + good.substr(4));
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  std::string v2 = good;
  v2[4] = 2;
  try {
    deserialize_checkpoint(v2);
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(Checkpoint, FailedLoadLeavesModelUntouched) {
  Rng rng(12);
  ToyUNet m(small_config(), rng);
  const auto before = m.params().checksum();
  Checkpoint ck;
  for (const auto& e : m.params().entries()) ck.tensors[e.name] = Tensor::zeros(e.tensor.shape());
  ck.tensors["out.conv.weight"] = Tensor::zeros({1});
  EXPECT_THROW(load_model_params(m, ck), DimensionError);
  EXPECT_EQ(m.params().checksum(), before);
  ck.tensors.erase("out.conv.weight");
  EXPECT_THROW(load_model_params(m, ck), IntegrityError);
  EXPECT_EQ(m.params().checksum(), before);
}
