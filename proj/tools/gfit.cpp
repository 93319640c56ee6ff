// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// gfit: data generation, training, sampling, evaluation and parameter
// inspection behind one entry point.
//
// Exit codes: 0 success, 1 runtime failure (or unmet eval threshold),
// 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gfit/checkpoint.hpp"
#include "gfit/dataset.hpp"
#include "gfit/error.hpp"
#include "gfit/eval.hpp"
#include "gfit/image.hpp"
#include "gfit/pipeline.hpp"
#include "gfit/rng.hpp"
#include "gfit/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace gfit;

namespace {

struct GenDataArgs {
  std::size_t n = 512;
  std::uint64_t seed = 1;
  std::string out;
  double free_patch_fraction = 0.0;
};

struct TrainArgs {
  std::string config;
  std::optional<std::string> mode;
  std::optional<std::string> stage;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data;
  std::optional<std::string> base;
  std::string resume;
  std::string out;
  std::string log;
};

struct SampleArgs {
  std::string checkpoint;
  std::string ref;
  std::string prompt = "a person wearing a shirt";
  std::uint64_t seed = 0;
  int steps = 50;
  double guidance = 7.5;
  std::string enrich = "template";
  std::string endpoint;
  bool no_reference = false;
  std::string out;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::size_t n = 50;
  std::uint64_t data_seed = 777;
  std::size_t seeds = 5;
  std::uint64_t seed_base = 0;
  std::string prompt = "simple";
  int steps = 50;
  double guidance = 7.5;
  bool no_baseline = false;
  std::string out;
  std::optional<double> min_texture_gap;
  std::optional<double> min_texture_mean;
};

struct InspectArgs {
  std::string config;
  std::string mode = "full";
  bool json = false;
};

nlohmann::json read_json_file(const std::string& path) {
  const std::string text = read_file(path);
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("'" + path + "' is not valid JSON");
  return j;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_dir_atomic(const fs::path& dir, const std::map<std::string, std::string>& files) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  for (const auto& [name, bytes] : files) write_file_atomic((tmp / name).string(), bytes);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

// ---------------------------------------------------------------------------

int run_gen_data(const GenDataArgs& a) {
  if (a.n == 0) throw UsageError("--n must be at least 1");
  DatasetOptions opts;
  opts.free_patch_fraction = a.free_patch_fraction;
  const auto samples = gen_dataset(a.n, a.seed, opts);
  write_corpus(a.out, samples);
  std::cout << "wrote " << samples.size() << " samples to " << a.out << "\n";
  return 0;
}

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(read_json_file(a.config));
  nlohmann::json flags = nlohmann::json::object();
  if (a.mode) flags["mode"] = *a.mode;
  if (a.stage) flags["stage"] = *a.stage;
  if (a.steps) flags["steps"] = *a.steps;
  if (a.seed) flags["seed"] = *a.seed;
  if (a.data) flags["data_dir"] = *a.data;
  if (a.base) flags["base_checkpoint"] = *a.base;
  return merge_train_config(cfg, flags);
}

void append_loss_log(std::ofstream& log, const LossRecord& r) {
  log << nlohmann::json{{"step", r.step}, {"loss", r.loss}}.dump() << "\n";
  log.flush();
}

// Keeps the log lines up to and including `step` so a resumed run appends
// to exactly the trace it continues.
void truncate_loss_log(const std::string& path, std::int64_t step) {
  std::string kept;
  if (fs::exists(path)) {
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("step")) continue;
      if (j["step"].get<std::int64_t>() <= step) kept += line + "\n";
    }
  }
  write_file_atomic(path, kept);
}

int run_train(const TrainArgs& a) {
  const std::string log_path = a.log.empty() ? a.out + ".loss.jsonl" : a.log;
  std::optional<Checkpoint> resume;
  TrainConfig cfg;
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw UsageError("--resume checkpoint '" + a.resume + "' does not exist");
    resume = load_checkpoint(a.resume);
    cfg = train_config_from_json(resume->config);
    // Only the step target may change on resume.
    if (a.steps) cfg.steps = *a.steps;
    if (a.mode || a.stage || a.seed || a.data || a.base || !a.config.empty()) {
      throw UsageError("--resume takes its configuration from the checkpoint; only --steps may be given");
    }
  } else {
    cfg = resolve_train_config(a);
  }
  cfg.validate();

  const auto data = load_training_data(cfg);
  std::optional<ToyUNet> model;
  if (resume) {
    model.emplace(model_from_checkpoint(*resume));
  } else if (cfg.stage == TrainStage::Conditioning) {
    if (cfg.base_checkpoint.empty()) {
      throw UsageError("the conditioning stage needs a base checkpoint (--base or \"base_checkpoint\")");
    }
    const Checkpoint base = load_checkpoint(cfg.base_checkpoint);
    model.emplace(model_from_checkpoint(base));
    if (!(model->config() == cfg.model)) {
      throw ConfigError("base checkpoint model config differs from the train config");
    }
  } else {
    Rng init = Rng::substream(cfg.seed, "model-init");
    model.emplace(cfg.model, init);
  }

  Trainer trainer(*model, cfg, data, !resume.has_value());
  if (resume) {
    trainer.restore(*resume);
    truncate_loss_log(log_path, resume->step);
  } else {
    write_file_atomic(log_path, "");
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw Error("cannot open loss log '" + log_path + "'");

  std::cout << report_params(*model, cfg.mode, cfg.stage).to_text();
  double window = 0.0;
  std::size_t in_window = 0;
  trainer.run([&](const LossRecord& r) {
    append_loss_log(log, r);
    window += r.loss;
    ++in_window;
    if (cfg.log_every > 0 && r.step % static_cast<std::int64_t>(cfg.log_every) == 0) {
      std::printf("step %6lld  loss %.5f\n", static_cast<long long>(r.step), window / static_cast<double>(in_window));
      std::fflush(stdout);
      window = 0.0;
      in_window = 0;
    }
  });
  save_checkpoint(a.out, trainer.checkpoint());
  std::cout << "saved " << a.out << " at step " << trainer.step_count() << "\n";
  return 0;
}

int run_sample(const SampleArgs& a) {
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint '" + a.checkpoint + "' does not exist");
  const auto mode = parse_enrich_mode(a.enrich);
  if (!mode) throw UsageError("--enrich must be template, external or off");
  if (a.steps < 1 || a.steps > 1000) throw UsageError("--steps must lie in [1, 1000]");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const ToyUNet model = model_from_checkpoint(ck);
  const Image ref = read_ppm(a.ref);
  GenerateOptions go;
  go.guidance.scale = a.guidance;
  go.guidance.num_steps = a.steps;
  go.enrich = *mode;
  go.endpoint = a.endpoint;
  go.use_reference = !a.no_reference;
  const Generation g = generate(model, a.prompt, ref, go, a.seed);
  write_ppm(a.out, g.image);
  std::cout << "prompt (" << source_name(g.prompt.source) << "): " << g.prompt.text << "\n";
  if (g.prompt.warning) std::cerr << "warning: " << g.prompt.diagnostic << "\n";
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint '" + a.checkpoint + "' does not exist");
  const auto prompt = parse_prompt_mode(a.prompt);
  if (!prompt) throw UsageError("--prompt must be fixed, simple, rich or enriched");
  if (a.seeds == 0) throw UsageError("--seeds must be at least 1");
  const std::string ck_bytes = read_file(a.checkpoint);
  const Checkpoint ck = deserialize_checkpoint(ck_bytes);
  const ToyUNet model = model_from_checkpoint(ck);
  const auto data = a.data.empty() ? gen_dataset(a.n, a.data_seed, {}) : load_corpus(a.data);

  BenchmarkOptions opts;
  opts.seeds = a.seeds;
  opts.seed_base = a.seed_base;
  opts.prompt = *prompt;
  opts.guidance.scale = a.guidance;
  opts.guidance.num_steps = a.steps;
  opts.include_baseline = !a.no_baseline;
  MetricReport report = run_benchmark(model, data, opts, hex64(fnv1a64(ck_bytes.data(), ck_bytes.size())));
  report.meta["data"] = a.data.empty() ? nlohmann::json{{"generated", a.n}, {"seed", a.data_seed}}
                                       : nlohmann::json(a.data);
  const std::string text = report.to_text();
  write_dir_atomic(a.out, {{"report.json", report.to_json().dump(2) + "\n"}, {"report.txt", text}});
  std::cout << text;

  int status = 0;
  if (a.min_texture_gap) {
    if (a.no_baseline) throw UsageError("--min-texture-gap needs the baseline rows");
    if (report.texture_gap() < *a.min_texture_gap) {
      std::cerr << "texture gap " << report.texture_gap() << " is below the required " << *a.min_texture_gap << "\n";
      status = 1;
    }
  }
  if (a.min_texture_mean) {
    const double mean = report.aggregates.at("conditioned").texture_mean;
    if (mean < *a.min_texture_mean) {
      std::cerr << "conditioned texture mean " << mean << " is below the required " << *a.min_texture_mean << "\n";
      status = 1;
    }
  }
  return status;
}

int run_inspect(const InspectArgs& a) {
  const auto mode = parse_mode(a.mode);
  if (!mode) throw UsageError("--mode must be finetuning, only_lora, only_adapter or full");
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(read_json_file(a.config));
  Rng init = Rng::substream(cfg.seed, "model-init");
  const ToyUNet model(cfg.model, init);
  const ParamReport r = report_params(model, *mode, TrainStage::Conditioning);
  if (a.json) {
    std::cout << r.to_json().dump(2) << "\n";
  } else {
    std::cout << r.to_text();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Garment-conditioned toy diffusion: data, training, sampling and evaluation.", "gfit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gfit 0.1.0");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a paired garment/person corpus.");
  gen_cmd->add_option("--n", gen.n, "Number of samples")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Corpus seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory (replaced atomically)")->required();
  gen_cmd->add_option("--free-patch-fraction", gen.free_patch_fraction, "Share of free-form textured patches")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train the base model or the garment conditioning.");
  train_cmd->add_option("--config", train.config, "JSON train config; flags override its keys")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--mode", train.mode, "finetuning | only_lora | only_adapter | full");
  train_cmd->add_option("--stage", train.stage, "base | conditioning");
  train_cmd->add_option("--steps", train.steps, "Total optimizer steps");
  train_cmd->add_option("--seed", train.seed, "Run seed (model-init and train substreams)");
  train_cmd->add_option("--data", train.data, "Corpus directory (default: generated from the config)");
  train_cmd->add_option("--base", train.base, "Base-stage checkpoint for the conditioning stage");
  train_cmd->add_option("--resume", train.resume, "Continue from a checkpoint written by this command");
  train_cmd->add_option("--out", train.out, "Checkpoint to write")->required();
  train_cmd->add_option("--log", train.log, "Loss log, one JSON line per step (default: <out>.loss.jsonl)");

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "Generate one image from a reference garment.");
  sample_cmd->add_option("--checkpoint", sample.checkpoint, "Trained checkpoint")->required();
  sample_cmd->add_option("--ref", sample.ref, "Reference garment image (PPM)")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--prompt", sample.prompt, "User prompt")->capture_default_str();
  sample_cmd->add_option("--seed", sample.seed, "Sampling seed")->capture_default_str();
  sample_cmd->add_option("--steps", sample.steps, "DDIM steps")->capture_default_str();
  sample_cmd->add_option("--guidance", sample.guidance, "Classifier-free guidance scale")->capture_default_str();
  sample_cmd->add_option("--enrich", sample.enrich, "Prompt rewriting: template | external | off")
      ->capture_default_str();
  sample_cmd->add_option("--endpoint", sample.endpoint,
                         std::string("Rewrite service URL (default: $") + kRewriteEndpointEnv + ")");
  sample_cmd->add_flag("--no-reference", sample.no_reference, "Ignore the reference (unconditioned baseline)");
  sample_cmd->add_option("--out", sample.out, "Output image (PPM)")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Benchmark texture and text consistency against a baseline.");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Corpus directory of held-out references");
  eval_cmd->add_option("--n", ev.n, "Generated held-out references when --data is absent")->capture_default_str();
  eval_cmd->add_option("--data-seed", ev.data_seed, "Seed of the generated held-out set")->capture_default_str();
  eval_cmd->add_option("--seeds", ev.seeds, "Generations per reference")->capture_default_str();
  eval_cmd->add_option("--seed-base", ev.seed_base, "Base of the per-generation seeds")->capture_default_str();
  eval_cmd->add_option("--prompt", ev.prompt, "fixed | simple | rich | enriched")->capture_default_str();
  eval_cmd->add_option("--steps", ev.steps, "DDIM steps")->capture_default_str();
  eval_cmd->add_option("--guidance", ev.guidance, "Classifier-free guidance scale")->capture_default_str();
  eval_cmd->add_flag("--no-baseline", ev.no_baseline, "Skip the unconditioned baseline rows");
  eval_cmd->add_option("--out", ev.out, "Report directory (report.json, report.txt)")->required();
  eval_cmd->add_option("--min-texture-gap", ev.min_texture_gap,
                       "Fail unless conditioned minus baseline texture_sim reaches this");
  eval_cmd->add_option("--min-texture-mean", ev.min_texture_mean,
                       "Fail unless the conditioned texture_sim mean reaches this");

  InspectArgs inspect;
  auto* inspect_cmd = app.add_subcommand("inspect-params", "Print parameter counts per group for a mode.");
  inspect_cmd->add_option("--config", inspect.config, "JSON train config (model block used)")
      ->check(CLI::ExistingFile);
  inspect_cmd->add_option("--mode", inspect.mode, "finetuning | only_lora | only_adapter | full")
      ->capture_default_str();
  inspect_cmd->add_flag("--json", inspect.json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(train);
    if (*sample_cmd) return run_sample(sample);
    if (*eval_cmd) return run_eval(ev);
    if (*inspect_cmd) return run_inspect(inspect);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
