// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Noise schedule, forward noising, the denoising objective, classifier-free
// guidance and the deterministic DDIM sampler.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gfit/tensor.hpp"

namespace gfit {

/// Cumulative signal coefficients alpha_bar[t] = prod_{s<=t} (1 - beta_s) for
/// t in [1, T]. alpha_bar(0) is defined as 1 (no noise).
struct NoiseSchedule {
  int steps = 0;  // T
  std::vector<double> betas;      // index t-1
  std::vector<double> alpha_bar;  // index t-1

  double alpha_bar_at(int t) const;
};

/// Linear beta schedule. Requires 0 <= beta_start <= beta_end < 1 and T >= 1.
NoiseSchedule make_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

/// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps. Differentiable.
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// Mean squared error between true and predicted noise.
Tensor diffusion_loss(const Tensor& eps_true, const Tensor& eps_pred);

/// w * eps_cond + (1 - w) * eps_uncond.
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

struct GuidanceConfig {
  double scale = 7.5;  // w
  int num_steps = 50;
};

/// Noise predictor used by the sampler. `conditional == false` requests the
/// unconditional branch (all conditions dropped).
using EpsModel = std::function<Tensor(const Tensor& z_t, int t, bool conditional)>;

/// Descending sampling timesteps 1 + k * (T / num_steps), k = num_steps-1..0.
/// The last entry is always t = 1.
std::vector<int> ddim_timesteps(int steps, int num_steps);

struct DdimStep {
  int t = 0;
  int t_prev = 0;
  Tensor eps;     // guided prediction
  Tensor x0_hat;  // predicted clean latent
  Tensor z_next;  // latent at t_prev
};

/// Deterministic DDIM (eta = 0) with classifier-free guidance at every step.
/// Runs with recording disabled. `seed` is accepted for interface symmetry
/// with stochastic samplers; this sampler draws no randomness. When `trace`
/// is given, every step is appended to it.
Tensor ddim_sample(const EpsModel& model, const Tensor& z_T, const GuidanceConfig& guidance,
                   const NoiseSchedule& sched, std::uint64_t seed, std::vector<DdimStep>* trace = nullptr);

}  // namespace gfit
