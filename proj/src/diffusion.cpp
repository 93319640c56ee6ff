// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/diffusion.hpp"

#include <cmath>
#include <string>

#include "gfit/error.hpp"
#include "gfit/ops.hpp"

namespace gfit {

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps) {
    throw IndexError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) + "]");
  }
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (!(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 <= beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.betas.resize(static_cast<std::size_t>(steps));
  s.alpha_bar.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - beta;
    s.betas[static_cast<std::size_t>(t - 1)] = beta;
    s.alpha_bar[static_cast<std::size_t>(t - 1)] = prod;
  }
  return s;
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps) {
    throw IndexError("forward_diffuse: timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(sched.steps) + "]");
  }
  if (z0.shape() != eps.shape()) {
    throw DimensionError("forward_diffuse: z0 " + shape_str(z0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  const double ab = sched.alpha_bar_at(t);
  return ops::add(ops::scale(z0, std::sqrt(ab)), ops::scale(eps, std::sqrt(1.0 - ab)));
}

Tensor diffusion_loss(const Tensor& eps_true, const Tensor& eps_pred) { return ops::mse(eps_true, eps_pred); }

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
  return ops::add(ops::scale(eps_cond, w), ops::scale(eps_uncond, 1.0 - w));
}

std::vector<int> ddim_timesteps(int steps, int num_steps) {
  if (num_steps < 1 || num_steps > steps) {
    throw ConfigError("ddim: num_steps must lie in [1, " + std::to_string(steps) + "], got " +
                      std::to_string(num_steps));
  }
  const int stride = steps / num_steps;
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(num_steps));
  for (int k = num_steps - 1; k >= 0; --k) ts.push_back(1 + k * stride);
  return ts;
}

Tensor ddim_sample(const EpsModel& model, const Tensor& z_T, const GuidanceConfig& guidance,
                   const NoiseSchedule& sched, std::uint64_t /*seed*/, std::vector<DdimStep>* trace) {
  NoGradGuard no_grad;
  const auto ts = ddim_timesteps(sched.steps, guidance.num_steps);
  Tensor z = z_T.clone();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    Tensor eps_c = model(z, t, true);
    Tensor eps_u = model(z, t, false);
    if (eps_c.shape() != z.shape() || eps_u.shape() != z.shape()) {
      throw ContractError("ddim: model returned " + shape_str(eps_c.shape()) + " / " + shape_str(eps_u.shape()) +
                          " for latent " + shape_str(z.shape()));
    }
    Tensor eps = cfg_combine(eps_c, eps_u, guidance.scale);
    const double ab = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t_prev);
    Tensor x0 = ops::scale(ops::sub(z, ops::scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
    Tensor next = ops::add(ops::scale(x0, std::sqrt(ab_prev)), ops::scale(eps, std::sqrt(1.0 - ab_prev)));
    if (trace != nullptr) trace->push_back(DdimStep{t, t_prev, eps, x0, next});
    z = next;
  }
  return z;
}

}  // namespace gfit
