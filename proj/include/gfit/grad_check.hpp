// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gfit/tensor.hpp"

namespace gfit {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares tape gradients of a scalar function against central differences
/// (f(p+h) - f(p-h)) / 2h, element by element.
///
/// `f` must rebuild the scalar from the current parameter values on every
/// call and be deterministic. Parameters should be f64. The relative error of
/// one element is |a - n| / (max(|a|, |n|) + 1e-8). Throws NumericError if f
/// produces a non-finite value.
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<NamedParam>& params,
                           double h = 1e-5);

}  // namespace gfit
