// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/grad_check.hpp"

#include <cmath>

#include "gfit/error.hpp"

namespace gfit {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<NamedParam>& params, double h) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
    t.set_requires_grad(true);
  }
  tape().clear();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: function value is not finite");
  backward(loss);

  GradCheckResult result;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const std::vector<double> analytic = t.grad().values();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t.at(i);
      auto set = [&](double v) {
        return dispatch(t.dtype(), [&]<class T>() {
          t.mutable_data<T>()[i] = static_cast<T>(v);
          return static_cast<double>(t.mutable_data<T>()[i]);
        });
      };
      // Divide by the step actually stored, not the nominal 2h.
      const double up = set(orig + h);
      const double fp = evaluate(f);
      const double down = set(orig - h);
      const double fm = evaluate(f);
      set(orig);
      const double numeric = (fp - fm) / (up - down);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / (std::max(std::abs(a), std::abs(numeric)) + 1e-8);
      ++result.checked;
      if (result.checked == 1 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace gfit
