// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checking. The oracle only ever runs the
// forward path (no record active), so it stays independent of the recorded
// backward rules it is checking.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "memba/autograd.hpp"
#include "memba/ops.hpp"
#include "memba/tensor.hpp"

namespace memba {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::int64_t checked = 0;
  bool pass = false;
};

// Compares recorded gradients of `loss_fn` w.r.t. `inputs` against central
// finite differences (step h). `loss_fn` must recompute the loss from the
// current contents of the input tensors each call.
//
// Pass criterion per element: |analytic - fd| <= atol + rtol * max(|analytic|, |fd|),
// with h = 1e-5 and 64-bit arithmetic the spec tolerances hold with margin.
inline GradCheckResult check_gradients(const std::string& name,
                                       std::vector<Tensor<double>> inputs,
                                       const std::function<Tensor<double>()>& loss_fn,
                                       double h = 1e-5, double rtol = 1e-6,
                                       double atol = 1e-9) {
  GradCheckResult res;
  res.name = name;
  res.pass = true;

  // Analytic gradients via one recorded backward.
  std::vector<Tensor<double>> analytic;
  {
    for (auto& t : inputs) t.set_requires_grad(true);
    GradRecord<double> rec;
    Tensor<double> loss = loss_fn();
    rec.backward(loss);
    for (auto& t : inputs) {
      auto g = rec.gradient_of(t);
      analytic.push_back(g.has_value() ? *g : Tensor<double>::zeros(t.shape()));
    }
    for (auto& t : inputs) t.set_requires_grad(false);
  }

  // Finite differences, perturbing each element in place.
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto data = inputs[ti].mutable_data();
    auto ga = analytic[ti].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      double orig = data[i];
      data[i] = orig + h;
      double up = loss_fn().item();
      data[i] = orig - h;
      double dn = loss_fn().item();
      data[i] = orig;
      double fd = (up - dn) / (2.0 * h);
      double a = ga[i];
      double abs_err = std::abs(a - fd);
      double denom = std::max(std::abs(a), std::abs(fd));
      double rel = abs_err / std::max(denom, 1e-12);
      res.checked++;
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      if (abs_err > atol + rtol * denom) {
        res.pass = false;
        res.max_rel_err = std::max(res.max_rel_err, rel);
      } else if (denom > 1e-4) {
        // Relative error is only meaningful where the gradient clears the
        // finite-difference roundoff floor (~1e-11 abs for unit-scale losses);
        // smaller entries are guarded by atol above.
        res.max_rel_err = std::max(res.max_rel_err, rel);
      }
    }
  }
  return res;
}

}  // namespace memba
