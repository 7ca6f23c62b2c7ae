// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "memba/random.hpp"
#include "memba/tensor.hpp"

namespace memba {

// A named trainable value. Optimizer steps mutate `value` only when
// `trainable` is true; names are unique within a model (the registry checks).
template <std::floating_point S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  std::optional<Tensor<S>> grad;
  bool trainable = true;

  void set_trainable(bool t) {
    trainable = t;
    value.set_requires_grad(t);
  }

  std::int64_t numel() const { return value.numel(); }
};

// Kaiming-uniform fan-in init: U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <std::floating_point S>
Tensor<S> kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  require(fan_in > 0, "kaiming_uniform: fan_in must be positive");
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<S>(rng.uniform(-bound, bound));
  return t;
}

template <std::floating_point S>
Tensor<S> uniform_init(Shape shape, double lo, double hi, Rng& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <std::floating_point S>
Tensor<S> normal_init(Shape shape, double mean, double stddev, Rng& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<S>(mean + stddev * rng.normal());
  return t;
}

}  // namespace memba
