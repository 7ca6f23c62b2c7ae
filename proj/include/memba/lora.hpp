// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters over frozen linear maps: y = W x + s * up (down x).
// `up` starts at zero so a freshly attached adapter is an exact no-op; in
// PEFT mode only the factor pair trains while the base weight stays frozen.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "memba/ops.hpp"
#include "memba/parameter.hpp"
#include "memba/random.hpp"
#include "memba/tensor.hpp"

namespace memba {

template <std::floating_point S>
struct LoRAAdapter {
  Parameter<S> down;  // (rank, d_in), small uniform init
  Parameter<S> up;    // (d_out, rank), zero init
  std::int64_t rank = 0;
  S scale = 1;

  static LoRAAdapter init(std::int64_t d_in, std::int64_t d_out, std::int64_t rank, S scale,
                          Rng& rng, const std::string& name_prefix) {
    require(rank >= 1, "LoRAAdapter: rank must be >= 1");
    require(rank < std::min(d_in, d_out),
            "LoRAAdapter: rank " + std::to_string(rank) + " is not low-rank for " +
                std::to_string(d_in) + "x" + std::to_string(d_out));
    require(scale > S(0), "LoRAAdapter: scale must be positive");
    LoRAAdapter a;
    a.rank = rank;
    a.scale = scale;
    double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    a.down = Parameter<S>{name_prefix + ".lora.down",
                          uniform_init<S>({rank, d_in}, -bound, bound, rng)};
    a.up = Parameter<S>{name_prefix + ".lora.up", Tensor<S>::zeros({d_out, rank})};
    return a;
  }

  std::int64_t trainable_scalars() const { return down.numel() + up.numel(); }
};

// Adapted forward: base_weight (d_out, d_in) applied to x (..., d_in) plus the
// scaled low-rank path. Gradients reach only what requires grad, so freezing
// the base routes updates exclusively through down/up.
template <std::floating_point S>
Tensor<S> adapted_forward(const Tensor<S>& base_weight, const LoRAAdapter<S>& adapter,
                          const Tensor<S>& x) {
  require(base_weight.rank() == 2, "adapted_forward: base_weight must be (d_out, d_in)");
  require(x.shape().back() == base_weight.dim(1), "adapted_forward: x last extent mismatch");
  require(adapter.down.value.dim(1) == base_weight.dim(1) &&
              adapter.up.value.dim(0) == base_weight.dim(0),
          "adapted_forward: adapter extents do not compose with base weight");
  Tensor<S> base = matmul(x, base_weight, /*transpose_b=*/true);
  Tensor<S> low = matmul(x, adapter.down.value, /*transpose_b=*/true);
  Tensor<S> update = matmul(low, adapter.up.value, /*transpose_b=*/true);
  return add(base, scale(update, adapter.scale));
}

// Returns base + s * up . down without mutating the base.
template <std::floating_point S>
Tensor<S> merge(const Tensor<S>& base_weight, const LoRAAdapter<S>& adapter) {
  Tensor<S> ud = matmul(adapter.up.value, adapter.down.value);
  return add(base_weight, scale(ud, adapter.scale));
}

// Per-site adapter placement; rank 0 disables a site. Mirrors the default
// recipe: rank 64 on the input/output projections, rank 32 on the gate pair.
struct PlacementConfig {
  std::int64_t in_proj = 0;
  std::int64_t out_proj = 0;
  std::int64_t x_proj = 0;
  std::int64_t dt_proj = 0;
  std::int64_t gate_in = 0;
  std::int64_t gate_out = 0;
  double scale = 1.0;

  bool any_enabled() const {
    return in_proj > 0 || out_proj > 0 || x_proj > 0 || dt_proj > 0 || gate_in > 0 ||
           gate_out > 0;
  }

  static PlacementConfig default_peft() {
    PlacementConfig p;
    p.in_proj = 64;
    p.out_proj = 64;
    p.gate_in = 32;
    p.gate_out = 32;
    return p;
  }
};

struct TrainableCount {
  std::int64_t trainable = 0;
  std::int64_t total = 0;
  double percent = 0.0;
};

// Counts scalars in trainable parameters; percent = 100 * trainable / total.
template <std::floating_point S>
TrainableCount count_trainable(const std::vector<Parameter<S>*>& params) {
  TrainableCount c;
  for (const auto* p : params) {
    c.total += p->numel();
    if (p->trainable) c.trainable += p->numel();
  }
  c.percent = c.total > 0 ? 100.0 * static_cast<double>(c.trainable) /
                                static_cast<double>(c.total)
                          : 0.0;
  return c;
}

}  // namespace memba
