// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// Leaky Integrate Membrane gating. The sequence is trimmed to T equal chunks
// of length floor(L/T); one membrane update runs per chunk:
//
//   u <- reset(tau * u + x_chunk, v_th)
//
// so token j of chunk i+1 integrates token j of chunk i. Outputs are the
// per-chunk membranes concatenated back to length L (zero-padding the trimmed
// tail), plus the chunk-mean membrane for transfer into the next layer. LIM
// itself has no learnable parameters.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "memba/ops.hpp"
#include "memba/tensor.hpp"

namespace memba {

struct LIMConfig {
  std::int64_t num_chunks = 4;  // T
  double tau = 0.5;             // leak in (0, 1]
  double v_th = 1.0;            // reset threshold, > 0 (may be +inf to disable reset)

  void validate() const {
    require(num_chunks >= 1, "LIMConfig: num_chunks must be >= 1");
    require(tau > 0.0 && tau <= 1.0, "LIMConfig: tau must lie in (0, 1]");
    require(v_th > 0.0, "LIMConfig: v_th must be positive");
  }
};

struct ChunkPlan {
  std::int64_t seq_len = 0;     // L
  std::int64_t num_chunks = 0;  // T
  std::int64_t chunk_len = 0;   // floor(L / T)
  std::int64_t remainder = 0;   // L - chunk_len * T
  bool padded = false;          // remainder > 0 -> trimmed tail restored by zero pad
};

// floor-division chunk plan; sequences shorter than T are rejected (an empty
// chunk has no defined membrane update).
inline ChunkPlan chunk_plan(std::int64_t seq_len, std::int64_t num_chunks) {
  require(num_chunks >= 1, "chunk_plan: num_chunks must be >= 1");
  require(seq_len >= num_chunks,
          "chunk_plan: sequence length " + std::to_string(seq_len) +
              " shorter than chunk count " + std::to_string(num_chunks));
  ChunkPlan p;
  p.seq_len = seq_len;
  p.num_chunks = num_chunks;
  p.chunk_len = seq_len / num_chunks;
  p.remainder = seq_len - p.chunk_len * num_chunks;
  p.padded = p.remainder > 0;
  return p;
}

// Membrane state carried between chunks and, via transfer(), between layers.
template <std::floating_point S>
struct LIMState {
  enum class Source { zero, transferred };
  Tensor<S> u;  // (batch, chunk_len, D)
  Source source = Source::zero;
};

// Reset of Eq-style form: zero where x > v_th, keep otherwise (ties kept).
template <std::floating_point S>
Tensor<S> reset(const Tensor<S>& x, S v_th) {
  return reset_threshold(x, v_th);
}

template <std::floating_point S>
struct LIMOutputs {
  Tensor<S> out;       // (batch, L, D); trailing remainder positions exactly zero
  LIMState<S> avg;     // chunk-mean membrane, (batch, chunk_len, D)
  // Per-chunk membranes in chunk order, kept for diagnostics/tracing.
  std::vector<Tensor<S>> membranes;
};

// One LIM pass over x (batch, L, D). `prev`, when present, must match the
// current plan's (batch, chunk_len, D); it seeds the first chunk's membrane.
// The function is stateless across calls: carryover only happens through an
// explicitly passed state.
template <std::floating_point S>
LIMOutputs<S> lim_forward(const Tensor<S>& x, const LIMConfig& cfg,
                          const LIMState<S>* prev = nullptr) {
  cfg.validate();
  require(x.rank() == 3, "lim_forward: x must be (batch, L, D)");
  const std::int64_t batch = x.dim(0), l = x.dim(1), d = x.dim(2);
  ChunkPlan plan = chunk_plan(l, cfg.num_chunks);

  Tensor<S> u;
  if (prev) {
    require(prev->u.rank() == 3 && prev->u.dim(0) == batch &&
                prev->u.dim(1) == plan.chunk_len && prev->u.dim(2) == d,
            "lim_forward: previous membrane shape " + shape_str(prev->u.shape()) +
                " does not match chunk plan (batch," + std::to_string(plan.chunk_len) + "," +
                std::to_string(d) + ")");
    u = prev->u;
  } else {
    u = Tensor<S>::zeros({batch, plan.chunk_len, d});
  }

  const S tau = static_cast<S>(cfg.tau);
  const S v_th = static_cast<S>(cfg.v_th);
  std::vector<Tensor<S>> membranes;
  membranes.reserve(static_cast<std::size_t>(plan.num_chunks));
  for (std::int64_t i = 0; i < plan.num_chunks; ++i) {
    Tensor<S> chunk = slice(x, 1, i * plan.chunk_len, plan.chunk_len);
    u = reset_threshold(add(scale(u, tau), chunk), v_th);
    membranes.push_back(u);
  }

  std::vector<Tensor<S>> pieces = membranes;
  if (plan.remainder > 0)
    pieces.push_back(Tensor<S>::zeros({batch, plan.remainder, d}));
  Tensor<S> out = plan.num_chunks == 1 && plan.remainder == 0
                      ? membranes.front()
                      : concat(pieces, 1);

  // Chunk-mean membrane for cross-layer transfer.
  Tensor<S> acc = membranes.front();
  for (std::int64_t i = 1; i < plan.num_chunks; ++i) acc = add(acc, membranes[i]);
  Tensor<S> avg_u = scale(acc, S(1) / static_cast<S>(plan.num_chunks));

  LIMOutputs<S> res;
  res.out = out;
  res.avg = LIMState<S>{avg_u, LIMState<S>::Source::zero};
  res.membranes = std::move(membranes);
  return res;
}

// Marks an averaged membrane as the transferred initial state for the next
// layer. Shape compatibility with the consuming layer's plan is enforced by
// lim_forward at the point of use.
template <std::floating_point S>
LIMState<S> transfer(const LIMState<S>& avg) {
  return LIMState<S>{avg.u, LIMState<S>::Source::transferred};
}

// LIM introduces no learnable parameters.
inline std::int64_t count_lim_parameters(const LIMConfig&) { return 0; }

// Reference parameter counts for the classical recurrent gates at hidden
// width H (assertion-only contrast figures).
inline std::int64_t lstm_gate_parameter_count(std::int64_t h) { return 8 * h * h + 4 * h; }
inline std::int64_t gru_gate_parameter_count(std::int64_t h) { return 6 * h * h + 3 * h; }

}  // namespace memba
