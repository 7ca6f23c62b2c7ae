// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// The Memba block and stacked model. Each block splits the projected input
// into an SSM path and a gate path:
//
//   (X_ssm, X_gate) = Split(W_in(RMS(x)))
//   Y_ssm  = Scan(X_ssm)
//   Y_gate = silu(W_out_gate(LIM(W_in_gate(X_gate))))     (use_lim on)
//   Y_gate = silu(X_gate)                                 (use_lim off, plain gate)
//   y      = W_out(Y_ssm (*) Y_gate)
//
// The residual x + y is applied at the model level. Membrane averages flow
// into the next block's first chunk when membrane transfer is enabled.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "memba/lim.hpp"
#include "memba/lora.hpp"
#include "memba/ops.hpp"
#include "memba/parameter.hpp"
#include "memba/random.hpp"
#include "memba/scan.hpp"
#include "memba/tensor.hpp"

namespace memba {

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <std::floating_point S>
struct LinearLayer {
  Parameter<S> weight;  // (d_out, d_in)
  std::optional<Parameter<S>> bias;
  std::optional<LoRAAdapter<S>> lora;

  static LinearLayer init(const std::string& name, std::int64_t d_in, std::int64_t d_out,
                          bool with_bias, Rng& rng) {
    LinearLayer l;
    l.weight = Parameter<S>{name + ".weight", kaiming_uniform<S>({d_out, d_in}, d_in, rng)};
    if (with_bias) l.bias = Parameter<S>{name + ".bias", Tensor<S>::zeros({d_out})};
    return l;
  }

  std::int64_t d_in() const { return weight.value.dim(1); }
  std::int64_t d_out() const { return weight.value.dim(0); }

  void attach_lora(std::int64_t rank, S lora_scale, Rng& rng) {
    std::string base = weight.name.substr(0, weight.name.size() - std::string(".weight").size());
    lora = LoRAAdapter<S>::init(d_in(), d_out(), rank, lora_scale, rng, base);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> y = lora.has_value() ? adapted_forward(weight.value, *lora, x)
                                   : matmul(x, weight.value, /*transpose_b=*/true);
    if (bias.has_value()) y = add(y, bias->value);
    return y;
  }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&weight);
    if (bias.has_value()) out.push_back(&*bias);
    if (lora.has_value()) {
      out.push_back(&lora->down);
      out.push_back(&lora->up);
    }
  }
};

template <std::floating_point S>
struct RMSNorm {
  static constexpr double kEps = 1e-6;
  Parameter<S> gain;

  static RMSNorm init(const std::string& name, std::int64_t d) {
    return RMSNorm{Parameter<S>{name + ".gain", Tensor<S>::full({d}, S(1))}};
  }

  // x * gain / sqrt(mean(x^2) + eps) over the last axis.
  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> ms = mean_axis(mul(x, x), x.rank() - 1, /*keepdim=*/true);
    Tensor<S> inv = rsqrt(add_scalar(ms, static_cast<S>(kEps)));
    return mul(mul(x, inv), gain.value);
  }

  void collect(std::vector<Parameter<S>*>& out) { out.push_back(&gain); }
};

// ---------------------------------------------------------------------------
// Block
// ---------------------------------------------------------------------------

struct MembaBlockConfig {
  std::int64_t d_model = 64;
  std::int64_t expansion = 2;
  std::int64_t state_dim = 16;
  std::int64_t dt_rank = 0;  // 0 -> ceil(d_model / 16)
  std::int64_t d_gate = 0;   // 0 -> d_inner / 4
  LIMConfig lim;
  PlacementConfig placement;
  bool use_lim = true;
  bool use_membrane_transfer = true;
  std::int64_t scan_chunk_len = 0;  // 0 -> whole sequence per chunk

  std::int64_t d_inner() const { return expansion * d_model; }
  std::int64_t resolved_dt_rank() const { return dt_rank > 0 ? dt_rank : (d_model + 15) / 16; }
  std::int64_t resolved_d_gate() const { return d_gate > 0 ? d_gate : d_inner() / 4; }

  void validate() const {
    require(d_model > 0 && expansion > 0 && state_dim > 0, "block config: dims must be positive");
    require(resolved_dt_rank() > 0, "block config: dt_rank must resolve positive");
    require(resolved_d_gate() > 0 && resolved_d_gate() <= d_inner(),
            "block config: d_gate must lie in [1, d_inner]");
    if (use_lim) lim.validate();
  }
};

template <std::floating_point S>
struct BlockTrace {
  Tensor<S> lim_out;                 // (B, L, d_gate)
  std::vector<Tensor<S>> membranes;  // per chunk, (B, chunk_len, d_gate)
  Tensor<S> lim_avg;                 // (B, chunk_len, d_gate)
  Tensor<S> incoming_membrane;       // state this block started from (if transferred)
};

template <std::floating_point S>
struct MembaBlock {
  MembaBlockConfig cfg;
  RMSNorm<S> norm;
  LinearLayer<S> in_proj;   // d_model -> 2*d_inner
  LinearLayer<S> x_proj;    // d_inner -> dt_rank + 2N
  LinearLayer<S> dt_proj;   // dt_rank -> d_inner (with bias)
  LinearLayer<S> out_proj;  // d_inner -> d_model
  Parameter<S> a_log;       // (d_inner, N)
  Parameter<S> d_skip;      // (d_inner)
  std::optional<LinearLayer<S>> gate_in;   // d_inner -> d_gate
  std::optional<LinearLayer<S>> gate_out;  // d_gate -> d_inner

  static MembaBlock init(std::int64_t index, const MembaBlockConfig& cfg, Rng& rng) {
    cfg.validate();
    std::string prefix = "layer" + std::to_string(index);
    std::int64_t d_inner = cfg.d_inner();
    std::int64_t dtr = cfg.resolved_dt_rank();
    std::int64_t n = cfg.state_dim;
    MembaBlock b;
    b.cfg = cfg;
    b.norm = RMSNorm<S>::init(prefix + ".norm", cfg.d_model);
    b.in_proj = LinearLayer<S>::init(prefix + ".in_proj", cfg.d_model, 2 * d_inner, false, rng);
    b.x_proj = LinearLayer<S>::init(prefix + ".x_proj", d_inner, dtr + 2 * n, false, rng);
    b.dt_proj = LinearLayer<S>::init(prefix + ".dt_proj", dtr, d_inner, true, rng);
    b.out_proj = LinearLayer<S>::init(prefix + ".out_proj", d_inner, cfg.d_model, false, rng);
    // -A spans [1, N] per channel; dt bias targets softplus output in [1e-3, 1e-1].
    Tensor<S> al = Tensor<S>::zeros({d_inner, n});
    {
      auto d = al.mutable_data();
      for (std::int64_t i = 0; i < d_inner; ++i)
        for (std::int64_t j = 0; j < n; ++j)
          d[static_cast<std::size_t>(i * n + j)] =
              static_cast<S>(std::log(static_cast<double>(j + 1)));
    }
    b.a_log = Parameter<S>{prefix + ".a_log", al};
    {
      auto bd = b.dt_proj.bias->value.mutable_data();
      for (std::int64_t i = 0; i < d_inner; ++i) {
        double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        bd[static_cast<std::size_t>(i)] = static_cast<S>(std::log(std::expm1(dt)));
      }
    }
    b.d_skip = Parameter<S>{prefix + ".d_skip", Tensor<S>::full({d_inner}, S(1))};
    if (cfg.use_lim) {
      std::int64_t dg = cfg.resolved_d_gate();
      b.gate_in = LinearLayer<S>::init(prefix + ".gate_in", d_inner, dg, false, rng);
      // Near-pass-through start: small weights plus the fixed unit skip from
      // the membrane mean keep step-0 behavior close to the plain silu gate.
      b.gate_out = LinearLayer<S>::init(prefix + ".gate_out", dg, d_inner, false, rng);
      for (auto& v : b.gate_out->weight.value.mutable_data())
        v = static_cast<S>(rng.uniform(-0.01, 0.01));
    }
    const auto& pl = cfg.placement;
    S ls = static_cast<S>(pl.scale);
    if (pl.in_proj > 0) b.in_proj.attach_lora(pl.in_proj, ls, rng);
    if (pl.out_proj > 0) b.out_proj.attach_lora(pl.out_proj, ls, rng);
    if (pl.x_proj > 0) b.x_proj.attach_lora(pl.x_proj, ls, rng);
    if (pl.dt_proj > 0) b.dt_proj.attach_lora(pl.dt_proj, ls, rng);
    if (cfg.use_lim && pl.gate_in > 0) b.gate_in->attach_lora(pl.gate_in, ls, rng);
    if (cfg.use_lim && pl.gate_out > 0) b.gate_out->attach_lora(pl.gate_out, ls, rng);
    return b;
  }

  // Pre-norm block body; the caller adds the residual. Returns the output and
  // the chunk-mean membrane (empty state when use_lim is off).
  std::pair<Tensor<S>, LIMState<S>> forward(const Tensor<S>& x, const LIMState<S>* prev,
                                            BlockTrace<S>* trace = nullptr) const {
    require(x.rank() == 3 && x.dim(2) == cfg.d_model, "block: x must be (batch, L, d_model)");
    Tensor<S> h = norm.forward(x);
    Tensor<S> xz = in_proj.forward(h);
    auto halves = split(xz, 2, 2);
    const Tensor<S>& x_ssm = halves[0];
    const Tensor<S>& x_gate = halves[1];

    // SSM path.
    Tensor<S> xdbc = x_proj.forward(x_ssm);
    auto [dt_pre, b_seq, c_seq] = split_ssm_projection(xdbc, cfg.resolved_dt_rank(), cfg.state_dim);
    Tensor<S> delta = softplus(dt_proj.forward(dt_pre));
    std::int64_t chunk = cfg.scan_chunk_len > 0 ? cfg.scan_chunk_len : x.dim(1);
    Tensor<S> y_ssm = detail::selective_scan_core(delta, neg(exp(a_log.value)), b_seq, c_seq,
                                                  x_ssm, d_skip.value, chunk);

    // Gate path.
    Tensor<S> y_gate;
    LIMState<S> avg;
    if (cfg.use_lim) {
      Tensor<S> g = gate_in->forward(x_gate);
      auto lim = lim_forward(g, cfg.lim, prev);
      Tensor<S> pre = gate_out->forward(lim.out);
      // Fixed unit skip from the membrane feature-mean (not learnable).
      pre = add(pre, mean_axis(lim.out, 2, /*keepdim=*/true));
      y_gate = silu(pre);
      avg = lim.avg;
      if (trace) {
        trace->lim_out = lim.out;
        trace->membranes = lim.membranes;
        trace->lim_avg = lim.avg.u;
        if (prev) trace->incoming_membrane = prev->u;
      }
    } else {
      require(prev == nullptr, "block: membrane state passed to a block without LIM");
      y_gate = silu(x_gate);
    }

    Tensor<S> out = out_proj.forward(mul(y_ssm, y_gate));
    return {out, avg};
  }

  void collect(std::vector<Parameter<S>*>& out) {
    norm.collect(out);
    in_proj.collect(out);
    x_proj.collect(out);
    dt_proj.collect(out);
    out.push_back(&a_log);
    out.push_back(&d_skip);
    if (gate_in.has_value()) gate_in->collect(out);
    if (gate_out.has_value()) gate_out->collect(out);
    out_proj.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

enum class InputKind { tokens, features };
enum class HeadKind { per_token, pooled_class, pooled_regression };
enum class TrainMode { pretrain_full, finetune_peft };

struct ModelConfig {
  MembaBlockConfig block;
  std::int64_t num_blocks = 2;
  InputKind input = InputKind::tokens;
  std::int64_t vocab_size = 16;   // tokens input
  std::int64_t in_features = 0;   // features input width
  HeadKind head = HeadKind::per_token;
  std::int64_t num_classes = 16;  // head width (1 for regression)

  void validate() const {
    block.validate();
    require(num_blocks >= 1, "model config: need at least one block");
    if (input == InputKind::tokens)
      require(vocab_size >= 2, "model config: vocab_size must be >= 2");
    else
      require(in_features >= 1, "model config: in_features must be >= 1");
    require(num_classes >= 1, "model config: num_classes must be >= 1");
    if (head == HeadKind::pooled_regression)
      require(num_classes == 1, "model config: regression head has one output");
  }
};

// A task batch as the model consumes it: token ids or a dense feature tensor.
template <std::floating_point S>
struct ModelInput {
  bool is_tokens = true;
  std::vector<std::int64_t> tokens;  // (batch * seq_len) when is_tokens
  Tensor<S> features;                // (batch, seq_len, F) otherwise
  std::int64_t batch = 0;
  std::int64_t seq_len = 0;
};

template <std::floating_point S>
struct ForwardTrace {
  bool want_input_grad = false;
  Tensor<S> embedded;  // post-embedding activations (saliency target for tokens)
  std::vector<BlockTrace<S>> blocks;
};

template <std::floating_point S>
struct MembaModel {
  ModelConfig cfg;
  std::optional<Parameter<S>> embed;         // (V, d_model)
  std::optional<LinearLayer<S>> patch_proj;  // F -> d_model
  std::vector<MembaBlock<S>> blocks;
  RMSNorm<S> final_norm;
  LinearLayer<S> head;

  static MembaModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed, /*stream=*/0xC0DE);
    MembaModel m;
    m.cfg = cfg;
    if (cfg.input == InputKind::tokens) {
      m.embed = Parameter<S>{"embed.weight",
                             normal_init<S>({cfg.vocab_size, cfg.block.d_model}, 0.0, 0.02, rng)};
    } else {
      m.patch_proj =
          LinearLayer<S>::init("patch_proj", cfg.in_features, cfg.block.d_model, true, rng);
    }
    for (std::int64_t i = 0; i < cfg.num_blocks; ++i)
      m.blocks.push_back(MembaBlock<S>::init(i, cfg.block, rng));
    m.final_norm = RMSNorm<S>::init("final_norm", cfg.block.d_model);
    m.head = LinearLayer<S>::init("head", cfg.block.d_model, cfg.num_classes, true, rng);
    m.check_unique_names();
    return m;
  }

  // embed -> blocks with residual + membrane threading -> norm -> head.
  Tensor<S> forward(const ModelInput<S>& in, ForwardTrace<S>* trace = nullptr) const {
    Tensor<S> h;
    if (cfg.input == InputKind::tokens) {
      require(in.is_tokens, "model: expected token input");
      require(static_cast<std::int64_t>(in.tokens.size()) == in.batch * in.seq_len,
              "model: token count mismatch");
      h = embedding(embed->value, in.tokens, {in.batch, in.seq_len});
    } else {
      require(!in.is_tokens, "model: expected feature input");
      require(in.features.rank() == 3 && in.features.dim(2) == cfg.in_features,
              "model: features must be (batch, L, F)");
      h = patch_proj->forward(in.features);
    }
    if (trace && trace->want_input_grad) {
      h.set_requires_grad(true);
      if (auto* r = GradRecord<S>::active()) r->retain(h);
    }
    if (trace) trace->embedded = h;

    LIMState<S> carry;
    const LIMState<S>* prev = nullptr;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      BlockTrace<S> bt;
      auto [y, avg] = blocks[i].forward(h, prev, trace ? &bt : nullptr);
      if (trace) trace->blocks.push_back(std::move(bt));
      h = add(h, y);
      if (cfg.block.use_lim && cfg.block.use_membrane_transfer && i + 1 < blocks.size()) {
        carry = transfer(avg);
        prev = &carry;
      } else {
        prev = nullptr;
      }
    }
    h = final_norm.forward(h);
    switch (cfg.head) {
      case HeadKind::per_token:
        return head.forward(h);  // (B, L, C)
      case HeadKind::pooled_class:
      case HeadKind::pooled_regression: {
        Tensor<S> pooled = mean_axis(h, 1);  // (B, d_model); all positions carry signal
        return head.forward(pooled);         // (B, C)
      }
    }
    require(false, "model: unknown head kind");
    return h;
  }

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    if (embed.has_value()) out.push_back(&*embed);
    if (patch_proj.has_value()) patch_proj->collect(out);
    for (auto& b : blocks) b.collect(out);
    final_norm.collect(out);
    head.collect(out);
    return out;
  }

  // pretrain_full trains everything. finetune_peft freezes the base: only
  // adapter factors, the gate-path projections, and the head stay trainable.
  void apply_mode(TrainMode mode) {
    for (auto* p : parameters()) {
      bool trainable = true;
      if (mode == TrainMode::finetune_peft) {
        const std::string& n = p->name;
        bool is_lora = n.find(".lora.") != std::string::npos;
        bool is_gate = n.find(".gate_in.") != std::string::npos ||
                       n.find(".gate_out.") != std::string::npos;
        bool is_head = n.rfind("head.", 0) == 0;
        trainable = is_lora || is_gate || is_head;
      }
      p->set_trainable(trainable);
    }
  }

  std::int64_t total_parameters() {
    std::int64_t n = 0;
    for (auto* p : parameters()) n += p->numel();
    return n;
  }

 private:
  void check_unique_names() {
    std::set<std::string> seen;
    for (auto* p : parameters()) {
      require(seen.insert(p->name).second, "duplicate parameter name: " + p->name);
      require(!p->name.empty(), "parameter with empty name");
    }
  }
};

}  // namespace memba
