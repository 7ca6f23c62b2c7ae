// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "memba/tensor.hpp"

namespace memba {

// Reverse-mode tape. Constructing a GradRecord makes it the active record for
// the current thread; ops executed while it is active append nodes when any
// input requires grad. A record is single-use: backward() may run once.
//
// Gradients accumulate additively in recording order when a node fans out,
// which keeps backward passes bit-deterministic.
template <std::floating_point S>
class GradRecord {
 public:
  using BackwardFn = std::function<void(GradRecord&, const Tensor<S>&)>;

  GradRecord() : epoch_(next_epoch()++) {
    stack().push_back(this);
  }

  ~GradRecord() {
    if (!stack().empty() && stack().back() == this) stack().pop_back();
  }

  GradRecord(const GradRecord&) = delete;
  GradRecord& operator=(const GradRecord&) = delete;

  static GradRecord* active() { return stack().empty() ? nullptr : stack().back(); }

  // See NoGradScope.
  static void push_null() { stack().push_back(nullptr); }
  static void pop_null() { stack().pop_back(); }

  std::uint64_t epoch() const { return epoch_; }

  // Returns the node id of `t` under this record, registering it as a leaf if
  // it has not been seen yet.
  std::int64_t lookup(const Tensor<S>& t) {
    auto* st = t.storage();
    if (st->record_epoch == epoch_ && st->node >= 0) return st->node;
    std::int64_t id = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(Node{{}, nullptr, t.requires_grad()});
    st->record_epoch = epoch_;
    st->node = id;
    return id;
  }

  // Registers `out` as the product of an op over `inputs`. `backward` receives
  // the upstream gradient of `out` and must push input gradients via
  // accumulate(). Only called when some input requires grad.
  void record_op(const std::vector<const Tensor<S>*>& inputs, Tensor<S>& out, BackwardFn backward) {
    std::vector<std::int64_t> in_ids;
    in_ids.reserve(inputs.size());
    bool any = false;
    for (const auto* t : inputs) {
      in_ids.push_back(lookup(*t));
      any = any || t->requires_grad();
    }
    std::int64_t id = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(Node{std::move(in_ids), any ? std::move(backward) : nullptr, any});
    out.set_requires_grad(any);
    auto* st = out.storage();
    st->record_epoch = epoch_;
    st->node = id;
  }

  void accumulate(const Tensor<S>& target, const Tensor<S>& grad) {
    auto* st = target.storage();
    if (st->record_epoch != epoch_ || st->node < 0) return;
    accumulate_node(st->node, grad);
  }

  void accumulate_node(std::int64_t node, const Tensor<S>& grad) {
    if (!nodes_[static_cast<std::size_t>(node)].needs_grad) return;
    auto& slot = grads_[static_cast<std::size_t>(node)];
    if (!slot.has_value()) {
      // Adopt fresh buffers; clone only when the gradient aliases live storage.
      slot = grad.storage_use_count() == 1 ? grad : grad.clone();
      return;
    }
    require(slot->numel() == grad.numel(), "gradient accumulation shape mismatch");
    auto dst = slot->mutable_data();
    auto src = grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // Keeps the gradient of a non-leaf tensor alive through backward (interior
  // gradients are otherwise dropped once consumed).
  void retain(const Tensor<S>& t) {
    std::int64_t id = lookup(t);
    nodes_[static_cast<std::size_t>(id)].retain = true;
  }

  // Runs the tape in reverse. `loss` must be a scalar recorded under this
  // record. Throws if called twice.
  void backward(const Tensor<S>& loss) {
    if (consumed_) throw std::runtime_error("GradRecord::backward called twice on one record");
    consumed_ = true;
    require(loss.numel() == 1, "backward requires a scalar loss, got " + shape_str(loss.shape()));
    auto* st = loss.storage();
    require(st->record_epoch == epoch_ && st->node >= 0,
            "backward: loss was not produced under this record");
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[static_cast<std::size_t>(st->node)] = Tensor<S>::full(loss.shape(), S(1));
    push_null();  // ops invoked by backward rules must not record
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.backward || !grads_[i].has_value()) continue;
      node.backward(*this, *grads_[i]);
      // Interior gradients are dropped once consumed so long tapes do not
      // hold every intermediate gradient at once; leaves and retained nodes
      // keep theirs.
      if (!node.inputs.empty() && !node.retain) grads_[i].reset();
    }
    pop_null();
  }

  // Gradient of a tensor after backward; absent when the tensor was not
  // reachable from the loss (callers treat absent as zero).
  std::optional<Tensor<S>> gradient_of(const Tensor<S>& t) const {
    auto* st = t.storage();
    if (st->record_epoch != epoch_ || st->node < 0) return std::nullopt;
    if (static_cast<std::size_t>(st->node) >= grads_.size()) return std::nullopt;
    return grads_[static_cast<std::size_t>(st->node)];
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::int64_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    bool retain = false;
  };

  static std::vector<GradRecord*>& stack() {
    thread_local std::vector<GradRecord*> s;
    return s;
  }

  static std::atomic<std::uint64_t>& next_epoch() {
    static std::atomic<std::uint64_t> e{1};
    return e;
  }

  std::uint64_t epoch_;
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<S>>> grads_;
  bool consumed_ = false;
};

// Temporarily disables recording (pushes a null scope) for pure evaluation
// inside an active record, e.g. metric computation mid-training.
template <std::floating_point S>
class NoGradScope {
 public:
  NoGradScope() { GradRecord<S>::push_null(); }
  ~NoGradScope() { GradRecord<S>::pop_null(); }
};

}  // namespace memba
