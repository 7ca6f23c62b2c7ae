// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace memba {

using Shape = std::vector<std::int64_t>;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    require(d >= 0, "negative extent in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

// Trailing-dimension broadcast: dims align from the right, each pair must be
// equal or one of them 1. Incompatible shapes throw.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da == db || db == 1)
      out[out.size() - 1 - i] = da;
    else if (da == 1)
      out[out.size() - 1 - i] = db;
    else
      require(false, "broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
  }
  return out;
}

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Shared storage: holds the buffer plus the identity used by GradRecord to
// recognize a tensor across copies (copies of a Tensor alias one Storage).
template <std::floating_point S>
struct Storage {
  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;
  // Autograd bookkeeping, valid only while record_epoch matches the active
  // record. Stale values are ignored and reassigned on next use.
  std::int64_t node = -1;
  std::uint64_t record_epoch = 0;
};

template <std::floating_point S>
class Tensor {
 public:
  Tensor() : st_(std::make_shared<Storage<S>>()) {}

  Tensor(Shape shape, std::vector<S> data) : st_(std::make_shared<Storage<S>>()) {
    require(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
            "tensor data length does not match shape " + shape_str(shape));
    st_->shape = std::move(shape);
    st_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), S(0)));
  }

  static Tensor full(Shape shape, S v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), v));
  }

  static Tensor scalar(S v) { return Tensor(Shape{}, std::vector<S>{v}); }

  const Shape& shape() const { return st_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(st_->shape.size()); }
  std::int64_t dim(std::int64_t i) const { return st_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(st_->data.size()); }

  std::span<const S> data() const { return {st_->data.data(), st_->data.size()}; }
  // Mutable access is for leaf edits (init, optimizer steps, checkpoint load).
  // Recorded intermediates are treated as immutable.
  std::span<S> mutable_data() { return {st_->data.data(), st_->data.size()}; }

  S item() const {
    require(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
    return st_->data[0];
  }

  bool requires_grad() const { return st_->requires_grad; }
  Tensor& set_requires_grad(bool f) {
    st_->requires_grad = f;
    return *this;
  }

  bool same_storage(const Tensor& other) const { return st_ == other.st_; }
  Storage<S>* storage() const { return st_.get(); }
  long storage_use_count() const { return st_.use_count(); }

  Tensor clone() const {
    Tensor t(st_->shape, st_->data);
    t.st_->requires_grad = st_->requires_grad;
    return t;
  }

  bool defined() const { return !st_->shape.empty() || !st_->data.empty(); }

 private:
  std::shared_ptr<Storage<S>> st_;
};

}  // namespace memba
