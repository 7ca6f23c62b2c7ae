// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives over Tensor. Every public op is pure with respect
// to its inputs; when a GradRecord is active and an input requires grad, the
// op appends a node with its backward rule. Helpers suffixed _eval never
// record and are what backward closures use internally.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "memba/autograd.hpp"
#include "memba/tensor.hpp"

namespace memba {

namespace detail {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

template <class S>
GradRecord<S>* recorder(std::initializer_list<const Tensor<S>*> ins) {
  auto* r = GradRecord<S>::active();
  if (!r) return nullptr;
  for (const auto* t : ins)
    if (t->requires_grad()) return r;
  return nullptr;
}

// Elementwise binary with trailing-dimension broadcast.
template <class S, class F>
Tensor<S> binary_eval(const Tensor<S>& a, const Tensor<S>& b, F f) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto da = a.data();
  auto db = b.data();
  if (sa == sb) {
    Tensor<S> out = Tensor<S>::zeros(sa);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i], db[i]);
    return out;
  }
  if (b.numel() == 1) {
    Tensor<S> out = Tensor<S>::zeros(sa);
    auto o = out.mutable_data();
    S bv = db[0];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i], bv);
    return out;
  }
  if (a.numel() == 1) {
    Tensor<S> out = Tensor<S>::zeros(sb);
    auto o = out.mutable_data();
    S av = da[0];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av, db[i]);
    return out;
  }
  Shape os = broadcast_shape(sa, sb);
  // Fast path: b is a suffix of a (e.g. (B,L,D) op (D)).
  if (os == sa && sb.size() <= sa.size() &&
      std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()))) {
    Tensor<S> out = Tensor<S>::zeros(sa);
    auto o = out.mutable_data();
    std::size_t bn = db.size();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i], db[i % bn]);
    return out;
  }
  // Fast path: same rank, b differs only by a trailing 1 (e.g. (B,L,D) op (B,L,1)).
  if (os == sa && sb.size() == sa.size() && sb.back() == 1 &&
      std::equal(sb.begin(), sb.end() - 1, sa.begin())) {
    Tensor<S> out = Tensor<S>::zeros(sa);
    auto o = out.mutable_data();
    std::size_t inner = static_cast<std::size_t>(sa.back());
    for (std::size_t r = 0; r < db.size(); ++r) {
      S bv = db[r];
      std::size_t base = r * inner;
      for (std::size_t j = 0; j < inner; ++j) o[base + j] = f(da[base + j], bv);
    }
    return out;
  }
  // General strided odometer walk.
  Tensor<S> out = Tensor<S>::zeros(os);
  auto o = out.mutable_data();
  std::size_t rank = os.size();
  std::vector<std::int64_t> stra(rank, 0), strb(rank, 0), idx(rank, 0);
  {
    auto base_a = row_major_strides(sa);
    auto base_b = row_major_strides(sb);
    for (std::size_t i = 0; i < rank; ++i) {
      std::size_t ra = sa.size() + i >= rank ? sa.size() + i - rank : static_cast<std::size_t>(-1);
      std::size_t rb = sb.size() + i >= rank ? sb.size() + i - rank : static_cast<std::size_t>(-1);
      if (ra != static_cast<std::size_t>(-1) && sa[ra] != 1) stra[i] = base_a[ra];
      if (rb != static_cast<std::size_t>(-1) && sb[rb] != 1) strb[i] = base_b[rb];
    }
  }
  std::int64_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = f(da[static_cast<std::size_t>(oa)], db[static_cast<std::size_t>(ob)]);
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      oa += stra[d];
      ob += strb[d];
      if (idx[d] < os[d]) break;
      oa -= stra[d] * os[d];
      ob -= strb[d] * os[d];
      idx[d] = 0;
    }
  }
  return out;
}

// Sums `g` down to `target` shape (inverse of broadcasting).
template <class S>
Tensor<S> reduce_to_shape(const Tensor<S>& g, const Shape& target) {
  if (g.shape() == target) return g;
  const Shape& gs = g.shape();
  Tensor<S> out = Tensor<S>::zeros(target);
  auto o = out.mutable_data();
  auto d = g.data();
  std::size_t rank = gs.size();
  auto tstr = row_major_strides(target);
  std::vector<std::int64_t> str(rank, 0), idx(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t rt = target.size() + i >= rank ? target.size() + i - rank : static_cast<std::size_t>(-1);
    if (rt != static_cast<std::size_t>(-1) && target[rt] != 1) str[i] = tstr[rt];
  }
  std::int64_t ot = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    o[static_cast<std::size_t>(ot)] += d[i];
    for (std::size_t k = rank; k-- > 0;) {
      idx[k]++;
      ot += str[k];
      if (idx[k] < gs[k]) break;
      ot -= str[k] * gs[k];
      idx[k] = 0;
    }
  }
  return out;
}

template <class S, class F>
Tensor<S> unary_eval(const Tensor<S>& x, F f) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto o = out.mutable_data();
  auto d = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(d[i]);
  return out;
}

template <class S>
S sigmoid_scalar(S x) {
  if (x >= S(0)) {
    S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <class S>
S softplus_scalar(S x) {
  if (x > S(30)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out = detail::binary_eval(a, b, [](S x, S y) { return x + y; });
  if (auto* r = detail::recorder<S>({&a, &b})) {
    r->record_op({&a, &b}, out, [a, b](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(a, detail::reduce_to_shape(g, a.shape()));
      rec.accumulate(b, detail::reduce_to_shape(g, b.shape()));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out = detail::binary_eval(a, b, [](S x, S y) { return x - y; });
  if (auto* r = detail::recorder<S>({&a, &b})) {
    r->record_op({&a, &b}, out, [a, b](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(a, detail::reduce_to_shape(g, a.shape()));
      Tensor<S> gb = detail::unary_eval(g, [](S v) { return -v; });
      rec.accumulate(b, detail::reduce_to_shape(gb, b.shape()));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out = detail::binary_eval(a, b, [](S x, S y) { return x * y; });
  if (auto* r = detail::recorder<S>({&a, &b})) {
    r->record_op({&a, &b}, out, [a, b](GradRecord<S>& rec, const Tensor<S>& g) {
      if (a.requires_grad()) {
        Tensor<S> ga = detail::binary_eval(g, b, [](S x, S y) { return x * y; });
        rec.accumulate(a, detail::reduce_to_shape(ga, a.shape()));
      }
      if (b.requires_grad()) {
        Tensor<S> gb = detail::binary_eval(g, a, [](S x, S y) { return x * y; });
        rec.accumulate(b, detail::reduce_to_shape(gb, b.shape()));
      }
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  Tensor<S> out = detail::unary_eval(x, [c](S v) { return c * v; });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, c](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::unary_eval(g, [c](S v) { return c * v; }));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  Tensor<S> out = detail::unary_eval(x, [c](S v) { return v + c; });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x](GradRecord<S>& rec, const Tensor<S>& g) { rec.accumulate(x, g); });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> neg(const Tensor<S>& x) {
  return scale(x, S(-1));
}

// ---------------------------------------------------------------------------
// Elementwise transcendental / activations
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> exp(const Tensor<S>& x) {
  Tensor<S> out = detail::unary_eval(x, [](S v) { return std::exp(v); });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, out](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::binary_eval(g, out, [](S gv, S ov) { return gv * ov; }));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> log(const Tensor<S>& x) {
  Tensor<S> out = detail::unary_eval(x, [](S v) { return std::log(v); });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::binary_eval(g, x, [](S gv, S xv) { return gv / xv; }));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> rsqrt(const Tensor<S>& x) {
  Tensor<S> out = detail::unary_eval(x, [](S v) { return S(1) / std::sqrt(v); });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, out](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::binary_eval(g, out, [](S gv, S ov) {
        return gv * S(-0.5) * ov * ov * ov;
      }));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> out = detail::unary_eval(x, [](S v) { return detail::sigmoid_scalar(v); });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, out](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::binary_eval(g, out, [](S gv, S ov) {
        return gv * ov * (S(1) - ov);
      }));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> silu(const Tensor<S>& x) {
  Tensor<S> sig = detail::unary_eval(x, [](S v) { return detail::sigmoid_scalar(v); });
  Tensor<S> out = detail::binary_eval(x, sig, [](S xv, S sv) { return xv * sv; });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, sig](GradRecord<S>& rec, const Tensor<S>& g) {
      auto gx = Tensor<S>::zeros(x.shape());
      auto o = gx.mutable_data();
      auto gd = g.data();
      auto xd = x.data();
      auto sd = sig.data();
      for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = gd[i] * sd[i] * (S(1) + xd[i] * (S(1) - sd[i]));
      rec.accumulate(x, gx);
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> softplus(const Tensor<S>& x) {
  Tensor<S> out = detail::unary_eval(x, [](S v) { return detail::softplus_scalar(v); });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::binary_eval(g, x, [](S gv, S xv) {
        return gv * detail::sigmoid_scalar(xv);
      }));
    });
  }
  return out;
}

// Reset nonlinearity: zero where x > threshold, identity elsewhere. Ties at
// the threshold are preserved (strict inequality). Backward is the a.e.
// derivative: gradient passes through kept entries, zero through reset ones.
template <std::floating_point S>
Tensor<S> reset_threshold(const Tensor<S>& x, S threshold) {
  require(threshold > S(0) || std::isinf(static_cast<double>(threshold)),
          "reset_threshold requires positive threshold");
  Tensor<S> out = detail::unary_eval(x, [threshold](S v) { return v > threshold ? S(0) : v; });
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, threshold](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::binary_eval(g, x, [threshold](S gv, S xv) {
        return xv > threshold ? S(0) : gv;
      }));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

// a: rank >= 2 with trailing extent K (leading dims act as batch rows),
// b: rank 2 (K x N), or (N x K) with transpose_b, or rank 1 (K).
template <std::floating_point S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b = false) {
  require(a.rank() >= 1 && b.rank() >= 1 && b.rank() <= 2, "matmul: unsupported ranks");
  bool vec_rhs = b.rank() == 1;
  require(!(vec_rhs && transpose_b), "matmul: transpose_b with vector rhs");
  require(a.rank() >= 2 || !vec_rhs, "matmul: vector-vector product not supported");
  std::int64_t k = a.shape().back();
  std::int64_t bk = vec_rhs ? b.dim(0) : (transpose_b ? b.dim(1) : b.dim(0));
  std::int64_t n = vec_rhs ? 1 : (transpose_b ? b.dim(0) : b.dim(1));
  require(k == bk, "matmul: inner extents disagree: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
  std::int64_t rows = a.numel() / std::max<std::int64_t>(k, 1);
  Shape os(a.shape().begin(), a.shape().end() - 1);
  if (!vec_rhs) os.push_back(n);
  Tensor<S> out = Tensor<S>::zeros(os);

  detail::ECMap<S> am(a.data().data(), rows, k);
  detail::EMap<S> om(out.mutable_data().data(), rows, n);
  if (vec_rhs) {
    detail::ECMap<S> bm(b.data().data(), k, 1);
    om.noalias() = am * bm;
  } else if (transpose_b) {
    detail::ECMap<S> bm(b.data().data(), n, k);
    om.noalias() = am * bm.transpose();
  } else {
    detail::ECMap<S> bm(b.data().data(), k, n);
    om.noalias() = am * bm;
  }

  if (auto* r = detail::recorder<S>({&a, &b})) {
    r->record_op({&a, &b}, out, [a, b, transpose_b, rows, k, n](GradRecord<S>& rec,
                                                                const Tensor<S>& g) {
      detail::ECMap<S> gm(g.data().data(), rows, n);
      detail::ECMap<S> am2(a.data().data(), rows, k);
      bool vec = b.rank() == 1;
      if (a.requires_grad()) {
        Tensor<S> ga = Tensor<S>::zeros(a.shape());
        detail::EMap<S> gam(ga.mutable_data().data(), rows, k);
        if (vec) {
          detail::ECMap<S> bm(b.data().data(), k, 1);
          gam.noalias() = gm * bm.transpose();
        } else if (transpose_b) {
          detail::ECMap<S> bm(b.data().data(), n, k);
          gam.noalias() = gm * bm;
        } else {
          detail::ECMap<S> bm(b.data().data(), k, n);
          gam.noalias() = gm * bm.transpose();
        }
        rec.accumulate(a, ga);
      }
      if (b.requires_grad()) {
        Tensor<S> gb = Tensor<S>::zeros(b.shape());
        if (vec) {
          detail::EMap<S> gbm(gb.mutable_data().data(), k, 1);
          gbm.noalias() = am2.transpose() * gm;
        } else if (transpose_b) {
          detail::EMap<S> gbm(gb.mutable_data().data(), n, k);
          gbm.noalias() = gm.transpose() * am2;
        } else {
          detail::EMap<S> gbm(gb.mutable_data().data(), k, n);
          gbm.noalias() = am2.transpose() * gm;
        }
        rec.accumulate(b, gb);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = 0;
  for (S v : x.data()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, Tensor<S>::full(x.shape(), g.data()[0]));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> mean(const Tensor<S>& x) {
  require(x.numel() > 0, "mean of empty tensor");
  S acc = 0;
  for (S v : x.data()) acc += v;
  S inv = S(1) / static_cast<S>(x.numel());
  Tensor<S> out = Tensor<S>::scalar(acc * inv);
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, inv](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, Tensor<S>::full(x.shape(), g.data()[0] * inv));
    });
  }
  return out;
}

namespace detail {

template <std::floating_point S>
Tensor<S> sum_axis_eval(const Tensor<S>& x, std::int64_t axis, bool keepdim) {
  const Shape& s = x.shape();
  std::int64_t outer = 1, inner = 1, extent = s[static_cast<std::size_t>(axis)];
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  if (keepdim)
    os[static_cast<std::size_t>(axis)] = 1;
  else
    os.erase(os.begin() + axis);
  Tensor<S> out = Tensor<S>::zeros(os);
  auto o = out.mutable_data();
  auto d = x.data();
  for (std::int64_t a = 0; a < outer; ++a)
    for (std::int64_t e = 0; e < extent; ++e) {
      const S* src = d.data() + (a * extent + e) * inner;
      S* dst = o.data() + a * inner;
      for (std::int64_t j = 0; j < inner; ++j) dst[j] += src[j];
    }
  return out;
}

// Expands a reduced-gradient back over a summed axis.
template <std::floating_point S>
Tensor<S> expand_axis_eval(const Tensor<S>& g, const Shape& target, std::int64_t axis, S factor) {
  std::int64_t outer = 1, inner = 1, extent = target[static_cast<std::size_t>(axis)];
  for (std::int64_t i = 0; i < axis; ++i) outer *= target[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < target.size(); ++i)
    inner *= target[i];
  Tensor<S> out = Tensor<S>::zeros(target);
  auto o = out.mutable_data();
  auto d = g.data();
  for (std::int64_t a = 0; a < outer; ++a)
    for (std::int64_t e = 0; e < extent; ++e) {
      S* dst = o.data() + (a * extent + e) * inner;
      const S* src = d.data() + a * inner;
      for (std::int64_t j = 0; j < inner; ++j) dst[j] = src[j] * factor;
    }
  return out;
}

}  // namespace detail

template <std::floating_point S>
Tensor<S> sum_axis(const Tensor<S>& x, std::int64_t axis, bool keepdim = false) {
  require(axis >= 0 && axis < x.rank(), "sum_axis: axis out of range");
  Tensor<S> out = detail::sum_axis_eval(x, axis, keepdim);
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, axis](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::expand_axis_eval(g, x.shape(), axis, S(1)));
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> mean_axis(const Tensor<S>& x, std::int64_t axis, bool keepdim = false) {
  require(axis >= 0 && axis < x.rank(), "mean_axis: axis out of range");
  std::int64_t extent = x.dim(axis);
  require(extent > 0, "mean_axis over empty extent");
  S inv = S(1) / static_cast<S>(extent);
  Tensor<S> out = detail::sum_axis_eval(x, axis, keepdim);
  for (auto& v : out.mutable_data()) v *= inv;
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, axis, inv](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::expand_axis_eval(g, x.shape(), axis, inv));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  require(shape_numel(new_shape) == x.numel(),
          "reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
              shape_str(new_shape));
  Tensor<S> out(new_shape, std::vector<S>(x.data().begin(), x.data().end()));
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x](GradRecord<S>& rec, const Tensor<S>& g) {
      Tensor<S> gx(x.shape(), std::vector<S>(g.data().begin(), g.data().end()));
      rec.accumulate(x, gx);
    });
  }
  return out;
}

namespace detail {

template <std::floating_point S>
Tensor<S> transpose_eval(const Tensor<S>& x, std::int64_t a0, std::int64_t a1) {
  Shape os = x.shape();
  std::swap(os[static_cast<std::size_t>(a0)], os[static_cast<std::size_t>(a1)]);
  Tensor<S> out = Tensor<S>::zeros(os);
  auto in_str = row_major_strides(x.shape());
  std::swap(in_str[static_cast<std::size_t>(a0)], in_str[static_cast<std::size_t>(a1)]);
  auto o = out.mutable_data();
  auto d = x.data();
  std::size_t rank = os.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t off = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = d[static_cast<std::size_t>(off)];
    for (std::size_t k = rank; k-- > 0;) {
      idx[k]++;
      off += in_str[k];
      if (idx[k] < os[k]) break;
      off -= in_str[k] * os[k];
      idx[k] = 0;
    }
  }
  return out;
}

}  // namespace detail

template <std::floating_point S>
Tensor<S> transpose(const Tensor<S>& x, std::int64_t a0, std::int64_t a1) {
  require(a0 >= 0 && a0 < x.rank() && a1 >= 0 && a1 < x.rank(), "transpose: axis out of range");
  Tensor<S> out = detail::transpose_eval(x, a0, a1);
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, a0, a1](GradRecord<S>& rec, const Tensor<S>& g) {
      rec.accumulate(x, detail::transpose_eval(g, a0, a1));
    });
  }
  return out;
}

namespace detail {

template <std::floating_point S>
Tensor<S> slice_eval(const Tensor<S>& x, std::int64_t axis, std::int64_t start, std::int64_t len) {
  const Shape& s = x.shape();
  std::int64_t outer = 1, inner = 1, extent = s[static_cast<std::size_t>(axis)];
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[static_cast<std::size_t>(axis)] = len;
  Tensor<S> out = Tensor<S>::zeros(os);
  auto o = out.mutable_data();
  auto d = x.data();
  for (std::int64_t a = 0; a < outer; ++a)
    std::copy_n(d.data() + (a * extent + start) * inner, len * inner, o.data() + a * len * inner);
  return out;
}

}  // namespace detail

template <std::floating_point S>
Tensor<S> slice(const Tensor<S>& x, std::int64_t axis, std::int64_t start, std::int64_t len) {
  require(axis >= 0 && axis < x.rank(), "slice: axis out of range");
  require(start >= 0 && len >= 0 && start + len <= x.dim(axis), "slice: range out of bounds");
  Tensor<S> out = detail::slice_eval(x, axis, start, len);
  if (auto* r = detail::recorder<S>({&x})) {
    r->record_op({&x}, out, [x, axis, start, len](GradRecord<S>& rec, const Tensor<S>& g) {
      const Shape& s = x.shape();
      std::int64_t outer = 1, inner = 1, extent = s[static_cast<std::size_t>(axis)];
      for (std::int64_t i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
      for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
      Tensor<S> gx = Tensor<S>::zeros(s);
      auto o = gx.mutable_data();
      auto d = g.data();
      for (std::int64_t a = 0; a < outer; ++a)
        std::copy_n(d.data() + a * len * inner, len * inner,
                    o.data() + (a * extent + start) * inner);
      rec.accumulate(x, gx);
    });
  }
  return out;
}

template <std::floating_point S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::int64_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  require(axis >= 0 && axis < parts[0].rank(), "concat: axis out of range");
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == parts[0].rank(), "concat: rank mismatch");
    for (std::int64_t i = 0; i < p.rank(); ++i)
      require(i == axis || p.dim(i) == s0[static_cast<std::size_t>(i)],
              "concat: non-axis extent mismatch");
    total += p.dim(axis);
  }
  Shape os = s0;
  os[static_cast<std::size_t>(axis)] = total;
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= os[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < os.size(); ++i) inner *= os[i];
  Tensor<S> out = Tensor<S>::zeros(os);
  auto o = out.mutable_data();
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::int64_t ext = p.dim(axis);
    auto d = p.data();
    for (std::int64_t a = 0; a < outer; ++a)
      std::copy_n(d.data() + a * ext * inner, ext * inner,
                  o.data() + (a * total + off) * inner);
    off += ext;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (auto* r = GradRecord<S>::active(); r && any) {
    std::vector<const Tensor<S>*> ins;
    for (const auto& p : parts) ins.push_back(&p);
    std::vector<Tensor<S>> captured = parts;
    r->record_op(ins, out, [captured, axis, outer, inner, total](GradRecord<S>& rec,
                                                                 const Tensor<S>& g) {
      std::int64_t off2 = 0;
      auto d = g.data();
      for (const auto& p : captured) {
        std::int64_t ext = p.dim(axis);
        if (p.requires_grad()) {
          Tensor<S> gp = Tensor<S>::zeros(p.shape());
          auto o2 = gp.mutable_data();
          for (std::int64_t a = 0; a < outer; ++a)
            std::copy_n(d.data() + (a * total + off2) * inner, ext * inner,
                        o2.data() + a * ext * inner);
          rec.accumulate(p, gp);
        }
        off2 += ext;
      }
    });
  }
  return out;
}

// Splits into `k` equal parts along `axis` (the extent must divide evenly).
template <std::floating_point S>
std::vector<Tensor<S>> split(const Tensor<S>& x, std::int64_t k, std::int64_t axis) {
  require(axis >= 0 && axis < x.rank(), "split: axis out of range");
  require(k >= 1, "split: nonpositive part count");
  std::int64_t extent = x.dim(axis);
  require(extent % k == 0, "split: extent " + std::to_string(extent) +
                               " not divisible into " + std::to_string(k) + " parts");
  std::int64_t part = extent / k;
  std::vector<Tensor<S>> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) out.push_back(slice(x, axis, i * part, part));
  return out;
}

// ---------------------------------------------------------------------------
// Embedding and losses
// ---------------------------------------------------------------------------

// Gathers rows of `table` (V x E) for each id; output (ids_shape..., E).
template <std::floating_point S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<std::int64_t>& ids,
                    Shape ids_shape) {
  require(table.rank() == 2, "embedding: table must be rank 2");
  require(shape_numel(ids_shape) == static_cast<std::int64_t>(ids.size()),
          "embedding: ids shape mismatch");
  std::int64_t v = table.dim(0), e = table.dim(1);
  Shape os = ids_shape;
  os.push_back(e);
  Tensor<S> out = Tensor<S>::zeros(os);
  auto o = out.mutable_data();
  auto d = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < v, "embedding: id out of range");
    std::copy_n(d.data() + ids[i] * e, e, o.data() + static_cast<std::int64_t>(i) * e);
  }
  if (auto* r = detail::recorder<S>({&table})) {
    r->record_op({&table}, out, [table, ids, e](GradRecord<S>& rec, const Tensor<S>& g) {
      Tensor<S> gt = Tensor<S>::zeros(table.shape());
      auto o2 = gt.mutable_data();
      auto d2 = g.data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const S* src = d2.data() + static_cast<std::int64_t>(i) * e;
        S* dst = o2.data() + ids[i] * e;
        for (std::int64_t j = 0; j < e; ++j) dst[j] += src[j];
      }
      rec.accumulate(table, gt);
    });
  }
  return out;
}

// Mean softmax cross-entropy over rows. logits (R x C), labels length R.
template <std::floating_point S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<std::int64_t>& labels) {
  require(logits.rank() == 2, "cross_entropy: logits must be rank 2");
  std::int64_t rows = logits.dim(0), cols = logits.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == rows, "cross_entropy: label count mismatch");
  auto d = logits.data();
  S acc = 0;
  for (std::int64_t r2 = 0; r2 < rows; ++r2) {
    require(labels[static_cast<std::size_t>(r2)] >= 0 &&
                labels[static_cast<std::size_t>(r2)] < cols,
            "cross_entropy: label out of range");
    const S* row = d.data() + r2 * cols;
    S m = row[0];
    for (std::int64_t c = 1; c < cols; ++c) m = std::max(m, row[c]);
    S lse = 0;
    for (std::int64_t c = 0; c < cols; ++c) lse += std::exp(row[c] - m);
    lse = m + std::log(lse);
    acc += lse - row[labels[static_cast<std::size_t>(r2)]];
  }
  Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(rows));
  if (auto* r = detail::recorder<S>({&logits})) {
    r->record_op({&logits}, out, [logits, labels, rows, cols](GradRecord<S>& rec,
                                                              const Tensor<S>& g) {
      S gv = g.data()[0] / static_cast<S>(rows);
      Tensor<S> gl = Tensor<S>::zeros(logits.shape());
      auto o = gl.mutable_data();
      auto d2 = logits.data();
      for (std::int64_t r2 = 0; r2 < rows; ++r2) {
        const S* row = d2.data() + r2 * cols;
        S* grow = o.data() + r2 * cols;
        S m = row[0];
        for (std::int64_t c = 1; c < cols; ++c) m = std::max(m, row[c]);
        S z = 0;
        for (std::int64_t c = 0; c < cols; ++c) z += std::exp(row[c] - m);
        for (std::int64_t c = 0; c < cols; ++c) grow[c] = gv * std::exp(row[c] - m) / z;
        grow[labels[static_cast<std::size_t>(r2)]] -= gv;
      }
      rec.accumulate(logits, gl);
    });
  }
  return out;
}

// Mean squared error, composed from primitives.
template <std::floating_point S>
Tensor<S> mse(const Tensor<S>& pred, const Tensor<S>& target) {
  Tensor<S> d = sub(pred, target);
  return mean(mul(d, d));
}

}  // namespace memba
