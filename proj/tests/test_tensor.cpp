// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// numeric-core tests: value oracles for the primitives plus the central
// finite-difference gradient check over randomized shapes.

#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "memba/autograd.hpp"
#include "memba/gradcheck.hpp"
#include "memba/ops.hpp"
#include "memba/random.hpp"
#include "memba/tensor.hpp"

namespace {

using memba::GradRecord;
using memba::Rng;
using memba::Shape;
using Tensor = memba::Tensor<double>;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

TEST(Tensor, ShapeInvariants) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, BroadcastRejectsIncompatible) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4});
  EXPECT_THROW(memba::add(a, b), std::invalid_argument);
}

TEST(Tensor, BroadcastPreservesOperandElements) {
  // Broadcasting never changes the number of semantic elements of the
  // non-broadcast operand: out has the broadcast shape, inputs untouched.
  Rng rng(7);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  auto a_before = std::vector<double>(a.data().begin(), a.data().end());
  Tensor out = memba::mul(a, b);
  EXPECT_EQ(out.shape(), (Shape{2, 3, 4}));
  EXPECT_EQ(a.numel(), 24);
  EXPECT_EQ(b.numel(), 4);
  EXPECT_TRUE(std::equal(a_before.begin(), a_before.end(), a.data().begin()));
  for (int i = 0; i < 24; ++i)
    EXPECT_DOUBLE_EQ(out.data()[i], a.data()[i] * b.data()[i % 4]);
}

TEST(Tensor, GeneralBroadcastMiddleAxis) {
  // (2,1,3) * (1,4,1) -> (2,4,3) exercises the strided odometer path.
  Tensor a({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({1, 4, 1}, {10, 20, 30, 40});
  Tensor out = memba::mul(a, b);
  ASSERT_EQ(out.shape(), (Shape{2, 4, 3}));
  EXPECT_DOUBLE_EQ(out.data()[0], 10.0);
  EXPECT_DOUBLE_EQ(out.data()[3], 20.0);   // a[0,0,0]*b[0,1,0]
  EXPECT_DOUBLE_EQ(out.data()[23], 240.0); // a[1,0,2]*b[0,3,0]
}

TEST(Matmul, IdentityCase) {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor v({3}, {2.5, -1.0, 4.0});
  Tensor out = memba::matmul(eye, v);
  ASSERT_EQ(out.shape(), (Shape{3}));
  EXPECT_DOUBLE_EQ(out.data()[0], 2.5);
  EXPECT_DOUBLE_EQ(out.data()[1], -1.0);
  EXPECT_DOUBLE_EQ(out.data()[2], 4.0);
}

TEST(Matmul, HandValues) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {1, 1});
  Tensor out = memba::matmul(a, b);
  ASSERT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(out.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(out.data()[1], 7.0);
}

TEST(Matmul, ShapeMismatchRejected) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 2});
  EXPECT_THROW(memba::matmul(a, b), std::invalid_argument);
}

TEST(Matmul, TransposeBMatchesExplicitTranspose) {
  Rng rng(3);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({6, 5}, rng);
  Tensor via_flag = memba::matmul(a, b, /*transpose_b=*/true);
  Tensor via_copy = memba::matmul(a, memba::transpose(b, 0, 1));
  ASSERT_EQ(via_flag.shape(), via_copy.shape());
  for (std::int64_t i = 0; i < via_flag.numel(); ++i)
    EXPECT_NEAR(via_flag.data()[i], via_copy.data()[i], 1e-14);
}

TEST(Activations, SiluValues) {
  Tensor x({3}, {0.0, 50.0, -50.0});
  Tensor y = memba::silu(x);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.0);
  EXPECT_NEAR(y.data()[1], 50.0, 1e-9);  // sigmoid asymptote
  EXPECT_NEAR(y.data()[2], 0.0, 1e-9);
}

TEST(Activations, SoftplusValues) {
  Tensor x({2}, {0.0, 100.0});
  Tensor y = memba::softplus(x);
  EXPECT_NEAR(y.data()[0], std::log(2.0), 1e-12);
  EXPECT_NEAR(y.data()[1], 100.0, 1e-9);
}

TEST(Activations, SoftplusStrictlyPositive) {
  Rng rng(11);
  Tensor x = random_tensor({1000}, rng, -60.0, 60.0);
  Tensor y = memba::softplus(x);
  for (double v : y.data()) EXPECT_GT(v, 0.0);
}

TEST(Backward, SquareAtThree) {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  GradRecord<double> rec;
  Tensor loss = memba::mul(x, x);
  rec.backward(loss);
  auto g = rec.gradient_of(x);
  ASSERT_TRUE(g.has_value());
  EXPECT_DOUBLE_EQ(g->data()[0], 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = random_tensor({3}, *new Rng(1));
  x.set_requires_grad(true);
  GradRecord<double> rec;
  Tensor y = memba::silu(x);
  EXPECT_THROW(rec.backward(y), std::invalid_argument);
}

TEST(Backward, SingleUseContract) {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  GradRecord<double> rec;
  Tensor loss = memba::mul(x, x);
  rec.backward(loss);
  EXPECT_THROW(rec.backward(loss), std::runtime_error);
}

TEST(Backward, FanOutAccumulatesAdditively) {
  Tensor x = Tensor::scalar(1.5);
  x.set_requires_grad(true);
  GradRecord<double> rec;
  // loss = x*x + 3x -> d/dx = 2x + 3 = 6
  Tensor loss = memba::add(memba::mul(x, x), memba::scale(x, 3.0));
  rec.backward(loss);
  EXPECT_DOUBLE_EQ(rec.gradient_of(x)->data()[0], 6.0);
}

TEST(Backward, UnreachableGradAbsent) {
  Tensor x = Tensor::scalar(1.0);
  Tensor z = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  z.set_requires_grad(true);
  GradRecord<double> rec;
  Tensor loss = memba::mul(x, x);
  memba::silu(z);  // recorded but not reachable from loss
  rec.backward(loss);
  EXPECT_FALSE(rec.gradient_of(z).has_value());
}

TEST(ShapeOps, ConcatSplitRoundTrip) {
  Rng rng(5);
  for (int axis = 0; axis < 3; ++axis) {
    Tensor x = random_tensor({4, 6, 2}, rng);
    auto parts = memba::split(x, axis == 1 ? 3 : 2, axis);
    Tensor back = memba::concat(parts, axis);
    ASSERT_EQ(back.shape(), x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i)
      EXPECT_EQ(back.data()[i], x.data()[i]);  // exact reproduction
  }
}

TEST(ShapeOps, SplitRequiresDivisibleExtent) {
  Tensor x = Tensor::zeros({5, 2});
  EXPECT_THROW(memba::split(x, 2, 0), std::invalid_argument);
}

TEST(Reductions, SumAndMeanAxis) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor s0 = memba::sum_axis(x, 0);
  ASSERT_EQ(s0.shape(), (Shape{3}));
  EXPECT_DOUBLE_EQ(s0.data()[0], 5.0);
  Tensor m1 = memba::mean_axis(x, 1, /*keepdim=*/true);
  ASSERT_EQ(m1.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(m1.data()[0], 2.0);
  EXPECT_DOUBLE_EQ(m1.data()[1], 5.0);
}

TEST(Losses, CrossEntropyUniformLogits) {
  Tensor logits = Tensor::zeros({2, 4});
  Tensor loss = memba::cross_entropy(logits, {0, 3});
  EXPECT_NEAR(loss.item(), std::log(4.0), 1e-12);
}

TEST(Embedding, GatherAndScatter) {
  Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
  table.set_requires_grad(true);
  GradRecord<double> rec;
  Tensor out = memba::embedding(table, {2, 0, 2}, {3});
  ASSERT_EQ(out.shape(), (Shape{3, 2}));
  EXPECT_DOUBLE_EQ(out.data()[0], 5.0);
  Tensor loss = memba::sum(out);
  rec.backward(loss);
  auto g = rec.gradient_of(table);
  ASSERT_TRUE(g.has_value());
  EXPECT_DOUBLE_EQ(g->data()[0], 1.0);  // row 0 used once
  EXPECT_DOUBLE_EQ(g->data()[2], 0.0);  // row 1 unused
  EXPECT_DOUBLE_EQ(g->data()[4], 2.0);  // row 2 used twice
}

// --- Finite-difference gradient oracle over every differentiable primitive ---

TEST(GradCheck, MatmulAgainstFiniteDifferences) {
  Rng rng(21);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  auto res = memba::check_gradients("matmul", {a, b}, [&] {
    return memba::sum(memba::matmul(a, b));
  });
  EXPECT_TRUE(res.pass) << res.max_rel_err;
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(GradCheck, SiluDerivativeAtOne) {
  Tensor x = Tensor::scalar(1.0);
  auto res = memba::check_gradients("silu", {x}, [&] { return memba::sum(memba::silu(x)); });
  EXPECT_TRUE(res.pass);
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(GradCheck, ComposedLossAgainstFiniteDifferences) {
  Rng rng(22);
  Tensor w = random_tensor({3, 3}, rng);
  Tensor x = random_tensor({3, 2}, rng);
  auto res = memba::check_gradients("silu(matmul)", {w, x}, [&] {
    return memba::sum(memba::silu(memba::matmul(w, x)));
  });
  EXPECT_TRUE(res.pass) << res.max_rel_err;
  EXPECT_LT(res.max_rel_err, 1e-6);
}

void expect_grad_ok(const char* name, const Shape& shape, std::vector<Tensor> inputs,
                    const std::function<Tensor()>& fn) {
  auto res = memba::check_gradients(name, std::move(inputs), fn);
  EXPECT_TRUE(res.pass) << name << " shape " << memba::shape_str(shape) << " rel err "
                        << res.max_rel_err;
  EXPECT_LT(res.max_rel_err, 1e-6) << name;
}

TEST(GradCheck, AllPrimitivesRandomizedShapes) {
  Rng rng(23);
  // Shapes up to rank 4, kept tiny so the FD loop stays quick.
  std::vector<Shape> shapes = {{5}, {2, 3}, {2, 2, 3}, {2, 1, 2, 3}};
  for (const auto& shape : shapes) {
    Tensor x = random_tensor(shape, rng, 0.2, 1.8);  // positive domain for log/rsqrt
    Tensor y = random_tensor(shape, rng, -1.0, 1.0);

    expect_grad_ok("add", shape, {x, y}, [&] { return memba::sum(memba::add(x, y)); });
    expect_grad_ok("sub", shape, {x, y}, [&] { return memba::sum(memba::sub(x, y)); });
    expect_grad_ok("mul", shape, {x, y}, [&] { return memba::sum(memba::mul(x, y)); });
    expect_grad_ok("exp", shape, {y}, [&] { return memba::sum(memba::exp(y)); });
    expect_grad_ok("log", shape, {x}, [&] { return memba::sum(memba::log(x)); });
    expect_grad_ok("rsqrt", shape, {x}, [&] { return memba::sum(memba::rsqrt(x)); });
    expect_grad_ok("sigmoid", shape, {y}, [&] { return memba::sum(memba::sigmoid(y)); });
    expect_grad_ok("silu", shape, {y}, [&] { return memba::sum(memba::silu(y)); });
    expect_grad_ok("softplus", shape, {y}, [&] { return memba::sum(memba::softplus(y)); });
    expect_grad_ok("mean", shape, {x, y}, [&] { return memba::mean(memba::mul(x, y)); });
    expect_grad_ok("sum_axis", shape, {x, y},
                   [&] { return memba::sum(memba::sum_axis(memba::mul(x, y), 0)); });
    expect_grad_ok("mean_axis", shape, {x, y}, [&] {
      return memba::sum(
          memba::mean_axis(memba::mul(x, y), static_cast<std::int64_t>(shape.size()) - 1, true));
    });
    expect_grad_ok("reshape", shape, {y},
                   [&] { return memba::sum(memba::silu(memba::reshape(y, {y.numel()}))); });
    expect_grad_ok("slice", shape, {y}, [&] {
      return memba::sum(memba::silu(memba::slice(y, 0, 0, y.dim(0) - 1)));
    });
    expect_grad_ok("concat", shape, {x, y}, [&] {
      return memba::sum(memba::silu(memba::concat(std::vector<Tensor>{x, y}, 0)));
    });
    expect_grad_ok("reset", shape, {y},
                   [&] { return memba::sum(memba::reset_threshold(y, 0.5)); });
    if (shape.size() >= 2) {
      expect_grad_ok("transpose", shape, {y},
                     [&] { return memba::sum(memba::silu(memba::transpose(y, 0, 1))); });
    }
  }
}

TEST(GradCheck, BroadcastGradients) {
  Rng rng(31);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor c = random_tensor({2, 3, 1}, rng);
  auto res = memba::check_gradients("broadcast", {a, b, c}, [&] {
    return memba::sum(memba::silu(memba::mul(memba::add(a, b), c)));
  });
  EXPECT_TRUE(res.pass) << res.max_rel_err;
}

TEST(GradCheck, CrossEntropyGradients) {
  Rng rng(33);
  Tensor logits = random_tensor({4, 5}, rng);
  std::vector<std::int64_t> labels = {1, 0, 4, 2};
  auto res = memba::check_gradients("cross_entropy", {logits}, [&] {
    return memba::cross_entropy(logits, labels);
  });
  EXPECT_TRUE(res.pass) << res.max_rel_err;
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(Rng, CounterAddressableDeterminism) {
  Rng a(42, 1, 10);
  Rng b(42, 1, 10);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42, 1, 11);
  EXPECT_NE(Rng(42, 1, 10).next_u64(), c.next_u64());
  Rng d(42, 2, 10);
  EXPECT_NE(Rng(42, 1, 10).next_u64(), d.next_u64());
}

TEST(Rng, UniformIntBounds) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    auto v = rng.uniform_int(-3, 3);
    EXPECT_GE(v, -3);
    EXPECT_LE(v, 3);
  }
}

}  // namespace
