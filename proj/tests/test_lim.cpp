// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// lim-gate tests: chunk planning, reset semantics, hand-evaluated membrane
// traces, cumulative-sum degeneration, length laws, and transfer.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "memba/gradcheck.hpp"
#include "memba/lim.hpp"
#include "memba/random.hpp"

namespace {

using memba::ChunkPlan;
using memba::LIMConfig;
using memba::Rng;
using memba::Shape;
using Tensor = memba::Tensor<double>;
using LIMState = memba::LIMState<double>;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

TEST(ChunkPlanOp, EightTokensFourChunks) {
  // L=8, T=4: chunks of 2 with no remainder.
  ChunkPlan p = memba::chunk_plan(8, 4);
  EXPECT_EQ(p.chunk_len, 2);
  EXPECT_EQ(p.remainder, 0);
  EXPECT_FALSE(p.padded);
}

TEST(ChunkPlanOp, FloorWithRemainder) {
  ChunkPlan p = memba::chunk_plan(10, 4);
  EXPECT_EQ(p.chunk_len, 2);
  EXPECT_EQ(p.remainder, 2);
  EXPECT_TRUE(p.padded);
}

TEST(ChunkPlanOp, SingleChunk) {
  ChunkPlan p = memba::chunk_plan(7, 1);
  EXPECT_EQ(p.chunk_len, 7);
  EXPECT_EQ(p.remainder, 0);
}

TEST(ChunkPlanOp, RejectsShortSequences) {
  EXPECT_THROW(memba::chunk_plan(3, 4), std::invalid_argument);
  EXPECT_THROW(memba::chunk_plan(5, 0), std::invalid_argument);
}

TEST(ChunkPlanOp, LengthIdentityHolds) {
  Rng rng(60);
  for (int i = 0; i < 200; ++i) {
    std::int64_t t = rng.uniform_int(1, 16);
    std::int64_t l = rng.uniform_int(t, 300);
    ChunkPlan p = memba::chunk_plan(l, t);
    EXPECT_EQ(p.chunk_len * p.num_chunks + p.remainder, l);
    EXPECT_GE(p.chunk_len, 1);
    EXPECT_LT(p.remainder, t);
  }
}

TEST(Reset, DirectApplications) {
  Tensor x({3}, {1.5, 0.5, -0.3});
  Tensor y = memba::reset(x, 1.0);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.0);   // above threshold -> 0
  EXPECT_DOUBLE_EQ(y.data()[1], 0.5);   // below preserved
  EXPECT_DOUBLE_EQ(y.data()[2], -0.3);  // negative preserved
}

TEST(Reset, TieAtThresholdPreserved) {
  Tensor x({1}, {1.0});
  Tensor y = memba::reset(x, 1.0);
  EXPECT_DOUBLE_EQ(y.data()[0], 1.0);  // strict inequality in the reset rule
}

TEST(Reset, StraightThroughGradient) {
  Tensor x({4}, {0.2, 1.4, -0.8, 0.9});
  auto res = memba::check_gradients("reset", {x}, [&] {
    return memba::sum(memba::mul(memba::reset(x, 1.0), x));
  });
  EXPECT_TRUE(res.pass) << res.max_rel_err;
}

TEST(LimForward, SingleChunkDegeneration) {
  // T=1, no previous state: out = reset(x), avg = out.
  Rng rng(61);
  Tensor x = random_tensor({2, 5, 3}, rng, -2.0, 2.0);
  LIMConfig cfg{1, 1.0, 1.0};
  auto r = memba::lim_forward(x, cfg);
  Tensor expect = memba::reset(x, 1.0);
  ASSERT_EQ(r.out.shape(), x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    EXPECT_DOUBLE_EQ(r.out.data()[i], expect.data()[i]);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    EXPECT_DOUBLE_EQ(r.avg.u.data()[i], expect.data()[i]);
}

TEST(LimForward, HandEvaluatedMembranesNoReset) {
  // tau=1/2, V_th=1, D=1, T=2, chunks [0.4],[0.4]:
  // u1 = 0.4, u2 = 0.5*0.4+0.4 = 0.6, avg = 0.5.
  Tensor x({1, 2, 1}, {0.4, 0.4});
  LIMConfig cfg{2, 0.5, 1.0};
  auto r = memba::lim_forward(x, cfg);
  EXPECT_NEAR(r.out.data()[0], 0.4, 1e-15);
  EXPECT_NEAR(r.out.data()[1], 0.6, 1e-15);
  EXPECT_NEAR(r.avg.u.data()[0], 0.5, 1e-15);
}

TEST(LimForward, HandEvaluatedMembranesWithReset) {
  // tau=1/2, V_th=1, chunks [0.8],[0.8]: u1 = 0.8, u2 = reset(1.2) = 0, avg = 0.4.
  Tensor x({1, 2, 1}, {0.8, 0.8});
  LIMConfig cfg{2, 0.5, 1.0};
  auto r = memba::lim_forward(x, cfg);
  EXPECT_NEAR(r.out.data()[0], 0.8, 1e-15);
  EXPECT_NEAR(r.out.data()[1], 0.0, 1e-15);
  EXPECT_NEAR(r.avg.u.data()[0], 0.4, 1e-15);
}

TEST(LimForward, IntraChunkIndexRecurrence) {
  // Token j of chunk i+1 integrates token j of chunk i: with tau=1 and no
  // reset, position j of chunk i holds sum of x[j + k*chunk_len] for k <= i.
  Rng rng(62);
  std::int64_t b = 2, l = 12, d = 3, t_chunks = 3;
  Tensor x = random_tensor({b, l, d}, rng, -0.4, 0.4);
  LIMConfig cfg{t_chunks, 1.0, std::numeric_limits<double>::infinity()};
  auto r = memba::lim_forward(x, cfg);
  std::int64_t cl = l / t_chunks;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t i = 0; i < t_chunks; ++i)
      for (std::int64_t j = 0; j < cl; ++j)
        for (std::int64_t f = 0; f < d; ++f) {
          double acc = 0;
          for (std::int64_t k = 0; k <= i; ++k)
            acc += x.data()[(bi * l + k * cl + j) * d + f];
          EXPECT_NEAR(r.out.data()[(bi * l + i * cl + j) * d + f], acc, 1e-12);
        }
}

TEST(LimForward, LengthLawWithTrimAndPad) {
  Rng rng(63);
  for (int trial = 0; trial < 50; ++trial) {
    std::int64_t t = rng.uniform_int(1, 8);
    std::int64_t l = rng.uniform_int(t, 64);
    Tensor x = random_tensor({1, l, 2}, rng);
    LIMConfig cfg{t, 0.5, 1.0};
    auto r = memba::lim_forward(x, cfg);
    ASSERT_EQ(r.out.dim(1), l);
    ChunkPlan p = memba::chunk_plan(l, t);
    for (std::int64_t pos = p.chunk_len * p.num_chunks; pos < l; ++pos)
      for (std::int64_t f = 0; f < 2; ++f)
        EXPECT_EQ(r.out.data()[(pos * 2) + f], 0.0);  // trimmed tail exactly zero
  }
}

TEST(LimForward, MembranesBoundedByThreshold) {
  Rng rng(64);
  LIMConfig cfg{4, 0.9, 0.7};
  Tensor x = random_tensor({3, 16, 5}, rng, -3.0, 3.0);
  auto r = memba::lim_forward(x, cfg);
  for (const auto& m : r.membranes)
    for (double v : m.data()) EXPECT_LE(v, 0.7);
}

TEST(LimForward, PrevStateSeedsFirstChunk) {
  // With prev = p, first membrane = reset(tau*p + x_1).
  Tensor x({1, 2, 1}, {0.3, 0.1});
  LIMConfig cfg{2, 0.5, 1.0};
  LIMState prev{Tensor({1, 1, 1}, {0.6}), LIMState::Source::transferred};
  auto r = memba::lim_forward(x, cfg, &prev);
  EXPECT_NEAR(r.out.data()[0], 0.6, 1e-15);  // 0.5*0.6 + 0.3
  EXPECT_NEAR(r.out.data()[1], 0.4, 1e-15);  // 0.5*0.6 + 0.1
}

TEST(LimForward, PrevShapeMismatchRejected) {
  Rng rng(65);
  Tensor x = random_tensor({1, 8, 2}, rng);
  LIMConfig cfg{4, 0.5, 1.0};
  LIMState bad{Tensor::zeros({1, 3, 2}), LIMState::Source::transferred};
  EXPECT_THROW(memba::lim_forward(x, cfg, &bad), std::invalid_argument);
}

TEST(LimForward, RejectsShortSequence) {
  Tensor x = Tensor::zeros({1, 3, 2});
  LIMConfig cfg{4, 0.5, 1.0};
  EXPECT_THROW(memba::lim_forward(x, cfg), std::invalid_argument);
}

TEST(LimForward, Deterministic) {
  Rng rng(66);
  Tensor x = random_tensor({2, 9, 3}, rng);
  LIMConfig cfg{3, 0.5, 1.0};
  auto r1 = memba::lim_forward(x, cfg);
  auto r2 = memba::lim_forward(x, cfg);
  for (std::int64_t i = 0; i < r1.out.numel(); ++i)
    EXPECT_EQ(r1.out.data()[i], r2.out.data()[i]);
}

TEST(LimForward, StatelessAcrossCalls) {
  // Two independent passes give identical results: no hidden carryover.
  Rng rng(67);
  Tensor x = random_tensor({1, 8, 2}, rng);
  LIMConfig cfg{4, 0.5, 1.0};
  auto first = memba::lim_forward(x, cfg);
  Tensor other = random_tensor({1, 8, 2}, rng);
  memba::lim_forward(other, cfg);  // unrelated pass in between
  auto second = memba::lim_forward(x, cfg);
  for (std::int64_t i = 0; i < first.out.numel(); ++i)
    EXPECT_EQ(first.out.data()[i], second.out.data()[i]);
}

TEST(LimForward, GradientsThroughChunksAndReset) {
  Rng rng(68);
  Tensor x = random_tensor({1, 6, 2}, rng, -1.5, 1.5);
  Tensor prev_u = random_tensor({1, 2, 2}, rng, -0.5, 0.5);
  auto loss = [&] {
    LIMConfig cfg{3, 0.5, 1.0};
    LIMState prev{prev_u, LIMState::Source::transferred};
    auto r = memba::lim_forward(x, cfg, &prev);
    return memba::sum(memba::mul(r.out, r.out));
  };
  auto res = memba::check_gradients("lim_forward", {x, prev_u}, loss);
  EXPECT_TRUE(res.pass) << res.max_rel_err;
}

TEST(Transfer, MeanOfEqualMembranesIsThatValue) {
  Tensor x({1, 2, 1}, {0.5, 0.25});  // tau=0.5: u1=0.5, u2=0.5 -> avg 0.5
  LIMConfig cfg{2, 0.5, 1.0};
  auto r = memba::lim_forward(x, cfg);
  auto t = memba::transfer(r.avg);
  EXPECT_NEAR(t.u.data()[0], 0.5, 1e-15);
  EXPECT_EQ(t.source, LIMState::Source::transferred);
}

TEST(Transfer, ArithmeticMeanOfTwoChunks) {
  // Membranes 0.2 and 0.6 -> transferred 0.4.
  Tensor x({1, 2, 1}, {0.2, 0.5});  // u1=0.2, u2=0.1+0.5=0.6
  LIMConfig cfg{2, 0.5, 1.0};
  auto r = memba::lim_forward(x, cfg);
  auto t = memba::transfer(r.avg);
  EXPECT_NEAR(t.u.data()[0], 0.4, 1e-15);
}

TEST(Transfer, ZeroStateStaysZero) {
  Tensor x = Tensor::zeros({1, 4, 2});
  LIMConfig cfg{2, 0.5, 1.0};
  auto r = memba::lim_forward(x, cfg);
  auto t = memba::transfer(r.avg);
  for (double v : t.u.data()) EXPECT_EQ(v, 0.0);
}

TEST(ParameterCounts, LimIsZero) {
  EXPECT_EQ(memba::count_lim_parameters(LIMConfig{4, 0.5, 1.0}), 0);
  EXPECT_EQ(memba::count_lim_parameters(LIMConfig{1, 1.0, 2.0}), 0);
}

TEST(ParameterCounts, ClassicalGateFormulas) {
  // LSTM gate: 8H^2 + 4H; GRU gate: 6H^2 + 3H.
  EXPECT_EQ(memba::lstm_gate_parameter_count(16), 8 * 256 + 4 * 16);
  EXPECT_EQ(memba::gru_gate_parameter_count(16), 6 * 256 + 3 * 16);
}

TEST(LIMConfigValidation, Ranges) {
  EXPECT_THROW((LIMConfig{0, 0.5, 1.0}).validate(), std::invalid_argument);
  EXPECT_THROW((LIMConfig{2, 0.0, 1.0}).validate(), std::invalid_argument);
  EXPECT_THROW((LIMConfig{2, 1.5, 1.0}).validate(), std::invalid_argument);
  EXPECT_THROW((LIMConfig{2, 0.5, 0.0}).validate(), std::invalid_argument);
  LIMConfig ok{2, 1.0, 1.0};
  ok.validate();
}

}  // namespace
