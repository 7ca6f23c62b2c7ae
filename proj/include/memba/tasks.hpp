// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic sequence tasks. Every sample is a pure function of
// (spec, split, index): splits draw from disjoint counter streams, so
// regeneration is bitwise identical and train/val never share a stream.
//
//   selective_copy  - noise tokens with k payload tokens; the model must emit
//                     the payloads, in order, in the trailing query slots
//                     (blank token 0 everywhere else). Variant b remaps the
//                     payload labels by a fixed derangement (rotation).
//   adding          - two channels: values in [0,1] and a two-hot marker;
//                     label = sum of the two marked values.
//   pathfinder_lite - an n x n binary grid holding either one connected path
//                     between two endpoint dots or two disconnected arcs;
//                     label = connected. Rows feed the model as n-wide
//                     patches, so chunking groups row bands.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "memba/model.hpp"
#include "memba/random.hpp"
#include "memba/tensor.hpp"

namespace memba {

enum class TaskKind { selective_copy, adding, pathfinder_lite };
enum class Split { train, val };
enum class TaskVariant { a, b };

struct TaskSpec {
  TaskKind kind = TaskKind::selective_copy;
  std::int64_t seq_len = 64;
  std::int64_t payload_count = 8;  // k marked payload tokens
  std::int64_t payload_vocab = 8;  // payload symbols 1..payload_vocab
  std::int64_t noise_vocab = 6;    // noise symbols payload_vocab+1..payload_vocab+noise_vocab
  std::int64_t grid_size = 16;     // pathfinder grid edge
  std::int64_t train_size = 65536;
  std::int64_t val_size = 2048;
  std::uint64_t seed = 0;
  TaskVariant variant = TaskVariant::a;

  void validate() const {
    require(train_size > 0 && val_size > 0, "task: split sizes must be positive");
    switch (kind) {
      case TaskKind::selective_copy:
        require(seq_len >= 2, "selective_copy: seq_len too short");
        require(payload_count >= 0 && payload_count <= seq_len / 2,
                "selective_copy: payload_count must fit the sequence");
        require(payload_vocab >= 2 && noise_vocab >= 1, "selective_copy: vocab too small");
        break;
      case TaskKind::adding:
        require(seq_len >= 2, "adding: seq_len too short");
        require(variant == TaskVariant::a, "adding: only variant a is defined");
        break;
      case TaskKind::pathfinder_lite:
        require(grid_size >= 8, "pathfinder_lite: grid too small");
        require(variant == TaskVariant::a, "pathfinder_lite: only variant a is defined");
        break;
    }
  }

  std::int64_t vocab_size() const { return 1 + payload_vocab + noise_vocab; }
  std::int64_t splits_size(Split s) const { return s == Split::train ? train_size : val_size; }

  // Model surface implied by the task.
  void fill_model_io(ModelConfig& cfg) const {
    switch (kind) {
      case TaskKind::selective_copy:
        cfg.input = InputKind::tokens;
        cfg.vocab_size = vocab_size();
        cfg.head = HeadKind::per_token;
        cfg.num_classes = vocab_size();
        break;
      case TaskKind::adding:
        cfg.input = InputKind::features;
        cfg.in_features = 2;
        cfg.head = HeadKind::pooled_regression;
        cfg.num_classes = 1;
        break;
      case TaskKind::pathfinder_lite:
        cfg.input = InputKind::features;
        cfg.in_features = grid_size;
        cfg.head = HeadKind::pooled_class;
        cfg.num_classes = 2;
        break;
    }
  }

  std::int64_t model_seq_len() const {
    return kind == TaskKind::pathfinder_lite ? grid_size : seq_len;
  }
};

template <std::floating_point S>
struct TaskBatch {
  ModelInput<S> input;
  std::vector<std::int64_t> label_tokens;  // per position (copy) or per sample (pathfinder)
  Tensor<S> label_values;                  // (batch) regression targets (adding)
};

namespace detail {

inline std::uint64_t split_stream(Split s) { return s == Split::train ? 1u : 2u; }

// Fixed derangement of the payload alphabet used by variant b.
inline std::int64_t remap_payload(std::int64_t sym, const TaskSpec& spec) {
  if (spec.variant == TaskVariant::a) return sym;
  return 1 + (sym % spec.payload_vocab);  // rotate within 1..payload_vocab
}

// k distinct values in [0, upper) via Floyd's sampling, returned sorted.
inline std::vector<std::int64_t> sample_distinct(Rng& rng, std::int64_t k, std::int64_t upper) {
  std::vector<std::int64_t> chosen;
  for (std::int64_t i = upper - k; i < upper; ++i) {
    std::int64_t j = rng.uniform_int(0, i);
    bool hit = false;
    for (auto v : chosen) hit = hit || v == j;
    chosen.push_back(hit ? i : j);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

template <std::floating_point S>
void copy_sample(const TaskSpec& spec, Rng& rng, std::vector<std::int64_t>& tokens,
                 std::vector<std::int64_t>& labels) {
  std::int64_t l = spec.seq_len, k = spec.payload_count;
  tokens.assign(static_cast<std::size_t>(l), 0);
  labels.assign(static_cast<std::size_t>(l), 0);
  // Noise everywhere before the query zone.
  for (std::int64_t t = 0; t < l - k; ++t)
    tokens[static_cast<std::size_t>(t)] =
        spec.payload_vocab + rng.uniform_int(1, spec.noise_vocab);
  if (k == 0) return;  // all-blank label convention
  auto positions = sample_distinct(rng, k, l - k);
  for (std::int64_t j = 0; j < k; ++j) {
    std::int64_t sym = rng.uniform_int(1, spec.payload_vocab);
    tokens[static_cast<std::size_t>(positions[static_cast<std::size_t>(j)])] = sym;
    labels[static_cast<std::size_t>(l - k + j)] = remap_payload(sym, spec);
  }
}

template <std::floating_point S>
void adding_sample(const TaskSpec& spec, Rng& rng, std::vector<S>& features, S& label) {
  std::int64_t l = spec.seq_len;
  features.assign(static_cast<std::size_t>(2 * l), S(0));
  for (std::int64_t t = 0; t < l; ++t)
    features[static_cast<std::size_t>(2 * t)] = static_cast<S>(rng.uniform());
  auto marks = sample_distinct(rng, 2, l);
  label = 0;
  for (auto m : marks) {
    features[static_cast<std::size_t>(2 * m + 1)] = S(1);
    label += features[static_cast<std::size_t>(2 * m)];
  }
}

// Monotone staircase from a to b on the grid; cells at path distance m are
// Manhattan distance m apart, so removing >= 2 interior cells provably severs
// 8-connectivity between the two remaining arcs.
template <std::floating_point S>
void pathfinder_sample(const TaskSpec& spec, Rng& rng, std::vector<S>& grid, bool& connected) {
  std::int64_t n = spec.grid_size;
  grid.assign(static_cast<std::size_t>(n * n), S(0));
  std::int64_t r0 = rng.uniform_int(0, n - 1), c0 = rng.uniform_int(0, n / 4 - 1);
  std::int64_t r1 = rng.uniform_int(0, n - 1), c1 = rng.uniform_int(3 * n / 4, n - 1);
  std::vector<std::int64_t> path;
  std::int64_t r = r0, c = c0;
  path.push_back(r * n + c);
  while (r != r1 || c != c1) {
    bool can_v = r != r1, can_h = c != c1;
    bool vertical = can_v && (!can_h || rng.uniform() < 0.5);
    if (vertical)
      r += r1 > r ? 1 : -1;
    else
      c += 1;  // c1 is always to the right of c0
    path.push_back(r * n + c);
  }
  for (auto cell : path) grid[static_cast<std::size_t>(cell)] = S(1);
  connected = rng.uniform() < 0.5;
  if (!connected) {
    // Cut a short run from the middle third of the path.
    std::int64_t len = static_cast<std::int64_t>(path.size());
    std::int64_t gap = rng.uniform_int(2, 3);
    std::int64_t lo = std::max<std::int64_t>(1, len / 3);
    std::int64_t hi = std::max(lo, len - gap - std::max<std::int64_t>(1, len / 3));
    std::int64_t start = rng.uniform_int(lo, hi);
    for (std::int64_t i = start; i < start + gap && i < len - 1; ++i)
      grid[static_cast<std::size_t>(path[static_cast<std::size_t>(i)])] = S(0);
  }
}

}  // namespace detail

// Assembles a batch of `count` samples starting at dataset index `start`
// (indices wrap modulo the split size). Pure in (spec, split, index).
template <std::floating_point S>
TaskBatch<S> generate_batch(const TaskSpec& spec, Split split, std::int64_t start,
                            std::int64_t count) {
  spec.validate();
  require(count >= 1, "generate_batch: count must be positive");
  TaskBatch<S> batch;
  std::int64_t size = spec.splits_size(split);
  std::int64_t l = spec.model_seq_len();
  batch.input.batch = count;
  batch.input.seq_len = l;
  switch (spec.kind) {
    case TaskKind::selective_copy: {
      batch.input.is_tokens = true;
      std::vector<std::int64_t> tokens, labels;
      for (std::int64_t i = 0; i < count; ++i) {
        Rng rng(spec.seed, detail::split_stream(split), static_cast<std::uint64_t>((start + i) % size));
        detail::copy_sample<S>(spec, rng, tokens, labels);
        batch.input.tokens.insert(batch.input.tokens.end(), tokens.begin(), tokens.end());
        batch.label_tokens.insert(batch.label_tokens.end(), labels.begin(), labels.end());
      }
      break;
    }
    case TaskKind::adding: {
      batch.input.is_tokens = false;
      Tensor<S> feats = Tensor<S>::zeros({count, l, 2});
      Tensor<S> label = Tensor<S>::zeros({count});
      auto fd = feats.mutable_data();
      auto ld = label.mutable_data();
      std::vector<S> sample;
      for (std::int64_t i = 0; i < count; ++i) {
        Rng rng(spec.seed, detail::split_stream(split), static_cast<std::uint64_t>((start + i) % size));
        S y;
        detail::adding_sample<S>(spec, rng, sample, y);
        std::copy(sample.begin(), sample.end(), fd.begin() + i * l * 2);
        ld[static_cast<std::size_t>(i)] = y;
      }
      batch.input.features = feats;
      batch.label_values = label;
      break;
    }
    case TaskKind::pathfinder_lite: {
      batch.input.is_tokens = false;
      std::int64_t n = spec.grid_size;
      Tensor<S> feats = Tensor<S>::zeros({count, n, n});
      auto fd = feats.mutable_data();
      std::vector<S> grid;
      for (std::int64_t i = 0; i < count; ++i) {
        Rng rng(spec.seed, detail::split_stream(split), static_cast<std::uint64_t>((start + i) % size));
        bool connected;
        detail::pathfinder_sample<S>(spec, rng, grid, connected);
        std::copy(grid.begin(), grid.end(), fd.begin() + i * n * n);
        batch.label_tokens.push_back(connected ? 1 : 0);
      }
      batch.input.features = feats;
      break;
    }
  }
  return batch;
}

// --- MBTK dataset export ----------------------------------------------------
//
// Layout (little-endian):
//   magic "MBTK" | u8 version=1 | u8 kind | u8 input_dtype | u8 label_dtype
//   u64 num_samples
//   u32 input_ndim | u64 input_dims[...]   (per-sample)
//   u32 label_ndim | u64 label_dims[...]   (per-sample)
//   raw inputs (all samples), raw labels (all samples)
// input_dtype/label_dtype: 0 = int64 tokens/classes, 1 = float64 values.

struct MbtkData {
  std::uint8_t kind = 0;
  std::uint8_t input_dtype = 0;
  std::uint8_t label_dtype = 0;
  std::int64_t num_samples = 0;
  std::vector<std::int64_t> input_dims;
  std::vector<std::int64_t> label_dims;
  std::vector<std::int64_t> input_tokens;
  std::vector<double> input_values;
  std::vector<std::int64_t> label_tokens;
  std::vector<double> label_values;
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_mbtk(const MbtkData& d) {
  std::vector<std::uint8_t> out{'M', 'B', 'T', 'K', 1, d.kind, d.input_dtype, d.label_dtype};
  detail::put_u64(out, static_cast<std::uint64_t>(d.num_samples));
  detail::put_u32(out, static_cast<std::uint32_t>(d.input_dims.size()));
  for (auto v : d.input_dims) detail::put_u64(out, static_cast<std::uint64_t>(v));
  detail::put_u32(out, static_cast<std::uint32_t>(d.label_dims.size()));
  for (auto v : d.label_dims) detail::put_u64(out, static_cast<std::uint64_t>(v));
  auto put_payload = [&out](const auto& vec) {
    for (auto v : vec) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::put_u64(out, bits);
    }
  };
  if (d.input_dtype == 0)
    put_payload(d.input_tokens);
  else
    put_payload(d.input_values);
  if (d.label_dtype == 0)
    put_payload(d.label_tokens);
  else
    put_payload(d.label_values);
  return out;
}

inline MbtkData decode_mbtk(const std::vector<std::uint8_t>& buf) {
  require(buf.size() >= 8 && buf[0] == 'M' && buf[1] == 'B' && buf[2] == 'T' && buf[3] == 'K',
          "mbtk: bad magic");
  require(buf[4] == 1, "mbtk: unsupported version " + std::to_string(buf[4]));
  MbtkData d;
  d.kind = buf[5];
  d.input_dtype = buf[6];
  d.label_dtype = buf[7];
  std::size_t off = 8;
  auto need = [&](std::size_t k) { require(off + k <= buf.size(), "mbtk: truncated file"); };
  need(8);
  d.num_samples = static_cast<std::int64_t>(detail::get_u64(buf.data() + off));
  off += 8;
  need(4);
  std::uint32_t ind = detail::get_u32(buf.data() + off);
  off += 4;
  std::int64_t in_elems = 1;
  for (std::uint32_t i = 0; i < ind; ++i) {
    need(8);
    d.input_dims.push_back(static_cast<std::int64_t>(detail::get_u64(buf.data() + off)));
    in_elems *= d.input_dims.back();
    off += 8;
  }
  need(4);
  std::uint32_t lnd = detail::get_u32(buf.data() + off);
  off += 4;
  std::int64_t lab_elems = 1;
  for (std::uint32_t i = 0; i < lnd; ++i) {
    need(8);
    d.label_dims.push_back(static_cast<std::int64_t>(detail::get_u64(buf.data() + off)));
    lab_elems *= d.label_dims.back();
    off += 8;
  }
  auto read_payload = [&](auto& vec, std::int64_t elems) {
    vec.resize(static_cast<std::size_t>(elems));
    for (auto& v : vec) {
      need(8);
      std::uint64_t bits = detail::get_u64(buf.data() + off);
      off += 8;
      std::memcpy(&v, &bits, 8);
    }
  };
  if (d.input_dtype == 0)
    read_payload(d.input_tokens, d.num_samples * in_elems);
  else
    read_payload(d.input_values, d.num_samples * in_elems);
  if (d.label_dtype == 0)
    read_payload(d.label_tokens, d.num_samples * lab_elems);
  else
    read_payload(d.label_values, d.num_samples * lab_elems);
  require(off == buf.size(), "mbtk: trailing bytes");
  return d;
}

// Renders a whole split into the MBTK container.
inline MbtkData export_task(const TaskSpec& spec, Split split) {
  spec.validate();
  MbtkData d;
  d.kind = static_cast<std::uint8_t>(spec.kind);
  d.num_samples = spec.splits_size(split);
  std::int64_t l = spec.model_seq_len();
  auto batch = generate_batch<double>(spec, split, 0, d.num_samples);
  switch (spec.kind) {
    case TaskKind::selective_copy:
      d.input_dtype = 0;
      d.label_dtype = 0;
      d.input_dims = {l};
      d.label_dims = {l};
      d.input_tokens = batch.input.tokens;
      d.label_tokens = batch.label_tokens;
      break;
    case TaskKind::adding:
      d.input_dtype = 1;
      d.label_dtype = 1;
      d.input_dims = {l, 2};
      d.label_dims = {1};
      d.input_values.assign(batch.input.features.data().begin(),
                            batch.input.features.data().end());
      d.label_values.assign(batch.label_values.data().begin(), batch.label_values.data().end());
      break;
    case TaskKind::pathfinder_lite:
      d.input_dtype = 1;
      d.label_dtype = 0;
      d.input_dims = {l, spec.grid_size};
      d.label_dims = {1};
      d.input_values.assign(batch.input.features.data().begin(),
                            batch.input.features.data().end());
      d.label_tokens = batch.label_tokens;
      break;
  }
  return d;
}

}  // namespace memba
