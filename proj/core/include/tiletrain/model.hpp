// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "tiletrain/nn.hpp"
#include "tiletrain/runtime.hpp"
#include "tiletrain/tensor.hpp"

namespace tiletrain {

struct GPT2Config {
  std::size_t n_layers = 2;
  std::size_t n_e = 16;
  std::size_t heads = 2;
  std::size_t n_s = 8;
  std::size_t n_b = 2;
  std::size_t n_v = 32;
  // Tile extents along the embedding, sequence, batch, MLP hidden and
  // vocabulary axes. Zero means "whole axis".
  std::size_t te = 0;
  std::size_t ts = 0;
  std::size_t tb = 0;
  std::size_t tf = 0;
  std::size_t tv = 0;
  std::uint64_t seed = 1;
  bool causal = true;
  bool tie_embeddings = false;

  std::size_t hidden() const noexcept { return 4 * n_e; }
  // Tile extents with zeros replaced by the full axis.
  std::size_t tile_e() const noexcept { return te == 0 ? n_e : te; }
  std::size_t tile_s() const noexcept { return ts == 0 ? n_s : ts; }
  std::size_t tile_b() const noexcept { return tb == 0 ? n_b : tb; }
  std::size_t tile_f() const noexcept { return tf == 0 ? hidden() : tf; }
  std::size_t tile_v() const noexcept { return tv == 0 ? n_v : tv; }
  nn::SeqTiling seq() const noexcept { return {n_s, n_b, tile_s(), tile_b()}; }

  // Throws ConfigError on zero sizes, heads not dividing n_e and tiles
  // larger than their axis.
  void validate() const;
  // 12 L N_e^2 + 13 L N_e + (N_v + N_s) N_e + 2 N_e, plus N_v N_e for an
  // untied head.
  std::size_t expected_parameter_count() const noexcept;
  // Forward plus backward flops per step: tokens * (6 params + 12 L N_e N_s).
  double model_flops_per_step() const noexcept;
};

// Pre-LN transformer block: x + Attn(LN(x)), then h + MLP(LN(h)).
class Block {
 public:
  Block(Runtime& rt, const GPT2Config& cfg, std::size_t index);

  const TiledTensor& forward(const TiledTensor& x);
  // Gradient w.r.t. the block input given the gradient w.r.t. its output.
  const TiledTensor& backward(const TiledTensor& dy);

  std::vector<TensorGradPair*> params();
  nn::Attention& attention() noexcept { return attn_; }

 private:
  Runtime& rt_;
  nn::LayerNorm ln1_;
  nn::Attention attn_;
  nn::LayerNorm ln2_;
  nn::Linear fc1_;
  nn::Gelu gelu_;
  nn::Linear fc2_;
  TiledTensor h_, out_;
  TiledTensor dln_, da_, dh_, dgelu_, dfc1_, dx_;
};

// Token embedding, learned positions, blocks, final LayerNorm and the
// vocabulary projection, with a mean cross-entropy loss.
class GPT2 {
 public:
  GPT2(Runtime& rt, GPT2Config cfg);
  ~GPT2();
  GPT2(const GPT2&) = delete;
  GPT2& operator=(const GPT2&) = delete;

  const GPT2Config& config() const noexcept { return cfg_; }
  Runtime& runtime() noexcept { return rt_; }

  // ids and labels: I32 (N_s, N_b) tensors laid out by make_tokens().
  TiledTensor make_tokens() const;

  // Submits the forward pass and the loss; returns the logits.
  const TiledTensor& forward(const TiledTensor& ids, const TiledTensor& labels);
  // Zeroes gradients, then submits forward, loss and backward.
  void forward_backward(const TiledTensor& ids, const TiledTensor& labels);
  // Loss of the last forward pass (waits for pending tasks).
  float loss();

  std::vector<TensorGradPair*> params();
  std::size_t parameter_count();

  void save(std::ostream& out);
  void save(const std::string& path);
  // The checkpoint must hold exactly this model's parameters and layouts.
  void load(std::istream& in);
  void load(const std::string& path);

  std::vector<Block*> blocks();

 private:
  Runtime& rt_;
  GPT2Config cfg_;
  nn::Embedding wte_;
  nn::PositionalEmbedding wpe_;
  std::vector<std::unique_ptr<Block>> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear head_;
  nn::CrossEntropy ce_;
  TiledTensor dlnf_, dx_;
};

// Seeded uniform token ids. Each sequence is drawn with one extra token;
// labels are the inputs shifted left by one position.
struct TokenBatch {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> labels;
};
TokenBatch synthetic_batch(const GPT2Config& cfg, std::uint64_t seed);

struct TrainConfig {
  std::size_t steps = 20;
  nn::OptimizerConfig optimizer;
  // Number of fixed batches cycled through; 0 draws a fresh batch per step.
  std::size_t dataset_batches = 0;
  std::uint64_t data_seed = 7;
};

struct TrainMetrics {
  std::size_t step = 0;
  float loss = 0.0f;
  double makespan = 0.0;
  double wall_seconds = 0.0;
  double model_flops = 0.0;
  double flops_per_vsec = 0.0;
  std::size_t bytes_moved = 0;
};

struct TrainResult {
  std::vector<TrainMetrics> steps;
  std::size_t parameter_count = 0;
  std::size_t optimizer_state_bytes = 0;
  // Busy virtual seconds per device summed over all steps.
  std::vector<double> busy_seconds;
  double total_makespan = 0.0;
};

using StepCallback = std::function<void(const TrainMetrics&)>;

// One wait_all per step: zero grads, forward, backward, optimizer update.
TrainResult train(GPT2& model, const TrainConfig& cfg, const StepCallback& on_step = {});

void write_metrics_csv(const std::vector<TrainMetrics>& steps, std::ostream& out);

}  // namespace tiletrain
