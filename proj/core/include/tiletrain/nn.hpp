// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tiletrain/kernels.hpp"
#include "tiletrain/runtime.hpp"
#include "tiletrain/tensor.hpp"

// Layers that submit tile tasks. Activations are (features, N_s, N_b)
// tensors tiled (tf, ts, tb); each tile is used as a tf x (ts * tb) matrix.
// Layers allocate their outputs and saved activations once, so repeated
// steps reuse the same tiles.
//
// Parameter gradients always accumulate (Reduce); call zero_grad() before
// each backward pass.
namespace tiletrain::nn {

struct SeqTiling {
  std::size_t n_s = 1;
  std::size_t n_b = 1;
  std::size_t ts = 1;
  std::size_t tb = 1;
};

TiledTensor make_activation(Runtime& rt, std::size_t features, std::size_t tile, const SeqTiling& seq,
                            DType dtype = DType::F32);
TensorGradPair make_param(Runtime& rt, std::string name, const Shape& shape, const Shape& tile_shape,
                          const Fill& fill);

// Task helpers over whole tensors with identical layouts.
void set_reduce_op(Runtime& rt, const TiledTensor& t, const ReduceOp& op);
void fill(Runtime& rt, const TiledTensor& t, float value);
void copy(Runtime& rt, const TiledTensor& src, const TiledTensor& dst);
// out = a + b.
void add(Runtime& rt, const TiledTensor& a, const TiledTensor& b, const TiledTensor& out);
void zero_grad(Runtime& rt, const std::vector<TensorGradPair*>& params);

// Merge rules for LayerNorm (count, mean, M2) and softmax (max, sumexp)
// statistic tiles.
ReduceOp norm_stats_op();
ReduceOp softmax_stats_op();

// One product term op(a) * op(b) of a tile sum; k is the contracted extent.
struct GemmTerm {
  TileHandle a;
  TileHandle b;
  std::size_t k = 0;
  bool trans_a = false;
  bool trans_b = false;
};

// out (m x n) = [out +] sum of terms [+ bias broadcast over columns]. Without
// `accumulate` the first term overwrites the tile (Write) and the others are
// Reduce contributions; with it every term is a Reduce contribution.
void gemm_sum(Runtime& rt, TileHandle out, std::size_t m, std::size_t n, const std::vector<GemmTerm>& terms,
              bool accumulate, TileHandle bias = {});

// y = W x +. b with W (out, in) tiled (t_out, t_in).
class Linear {
 public:
  Linear(Runtime& rt, std::string name, std::size_t in, std::size_t out, std::size_t t_in, std::size_t t_out,
         const SeqTiling& seq, bool bias, const Fill& init);
  // Shares an existing (out, in) weight, e.g. the token embedding table.
  Linear(Runtime& rt, TensorGradPair* shared_weight, std::size_t t_in, const SeqTiling& seq);

  const TiledTensor& forward(const TiledTensor& x);
  // Accumulates dW and db; writes (or adds into) dx.
  void backward(const TiledTensor& x, const TiledTensor& dy, const TiledTensor& dx, bool accumulate_dx);

  const TiledTensor& output() const noexcept { return y_; }
  TensorGradPair& weight() noexcept { return *w_; }
  TensorGradPair* bias() noexcept { return b_.get(); }
  std::vector<TensorGradPair*> params();

 private:
  Runtime& rt_;
  std::unique_ptr<TensorGradPair> own_w_;
  TensorGradPair* w_ = nullptr;
  std::unique_ptr<TensorGradPair> b_;
  TiledTensor y_;
};

// LayerNorm over the feature axis: statistics (Reduce across feature tiles),
// normalization, then the per-feature affine map.
class LayerNorm {
 public:
  LayerNorm(Runtime& rt, std::string name, std::size_t features, std::size_t tile, const SeqTiling& seq,
            float eps = kernels::kLayerNormEps);

  const TiledTensor& forward(const TiledTensor& x);
  void backward(const TiledTensor& dy, const TiledTensor& dx, bool accumulate_dx);

  const TiledTensor& output() const noexcept { return y_; }
  const TiledTensor& normalized() const noexcept { return xhat_; }
  // (count, mean, inv_std) per position after forward().
  const TiledTensor& stats() const noexcept { return stats_; }
  TensorGradPair& gamma() noexcept { return gamma_; }
  TensorGradPair& beta() noexcept { return beta_; }
  std::vector<TensorGradPair*> params() { return {&gamma_, &beta_}; }

 private:
  Runtime& rt_;
  std::size_t features_;
  float eps_;
  TensorGradPair gamma_;
  TensorGradPair beta_;
  TiledTensor stats_;
  TiledTensor xhat_;
  TiledTensor y_;
  TiledTensor sums_;
};

class Gelu {
 public:
  Gelu(Runtime& rt, std::size_t features, std::size_t tile, const SeqTiling& seq);
  const TiledTensor& forward(const TiledTensor& x);
  void backward(const TiledTensor& x, const TiledTensor& dy, const TiledTensor& dx, bool accumulate_dx);
  const TiledTensor& output() const noexcept { return y_; }

 private:
  Runtime& rt_;
  TiledTensor y_;
};

// Multi-head self attention with head size h = N_e / heads. Q, K, V are
// (h, N_s, N_b, heads) tiled (h, ts, tb, 1); scores are (N_s, N_s, N_b,
// heads) tiled (ts, ts, tb, 1), keys along the first axis.
class Attention {
 public:
  Attention(Runtime& rt, std::string name, std::size_t n_e, std::size_t heads, std::size_t te,
            const SeqTiling& seq, bool causal, std::uint64_t seed);

  const TiledTensor& forward(const TiledTensor& x);
  void backward(const TiledTensor& x, const TiledTensor& dy, const TiledTensor& dx, bool accumulate_dx);

  const TiledTensor& output() const noexcept { return y_; }
  const TiledTensor& probabilities() const noexcept { return p_; }
  std::size_t head_size() const noexcept { return h_; }
  std::vector<TensorGradPair*> params();

  TensorGradPair& wq() noexcept { return wq_; }
  TensorGradPair& wk() noexcept { return wk_; }
  TensorGradPair& wv() noexcept { return wv_; }
  TensorGradPair& wo() noexcept { return wo_; }
  TensorGradPair& bq() noexcept { return bq_; }
  TensorGradPair& bk() noexcept { return bk_; }
  TensorGradPair& bv() noexcept { return bv_; }
  TensorGradPair& bo() noexcept { return bo_; }

 private:
  // Whether the (key tile, query tile) block holds any unmasked entry.
  bool live(std::size_t key_tile, std::size_t query_tile) const noexcept { return !causal_ || key_tile <= query_tile; }
  kernels::AttnDims dims(std::size_t key_tile, std::size_t query_tile, std::size_t b_tile) const;
  void project(const TensorGradPair& w, const TensorGradPair& b, const TiledTensor& x, const TiledTensor& out);
  void project_grads(TensorGradPair& w, TensorGradPair& b, const TiledTensor& x, const TiledTensor& d);

  Runtime& rt_;
  std::size_t n_e_;
  std::size_t heads_;
  std::size_t h_;
  SeqTiling seq_;
  bool causal_;
  float scale_;
  TensorGradPair wq_, wk_, wv_, wo_;
  TensorGradPair bq_, bk_, bv_, bo_;
  TiledTensor q_, k_, v_, p_, stats_, b_, y_;
  TiledTensor dq_, dk_, dv_, dp_, db_, dot_;
};

// Token embedding E (N_v, N_e) tiled (tv, te).
class Embedding {
 public:
  Embedding(Runtime& rt, std::string name, std::size_t vocab, std::size_t n_e, std::size_t tv, std::size_t te,
            const SeqTiling& seq, const Fill& init);

  // ids: I32 (N_s, N_b) tiled (ts, tb).
  const TiledTensor& forward(const TiledTensor& ids);
  void backward(const TiledTensor& ids, const TiledTensor& dy);

  const TiledTensor& output() const noexcept { return y_; }
  TensorGradPair& table() noexcept { return table_; }
  std::size_t vocab() const noexcept { return vocab_; }

 private:
  Runtime& rt_;
  std::size_t vocab_;
  TensorGradPair table_;
  TiledTensor y_;
};

// Learned absolute positions P (N_e, N_s) tiled (te, ts), added in place.
class PositionalEmbedding {
 public:
  PositionalEmbedding(Runtime& rt, std::string name, std::size_t n_e, std::size_t te, const SeqTiling& seq,
                      const Fill& init);
  void forward(const TiledTensor& x);
  void backward(const TiledTensor& dy);
  TensorGradPair& table() noexcept { return table_; }

 private:
  Runtime& rt_;
  TensorGradPair table_;
};

// Mean token cross-entropy over logits (N_v, N_s, N_b) and I32 labels
// (N_s, N_b). forward_backward() produces both the loss and dlogits.
class CrossEntropy {
 public:
  CrossEntropy(Runtime& rt, std::size_t vocab, std::size_t tv, const SeqTiling& seq);

  void forward_backward(const TiledTensor& logits, const TiledTensor& labels);
  // Reads the loss (waits for pending tasks).
  float loss();

  const TiledTensor& dlogits() const noexcept { return dlogits_; }
  const TiledTensor& loss_tensor() const noexcept { return loss_; }

 private:
  Runtime& rt_;
  std::size_t vocab_;
  SeqTiling seq_;
  TiledTensor stats_;
  TiledTensor dlogits_;
  TiledTensor loss_;
};

// ---- optimizers -----------------------------------------------------------

enum class OptimizerKind : std::uint8_t { SgdMomentum, Adam, AdamW };

std::string_view to_string(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  float lr = 1e-3f;
  float momentum = 0.9f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

// Moment tensors share the parameters' tiling: one per parameter for SGD
// with momentum, two for Adam and AdamW.
class Optimizer {
 public:
  Optimizer(Runtime& rt, std::vector<TensorGradPair*> params, OptimizerConfig config);

  void step();

  std::int64_t steps() const noexcept { return t_; }
  const OptimizerConfig& config() const noexcept { return config_; }
  std::size_t param_bytes() const noexcept;
  std::size_t state_bytes() const noexcept;
  std::size_t moments_per_param() const noexcept;
  const std::vector<std::vector<TiledTensor>>& state() const noexcept { return state_; }

 private:
  Runtime& rt_;
  std::vector<TensorGradPair*> params_;
  OptimizerConfig config_;
  std::vector<std::vector<TiledTensor>> state_;
  std::int64_t t_ = 0;
};

}  // namespace tiletrain::nn
