// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/nn.hpp"

#include <algorithm>
#include <limits>
#include <utility>

#include "tiletrain/error.hpp"

namespace tiletrain::nn {

namespace k = tiletrain::kernels;

namespace {

std::size_t cols(const TiledTensor& t, std::size_t s, std::size_t b) {
  return t.tile_extent(1, s) * t.tile_extent(2, b);
}

}  // namespace

ReduceOp norm_stats_op() {
  ReduceOp op;
  op.init = [](std::span<std::byte> buf) { std::fill(buf.begin(), buf.end(), std::byte{0}); };
  op.combine = [](std::span<std::byte> acc, std::span<const std::byte> part) {
    k::norm_stats_combine({reinterpret_cast<float*>(acc.data()), acc.size() / 4},
                          {reinterpret_cast<const float*>(part.data()), part.size() / 4});
  };
  return op;
}

ReduceOp softmax_stats_op() {
  ReduceOp op;
  op.init = [](std::span<std::byte> buf) {
    std::span<float> f{reinterpret_cast<float*>(buf.data()), buf.size() / 4};
    const std::size_t half = f.size() / 2;
    std::fill(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(half), -std::numeric_limits<float>::infinity());
    std::fill(f.begin() + static_cast<std::ptrdiff_t>(half), f.end(), 0.0f);
  };
  op.combine = [](std::span<std::byte> acc, std::span<const std::byte> part) {
    k::softmax_stats_combine({reinterpret_cast<float*>(acc.data()), acc.size() / 4},
                             {reinterpret_cast<const float*>(part.data()), part.size() / 4});
  };
  return op;
}

namespace {

AccessMode contribution(bool first) { return first ? AccessMode::Write : AccessMode::Reduce; }

}  // namespace

TiledTensor make_activation(Runtime& rt, std::size_t features, std::size_t tile, const SeqTiling& seq,
                            DType dtype) {
  return TiledTensor(rt, {features, seq.n_s, seq.n_b}, {tile, seq.ts, seq.tb}, dtype);
}

TensorGradPair make_param(Runtime& rt, std::string name, const Shape& shape, const Shape& tile_shape,
                          const Fill& fill) {
  TensorGradPair p;
  p.name = std::move(name);
  p.value = make_tiled(rt, shape, tile_shape, fill);
  p.grad = make_tiled(rt, shape, tile_shape);
  return p;
}

void set_reduce_op(Runtime& rt, const TiledTensor& t, const ReduceOp& op) {
  for (const TileHandle& h : t.tiles()) rt.set_reduce_op(h, op);
}

void fill(Runtime& rt, const TiledTensor& t, float value) {
  for (const TileHandle& h : t.tiles()) {
    rt.submit("fill", {{h, AccessMode::Write}}, static_cast<double>(h.nbytes / 4),
              [value](const TaskContext& ctx) { k::fill(ctx.as<float>(0), value); });
  }
}

void copy(Runtime& rt, const TiledTensor& src, const TiledTensor& dst) {
  if (!src.same_layout(dst)) throw ConfigError("copy between tensors of different layouts");
  for (std::size_t i = 0; i < src.num_tiles(); ++i) {
    rt.submit("copy", {{src.tile(i), AccessMode::Read}, {dst.tile(i), AccessMode::Write}},
              static_cast<double>(src.tile(i).nbytes / 4),
              [](const TaskContext& ctx) { k::copy(ctx.as<float>(0), ctx.as<float>(1)); });
  }
}

void add(Runtime& rt, const TiledTensor& a, const TiledTensor& b, const TiledTensor& out) {
  if (!a.same_layout(b) || !a.same_layout(out)) throw ConfigError("add over tensors of different layouts");
  for (std::size_t i = 0; i < a.num_tiles(); ++i) {
    rt.submit("add",
              {{a.tile(i), AccessMode::Read}, {b.tile(i), AccessMode::Read}, {out.tile(i), AccessMode::Write}},
              static_cast<double>(a.tile(i).nbytes / 4),
              [](const TaskContext& ctx) { k::add(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2)); });
  }
}

void zero_grad(Runtime& rt, const std::vector<TensorGradPair*>& params) {
  for (const TensorGradPair* p : params) fill(rt, p->grad, 0.0f);
}

void gemm_sum(Runtime& rt, TileHandle out, std::size_t m, std::size_t n, const std::vector<GemmTerm>& terms,
              bool accumulate, TileHandle bias) {
  if (terms.empty()) {
    if (accumulate) return;
    rt.submit("fill", {{out, AccessMode::Write}}, static_cast<double>(m * n),
              [](const TaskContext& ctx) { k::fill(ctx.as<float>(0), 0.0f); });
    if (bias.valid()) {
      rt.submit("bias_add", {{bias, AccessMode::Read}, {out, AccessMode::ReadWrite}}, static_cast<double>(m * n),
                [m](const TaskContext& ctx) { k::bias_add(ctx.as<float>(1), ctx.as<float>(0), m); });
    }
    return;
  }
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const GemmTerm term = terms[t];
    const bool with_bias = t == 0 && bias.valid();
    std::vector<Access> acc{{term.a, AccessMode::Read}, {term.b, AccessMode::Read}};
    if (with_bias) acc.push_back({bias, AccessMode::Read});
    acc.push_back({out, contribution(t == 0 && !accumulate)});
    const std::size_t out_idx = acc.size() - 1;
    rt.submit("gemm", std::move(acc), k::gemm_cost(m, term.k, n),
              [term, m, n, with_bias, out_idx](const TaskContext& ctx) {
                auto c = ctx.as<float>(out_idx);
                k::gemm_tile(ctx.as<float>(0), ctx.as<float>(1), c, m, term.k, n, 1.0f, 0.0f, term.trans_a,
                             term.trans_b);
                if (with_bias) k::bias_add(c, ctx.as<float>(2), m);
              });
  }
}

// ---- Linear ---------------------------------------------------------------

Linear::Linear(Runtime& rt, std::string name, std::size_t in, std::size_t out, std::size_t t_in, std::size_t t_out,
               const SeqTiling& seq, bool bias, const Fill& init)
    : rt_(rt) {
  own_w_ = std::make_unique<TensorGradPair>(make_param(rt, name + ".weight", {out, in}, {t_out, t_in}, init));
  w_ = own_w_.get();
  if (bias) b_ = std::make_unique<TensorGradPair>(make_param(rt, name + ".bias", {out}, {t_out}, Fill::zeros()));
  y_ = make_activation(rt, out, t_out, seq);
}

Linear::Linear(Runtime& rt, TensorGradPair* shared_weight, std::size_t t_in, const SeqTiling& seq)
    : rt_(rt), w_(shared_weight) {
  if (w_->value.ndim() != 2 || w_->value.tile_shape()[1] != std::min(t_in, w_->value.dim(1))) {
    throw ConfigError("shared weight tiling does not match the input tiling");
  }
  y_ = make_activation(rt, w_->value.dim(0), w_->value.tile_shape()[0], seq);
}

std::vector<TensorGradPair*> Linear::params() {
  std::vector<TensorGradPair*> out;
  if (own_w_) out.push_back(own_w_.get());
  if (b_) out.push_back(b_.get());
  return out;
}

const TiledTensor& Linear::forward(const TiledTensor& x) {
  const TiledTensor& w = w_->value;
  if (x.ndim() != 3 || x.dim(0) != w.dim(1) || x.tile_shape()[0] != w.tile_shape()[1] ||
      x.shape()[1] != y_.shape()[1] || x.shape()[2] != y_.shape()[2] || x.tile_shape()[1] != y_.tile_shape()[1] ||
      x.tile_shape()[2] != y_.tile_shape()[2]) {
    throw ConfigError("linear: input layout incompatible with weight " + w_->name);
  }
  const auto& g = y_.grid();
  for (std::size_t i = 0; i < g[0]; ++i) {
    const std::size_t m = y_.tile_extent(0, i);
    for (std::size_t s = 0; s < g[1]; ++s) {
      for (std::size_t b = 0; b < g[2]; ++b) {
        std::vector<GemmTerm> terms;
        for (std::size_t j = 0; j < x.grid()[0]; ++j) terms.push_back({w.tile({i, j}), x.tile({j, s, b}), x.tile_extent(0, j)});
        gemm_sum(rt_, y_.tile({i, s, b}), m, cols(y_, s, b), terms, false, b_ ? b_->value.tile(i) : TileHandle{});
      }
    }
  }
  return y_;
}

void Linear::backward(const TiledTensor& x, const TiledTensor& dy, const TiledTensor& dx, bool accumulate_dx) {
  const TiledTensor& w = w_->value;
  if (!dy.same_layout(y_) || !dx.same_layout(x)) throw ConfigError("linear backward: gradient layout mismatch");
  const auto& gy = y_.grid();
  const auto& gx = x.grid();

  for (std::size_t j = 0; j < gx[0]; ++j) {
    for (std::size_t s = 0; s < gx[1]; ++s) {
      for (std::size_t b = 0; b < gx[2]; ++b) {
        std::vector<GemmTerm> terms;
        for (std::size_t i = 0; i < gy[0]; ++i) {
          terms.push_back({w.tile({i, j}), dy.tile({i, s, b}), y_.tile_extent(0, i), true, false});
        }
        gemm_sum(rt_, dx.tile({j, s, b}), x.tile_extent(0, j), cols(x, s, b), terms, accumulate_dx);
      }
    }
  }

  for (std::size_t i = 0; i < gy[0]; ++i) {
    const std::size_t m = y_.tile_extent(0, i);
    for (std::size_t j = 0; j < gx[0]; ++j) {
      std::vector<GemmTerm> terms;
      for (std::size_t s = 0; s < gx[1]; ++s) {
        for (std::size_t b = 0; b < gx[2]; ++b) {
          terms.push_back({dy.tile({i, s, b}), x.tile({j, s, b}), cols(x, s, b), false, true});
        }
      }
      gemm_sum(rt_, w_->grad.tile({i, j}), m, x.tile_extent(0, j), terms, true);
    }
    if (!b_) continue;
    for (std::size_t s = 0; s < gy[1]; ++s) {
      for (std::size_t b = 0; b < gy[2]; ++b) {
        rt_.submit("bias_grad", {{dy.tile({i, s, b}), AccessMode::Read}, {b_->grad.tile(i), AccessMode::Reduce}},
                   static_cast<double>(m * cols(y_, s, b)),
                   [m](const TaskContext& ctx) { k::bias_grad(ctx.as<float>(0), ctx.as<float>(1), m); });
      }
    }
  }
}

// ---- LayerNorm ------------------------------------------------------------

LayerNorm::LayerNorm(Runtime& rt, std::string name, std::size_t features, std::size_t tile, const SeqTiling& seq,
                     float eps)
    : rt_(rt),
      features_(features),
      eps_(eps),
      gamma_(make_param(rt, name + ".gamma", {features}, {tile}, Fill::constant(1.0f))),
      beta_(make_param(rt, name + ".beta", {features}, {tile}, Fill::zeros())),
      stats_(rt, {3, seq.n_s, seq.n_b}, {3, seq.ts, seq.tb}),
      xhat_(make_activation(rt, features, tile, seq)),
      y_(make_activation(rt, features, tile, seq)),
      sums_(rt, {2, seq.n_s, seq.n_b}, {2, seq.ts, seq.tb}) {
  set_reduce_op(rt, stats_, norm_stats_op());
}

const TiledTensor& LayerNorm::forward(const TiledTensor& x) {
  if (!x.same_layout(y_)) throw ConfigError("layernorm: input layout does not match the layer");
  const auto& g = x.grid();
  for (std::size_t s = 0; s < g[1]; ++s) {
    for (std::size_t b = 0; b < g[2]; ++b) {
      const std::size_t n = cols(x, s, b);
      const TileHandle st = stats_.tile({0, s, b});
      for (std::size_t j = 0; j < g[0]; ++j) {
        const std::size_t rows = x.tile_extent(0, j);
        rt_.submit("ln_stats", {{x.tile({j, s, b}), AccessMode::Read}, {st, contribution(j == 0)}},
                   3.0 * static_cast<double>(rows * n),
                   [rows](const TaskContext& ctx) { k::norm_stats(ctx.as<float>(0), rows, ctx.as<float>(1)); });
      }
      rt_.submit("ln_finalize", {{st, AccessMode::ReadWrite}}, static_cast<double>(n),
                 [eps = eps_](const TaskContext& ctx) { k::norm_finalize(ctx.as<float>(0), eps); });
      for (std::size_t j = 0; j < g[0]; ++j) {
        const std::size_t rows = x.tile_extent(0, j);
        rt_.submit("ln_normalize",
                   {{x.tile({j, s, b}), AccessMode::Read}, {st, AccessMode::Read}, {xhat_.tile({j, s, b}), AccessMode::Write}},
                   2.0 * static_cast<double>(rows * n), [rows](const TaskContext& ctx) {
                     k::normalize(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), rows);
                   });
        rt_.submit("ln_scale_shift",
                   {{xhat_.tile({j, s, b}), AccessMode::Read},
                    {gamma_.value.tile(j), AccessMode::Read},
                    {beta_.value.tile(j), AccessMode::Read},
                    {y_.tile({j, s, b}), AccessMode::Write}},
                   2.0 * static_cast<double>(rows * n), [](const TaskContext& ctx) {
                     k::scale_shift(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), ctx.as<float>(3));
                   });
      }
    }
  }
  return y_;
}

void LayerNorm::backward(const TiledTensor& dy, const TiledTensor& dx, bool accumulate_dx) {
  if (!dy.same_layout(y_) || !dx.same_layout(y_)) throw ConfigError("layernorm backward: gradient layout mismatch");
  const auto& g = y_.grid();
  for (std::size_t s = 0; s < g[1]; ++s) {
    for (std::size_t b = 0; b < g[2]; ++b) {
      const std::size_t n = cols(y_, s, b);
      const TileHandle sums = sums_.tile({0, s, b});
      for (std::size_t j = 0; j < g[0]; ++j) {
        const std::size_t rows = y_.tile_extent(0, j);
        rt_.submit("ln_affine_grad",
                   {{dy.tile({j, s, b}), AccessMode::Read},
                    {xhat_.tile({j, s, b}), AccessMode::Read},
                    {gamma_.grad.tile(j), AccessMode::Reduce},
                    {beta_.grad.tile(j), AccessMode::Reduce}},
                   2.0 * static_cast<double>(rows * n), [](const TaskContext& ctx) {
                     k::scale_shift_backward(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), ctx.as<float>(3));
                   });
        rt_.submit("ln_bwd_sums",
                   {{dy.tile({j, s, b}), AccessMode::Read},
                    {xhat_.tile({j, s, b}), AccessMode::Read},
                    {gamma_.value.tile(j), AccessMode::Read},
                    {sums, contribution(j == 0)}},
                   3.0 * static_cast<double>(rows * n), [](const TaskContext& ctx) {
                     k::layernorm_backward_sums(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2),
                                                ctx.as<float>(3));
                   });
      }
      for (std::size_t j = 0; j < g[0]; ++j) {
        const std::size_t rows = y_.tile_extent(0, j);
        rt_.submit("ln_bwd_dx",
                   {{dy.tile({j, s, b}), AccessMode::Read},
                    {xhat_.tile({j, s, b}), AccessMode::Read},
                    {gamma_.value.tile(j), AccessMode::Read},
                    {stats_.tile({0, s, b}), AccessMode::Read},
                    {sums, AccessMode::Read},
                    {dx.tile({j, s, b}), accumulate_dx ? AccessMode::ReadWrite : AccessMode::Write}},
                   6.0 * static_cast<double>(rows * n), [n_feat = features_, accumulate_dx](const TaskContext& ctx) {
                     k::layernorm_backward_dx(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2),
                                              ctx.as<float>(3), ctx.as<float>(4), n_feat, ctx.as<float>(5),
                                              accumulate_dx);
                   });
      }
    }
  }
}

// ---- GELU -----------------------------------------------------------------

Gelu::Gelu(Runtime& rt, std::size_t features, std::size_t tile, const SeqTiling& seq)
    : rt_(rt), y_(make_activation(rt, features, tile, seq)) {}

const TiledTensor& Gelu::forward(const TiledTensor& x) {
  if (!x.same_layout(y_)) throw ConfigError("gelu: input layout does not match the layer");
  for (std::size_t i = 0; i < x.num_tiles(); ++i) {
    rt_.submit("gelu", {{x.tile(i), AccessMode::Read}, {y_.tile(i), AccessMode::Write}},
               8.0 * static_cast<double>(x.tile(i).nbytes / 4),
               [](const TaskContext& ctx) { k::gelu(ctx.as<float>(0), ctx.as<float>(1)); });
  }
  return y_;
}

void Gelu::backward(const TiledTensor& x, const TiledTensor& dy, const TiledTensor& dx, bool accumulate_dx) {
  if (!x.same_layout(y_) || !dy.same_layout(y_) || !dx.same_layout(y_)) {
    throw ConfigError("gelu backward: layout mismatch");
  }
  for (std::size_t i = 0; i < x.num_tiles(); ++i) {
    rt_.submit("gelu_bwd",
               {{x.tile(i), AccessMode::Read},
                {dy.tile(i), AccessMode::Read},
                {dx.tile(i), accumulate_dx ? AccessMode::ReadWrite : AccessMode::Write}},
               12.0 * static_cast<double>(x.tile(i).nbytes / 4), [accumulate_dx](const TaskContext& ctx) {
                 k::gelu_backward(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), accumulate_dx);
               });
  }
}

// ---- Embedding ------------------------------------------------------------

Embedding::Embedding(Runtime& rt, std::string name, std::size_t vocab, std::size_t n_e, std::size_t tv,
                     std::size_t te, const SeqTiling& seq, const Fill& init)
    : rt_(rt),
      vocab_(vocab),
      table_(make_param(rt, std::move(name), {vocab, n_e}, {tv, te}, init)),
      y_(make_activation(rt, n_e, te, seq)) {}

const TiledTensor& Embedding::forward(const TiledTensor& ids) {
  const auto& g = y_.grid();
  if (ids.dtype() != DType::I32 || ids.shape() != Shape{y_.dim(1), y_.dim(2)} ||
      ids.tile_shape() != Shape{y_.tile_shape()[1], y_.tile_shape()[2]}) {
    throw ConfigError("embedding: token ids must be I32 (N_s, N_b) tiled like the activations");
  }
  const TiledTensor& e = table_.value;
  const std::size_t nv = e.grid()[0];
  for (std::size_t j = 0; j < g[0]; ++j) {
    for (std::size_t s = 0; s < g[1]; ++s) {
      for (std::size_t b = 0; b < g[2]; ++b) {
        std::vector<Access> acc{{ids.tile({s, b}), AccessMode::Read}};
        std::vector<std::pair<std::size_t, std::size_t>> tiles;  // (rows, offset)
        for (std::size_t i = 0; i < nv; ++i) {
          acc.push_back({e.tile({i, j}), AccessMode::Read});
          tiles.emplace_back(e.tile_extent(0, i), e.tile_offset(0, i));
        }
        acc.push_back({y_.tile({j, s, b}), AccessMode::Write});
        rt_.submit("embedding_gather", std::move(acc), static_cast<double>(y_.tile({j, s, b}).nbytes / 4),
                   [tiles, vocab = vocab_](const TaskContext& ctx) {
                     auto ids_t = ctx.as<std::int32_t>(0);
                     k::check_ids(ids_t, vocab);
                     auto out = ctx.as<float>(ctx.size() - 1);
                     for (std::size_t i = 0; i < tiles.size(); ++i) {
                       k::embedding_gather(ids_t, ctx.as<float>(i + 1), tiles[i].first, tiles[i].second, out);
                     }
                   });
      }
    }
  }
  return y_;
}

void Embedding::backward(const TiledTensor& ids, const TiledTensor& dy) {
  if (!dy.same_layout(y_)) throw ConfigError("embedding backward: gradient layout mismatch");
  const auto& g = y_.grid();
  const TiledTensor& e = table_.grad;
  const std::size_t nv = e.grid()[0];
  for (std::size_t j = 0; j < g[0]; ++j) {
    for (std::size_t s = 0; s < g[1]; ++s) {
      for (std::size_t b = 0; b < g[2]; ++b) {
        std::vector<Access> acc{{ids.tile({s, b}), AccessMode::Read}, {dy.tile({j, s, b}), AccessMode::Read}};
        std::vector<std::pair<std::size_t, std::size_t>> tiles;
        for (std::size_t i = 0; i < nv; ++i) {
          acc.push_back({e.tile({i, j}), AccessMode::Reduce});
          tiles.emplace_back(e.tile_extent(0, i), e.tile_offset(0, i));
        }
        rt_.submit("embedding_scatter", std::move(acc), static_cast<double>(dy.tile({j, s, b}).nbytes / 4),
                   [tiles](const TaskContext& ctx) {
                     for (std::size_t i = 0; i < tiles.size(); ++i) {
                       k::embedding_scatter(ctx.as<std::int32_t>(0), ctx.as<float>(1), tiles[i].first,
                                            tiles[i].second, ctx.as<float>(i + 2));
                     }
                   });
      }
    }
  }
}

// ---- PositionalEmbedding --------------------------------------------------

PositionalEmbedding::PositionalEmbedding(Runtime& rt, std::string name, std::size_t n_e, std::size_t te,
                                         const SeqTiling& seq, const Fill& init)
    : rt_(rt), table_(make_param(rt, std::move(name), {n_e, seq.n_s}, {te, seq.ts}, init)) {}

void PositionalEmbedding::forward(const TiledTensor& x) {
  const TiledTensor& p = table_.value;
  if (x.ndim() != 3 || x.dim(0) != p.dim(0) || x.dim(1) != p.dim(1) || x.tile_shape()[0] != p.tile_shape()[0] ||
      x.tile_shape()[1] != p.tile_shape()[1]) {
    throw ConfigError("positional embedding: activation layout mismatch");
  }
  const auto& g = x.grid();
  for (std::size_t j = 0; j < g[0]; ++j) {
    for (std::size_t s = 0; s < g[1]; ++s) {
      const std::size_t te = x.tile_extent(0, j), ts = x.tile_extent(1, s);
      for (std::size_t b = 0; b < g[2]; ++b) {
        rt_.submit("pos_add", {{p.tile({j, s}), AccessMode::Read}, {x.tile({j, s, b}), AccessMode::ReadWrite}},
                   static_cast<double>(x.tile({j, s, b}).nbytes / 4), [te, ts](const TaskContext& ctx) {
                     k::pos_add(ctx.as<float>(1), ctx.as<float>(0), te, ts);
                   });
      }
    }
  }
}

void PositionalEmbedding::backward(const TiledTensor& dy) {
  const TiledTensor& p = table_.grad;
  const auto& g = dy.grid();
  for (std::size_t j = 0; j < g[0]; ++j) {
    for (std::size_t s = 0; s < g[1]; ++s) {
      const std::size_t te = dy.tile_extent(0, j), ts = dy.tile_extent(1, s);
      for (std::size_t b = 0; b < g[2]; ++b) {
        rt_.submit("pos_grad", {{dy.tile({j, s, b}), AccessMode::Read}, {p.tile({j, s}), AccessMode::Reduce}},
                   static_cast<double>(dy.tile({j, s, b}).nbytes / 4), [te, ts](const TaskContext& ctx) {
                     k::pos_grad(ctx.as<float>(0), ctx.as<float>(1), te, ts);
                   });
      }
    }
  }
}

// ---- CrossEntropy ---------------------------------------------------------

CrossEntropy::CrossEntropy(Runtime& rt, std::size_t vocab, std::size_t tv, const SeqTiling& seq)
    : rt_(rt),
      vocab_(vocab),
      seq_(seq),
      stats_(rt, {2, seq.n_s, seq.n_b}, {2, seq.ts, seq.tb}),
      dlogits_(make_activation(rt, vocab, tv, seq)),
      loss_(rt, {1}, {1}) {
  set_reduce_op(rt, stats_, softmax_stats_op());
}

void CrossEntropy::forward_backward(const TiledTensor& logits, const TiledTensor& labels) {
  if (!logits.same_layout(dlogits_)) throw ConfigError("cross-entropy: logits layout mismatch");
  if (labels.dtype() != DType::I32 || labels.shape() != Shape{seq_.n_s, seq_.n_b} ||
      labels.tile_shape() != Shape{logits.tile_shape()[1], logits.tile_shape()[2]}) {
    throw ConfigError("cross-entropy: labels must be I32 (N_s, N_b) tiled like the logits");
  }
  const float inv_count = 1.0f / static_cast<float>(seq_.n_s * seq_.n_b);
  fill(rt_, loss_, 0.0f);
  const auto& g = logits.grid();
  for (std::size_t s = 0; s < g[1]; ++s) {
    for (std::size_t b = 0; b < g[2]; ++b) {
      const std::size_t n = cols(logits, s, b);
      const TileHandle st = stats_.tile({0, s, b});
      for (std::size_t i = 0; i < g[0]; ++i) {
        const std::size_t rows = logits.tile_extent(0, i);
        rt_.submit("ce_stats", {{logits.tile({i, s, b}), AccessMode::Read}, {st, contribution(i == 0)}},
                   2.0 * static_cast<double>(rows * n),
                   [rows](const TaskContext& ctx) { k::softmax_stats(ctx.as<float>(0), rows, ctx.as<float>(1)); });
      }
      for (std::size_t i = 0; i < g[0]; ++i) {
        const std::size_t rows = logits.tile_extent(0, i);
        rt_.submit("crossentropy",
                   {{logits.tile({i, s, b}), AccessMode::Read},
                    {labels.tile({s, b}), AccessMode::Read},
                    {st, AccessMode::Read},
                    {dlogits_.tile({i, s, b}), AccessMode::Write},
                    {loss_.tile(0), AccessMode::Reduce}},
                   4.0 * static_cast<double>(rows * n),
                   [off = logits.tile_offset(0, i), vocab = vocab_, inv_count](const TaskContext& ctx) {
                     ctx.as<float>(4)[0] = k::crossentropy(ctx.as<float>(0), ctx.as<std::int32_t>(1),
                                                           ctx.as<float>(2), off, vocab, inv_count, ctx.as<float>(3));
                   });
      }
    }
  }
}

float CrossEntropy::loss() { return to_dense(rt_, loss_)[0]; }

}  // namespace tiletrain::nn
