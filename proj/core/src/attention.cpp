// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "tiletrain/error.hpp"
#include "tiletrain/nn.hpp"

namespace tiletrain::nn {

namespace k = tiletrain::kernels;

namespace {

constexpr float kInitStd = 0.02f;

AccessMode contribution(bool first) { return first ? AccessMode::Write : AccessMode::Reduce; }

std::size_t cols(const TiledTensor& t, std::size_t s, std::size_t b) {
  return t.tile_extent(1, s) * t.tile_extent(2, b);
}

}  // namespace

Attention::Attention(Runtime& rt, std::string name, std::size_t n_e, std::size_t heads, std::size_t te,
                     const SeqTiling& seq, bool causal, std::uint64_t seed)
    : rt_(rt), n_e_(n_e), heads_(heads), h_(heads == 0 ? 0 : n_e / heads), seq_(seq), causal_(causal) {
  if (heads == 0 || n_e % heads != 0) {
    throw ConfigError("attention: embedding size " + std::to_string(n_e) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  scale_ = 1.0f / std::sqrt(static_cast<float>(h_));
  const Shape w_shape{h_, heads, n_e}, w_tile{h_, 1, te};
  wq_ = make_param(rt, name + ".wq", w_shape, w_tile, Fill::normal(0.0f, kInitStd, seed));
  wk_ = make_param(rt, name + ".wk", w_shape, w_tile, Fill::normal(0.0f, kInitStd, seed + 1));
  wv_ = make_param(rt, name + ".wv", w_shape, w_tile, Fill::normal(0.0f, kInitStd, seed + 2));
  wo_ = make_param(rt, name + ".wo", {n_e, heads, h_}, {te, 1, h_}, Fill::normal(0.0f, kInitStd, seed + 3));
  bq_ = make_param(rt, name + ".bq", {h_, heads}, {h_, 1}, Fill::zeros());
  bk_ = make_param(rt, name + ".bk", {h_, heads}, {h_, 1}, Fill::zeros());
  bv_ = make_param(rt, name + ".bv", {h_, heads}, {h_, 1}, Fill::zeros());
  bo_ = make_param(rt, name + ".bo", {n_e}, {te}, Fill::zeros());

  const Shape qkv{h_, seq.n_s, seq.n_b, heads}, qkv_tile{h_, seq.ts, seq.tb, 1};
  const Shape sc{seq.n_s, seq.n_s, seq.n_b, heads}, sc_tile{seq.ts, seq.ts, seq.tb, 1};
  for (TiledTensor* t : {&q_, &k_, &v_, &b_, &dq_, &dk_, &dv_, &db_}) *t = TiledTensor(rt, qkv, qkv_tile);
  p_ = TiledTensor(rt, sc, sc_tile);
  dp_ = TiledTensor(rt, sc, sc_tile);
  stats_ = TiledTensor(rt, {2, seq.n_s, seq.n_b, heads}, {2, seq.ts, seq.tb, 1});
  set_reduce_op(rt, stats_, softmax_stats_op());
  dot_ = TiledTensor(rt, {seq.n_s, seq.n_b, heads}, {seq.ts, seq.tb, 1});
  y_ = make_activation(rt, n_e, te, seq);
}

std::vector<TensorGradPair*> Attention::params() { return {&wq_, &wk_, &wv_, &wo_, &bq_, &bk_, &bv_, &bo_}; }

k::AttnDims Attention::dims(std::size_t key_tile, std::size_t query_tile, std::size_t b_tile) const {
  return {h_, p_.tile_extent(0, key_tile), p_.tile_extent(1, query_tile), p_.tile_extent(2, b_tile)};
}

void Attention::project(const TensorGradPair& w, const TensorGradPair& b, const TiledTensor& x,
                        const TiledTensor& out) {
  const auto& gx = x.grid();
  for (std::size_t n = 0; n < heads_; ++n) {
    for (std::size_t s = 0; s < gx[1]; ++s) {
      for (std::size_t bb = 0; bb < gx[2]; ++bb) {
        std::vector<GemmTerm> terms;
        for (std::size_t j = 0; j < gx[0]; ++j) {
          terms.push_back({w.value.tile({0, n, j}), x.tile({j, s, bb}), x.tile_extent(0, j)});
        }
        gemm_sum(rt_, out.tile({0, s, bb, n}), h_, cols(x, s, bb), terms, false, b.value.tile({0, n}));
      }
    }
  }
}

void Attention::project_grads(TensorGradPair& w, TensorGradPair& b, const TiledTensor& x, const TiledTensor& d) {
  const auto& gx = x.grid();
  for (std::size_t n = 0; n < heads_; ++n) {
    for (std::size_t j = 0; j < gx[0]; ++j) {
      std::vector<GemmTerm> terms;
      for (std::size_t s = 0; s < gx[1]; ++s) {
        for (std::size_t bb = 0; bb < gx[2]; ++bb) {
          terms.push_back({d.tile({0, s, bb, n}), x.tile({j, s, bb}), cols(x, s, bb), false, true});
        }
      }
      gemm_sum(rt_, w.grad.tile({0, n, j}), h_, x.tile_extent(0, j), terms, true);
    }
    for (std::size_t s = 0; s < gx[1]; ++s) {
      for (std::size_t bb = 0; bb < gx[2]; ++bb) {
        rt_.submit("bias_grad", {{d.tile({0, s, bb, n}), AccessMode::Read}, {b.grad.tile({0, n}), AccessMode::Reduce}},
                   static_cast<double>(h_ * cols(x, s, bb)),
                   [h = h_](const TaskContext& ctx) { k::bias_grad(ctx.as<float>(0), ctx.as<float>(1), h); });
      }
    }
  }
}

const TiledTensor& Attention::forward(const TiledTensor& x) {
  if (!x.same_layout(y_)) throw ConfigError("attention: input layout does not match the layer");
  project(wq_, bq_, x, q_);
  project(wk_, bk_, x, k_);
  project(wv_, bv_, x, v_);

  const std::size_t ns = p_.grid()[0], nb = p_.grid()[2];
  for (std::size_t n = 0; n < heads_; ++n) {
    for (std::size_t bb = 0; bb < nb; ++bb) {
      for (std::size_t jq = 0; jq < ns; ++jq) {
        const TileHandle st = stats_.tile({0, jq, bb, n});
        bool first = true;
        for (std::size_t i = 0; i < ns; ++i) {
          if (!live(i, jq)) continue;
          const k::AttnDims d = dims(i, jq, bb);
          const TileHandle p = p_.tile({i, jq, bb, n});
          rt_.submit("attn_scores",
                     {{k_.tile({0, i, bb, n}), AccessMode::Read}, {q_.tile({0, jq, bb, n}), AccessMode::Read},
                      {p, AccessMode::Write}},
                     k::attn_cost(d), [d, scale = scale_](const TaskContext& ctx) {
                       k::attn_scores(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), d, scale);
                     });
          const k::CausalMask mask{causal_, p_.tile_offset(0, i), p_.tile_offset(1, jq), d.tb};
          rt_.submit("softmax_stats", {{p, AccessMode::Read}, {st, contribution(first)}},
                     2.0 * static_cast<double>(d.sk * d.sq * d.tb), [d, mask](const TaskContext& ctx) {
                       k::softmax_stats(ctx.as<float>(0), d.sk, ctx.as<float>(1), mask);
                     });
          first = false;
        }
        for (std::size_t i = 0; i < ns; ++i) {
          if (!live(i, jq)) continue;
          const k::AttnDims d = dims(i, jq, bb);
          const k::CausalMask mask{causal_, p_.tile_offset(0, i), p_.tile_offset(1, jq), d.tb};
          rt_.submit("softmax_apply", {{st, AccessMode::Read}, {p_.tile({i, jq, bb, n}), AccessMode::ReadWrite}},
                     2.0 * static_cast<double>(d.sk * d.sq * d.tb), [d, mask](const TaskContext& ctx) {
                       k::softmax_apply(ctx.as<float>(1), ctx.as<float>(0), d.sk, mask);
                     });
        }
        first = true;
        for (std::size_t i = 0; i < ns; ++i) {
          if (!live(i, jq)) continue;
          const k::AttnDims d = dims(i, jq, bb);
          rt_.submit("attn_pv",
                     {{v_.tile({0, i, bb, n}), AccessMode::Read}, {p_.tile({i, jq, bb, n}), AccessMode::Read},
                      {b_.tile({0, jq, bb, n}), contribution(first)}},
                     k::attn_cost(d), [d](const TaskContext& ctx) {
                       k::attn_pv(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), d, false);
                     });
          first = false;
        }
      }
    }
  }

  const auto& gy = y_.grid();
  for (std::size_t e = 0; e < gy[0]; ++e) {
    for (std::size_t s = 0; s < gy[1]; ++s) {
      for (std::size_t bb = 0; bb < gy[2]; ++bb) {
        std::vector<GemmTerm> terms;
        for (std::size_t n = 0; n < heads_; ++n) terms.push_back({wo_.value.tile({e, n, 0}), b_.tile({0, s, bb, n}), h_});
        gemm_sum(rt_, y_.tile({e, s, bb}), y_.tile_extent(0, e), cols(y_, s, bb), terms, false, bo_.value.tile(e));
      }
    }
  }
  return y_;
}

void Attention::backward(const TiledTensor& x, const TiledTensor& dy, const TiledTensor& dx, bool accumulate_dx) {
  if (!dy.same_layout(y_) || !dx.same_layout(y_) || !x.same_layout(y_)) {
    throw ConfigError("attention backward: layout mismatch");
  }
  const auto& gy = y_.grid();

  // Output projection.
  for (std::size_t e = 0; e < gy[0]; ++e) {
    const std::size_t te = y_.tile_extent(0, e);
    for (std::size_t n = 0; n < heads_; ++n) {
      std::vector<GemmTerm> terms;
      for (std::size_t s = 0; s < gy[1]; ++s) {
        for (std::size_t bb = 0; bb < gy[2]; ++bb) {
          terms.push_back({dy.tile({e, s, bb}), b_.tile({0, s, bb, n}), cols(y_, s, bb), false, true});
        }
      }
      gemm_sum(rt_, wo_.grad.tile({e, n, 0}), te, h_, terms, true);
    }
    for (std::size_t s = 0; s < gy[1]; ++s) {
      for (std::size_t bb = 0; bb < gy[2]; ++bb) {
        rt_.submit("bias_grad", {{dy.tile({e, s, bb}), AccessMode::Read}, {bo_.grad.tile(e), AccessMode::Reduce}},
                   static_cast<double>(te * cols(y_, s, bb)),
                   [te](const TaskContext& ctx) { k::bias_grad(ctx.as<float>(0), ctx.as<float>(1), te); });
      }
    }
  }
  for (std::size_t n = 0; n < heads_; ++n) {
    for (std::size_t s = 0; s < gy[1]; ++s) {
      for (std::size_t bb = 0; bb < gy[2]; ++bb) {
        std::vector<GemmTerm> terms;
        for (std::size_t e = 0; e < gy[0]; ++e) {
          terms.push_back({wo_.value.tile({e, n, 0}), dy.tile({e, s, bb}), y_.tile_extent(0, e), true, false});
        }
        gemm_sum(rt_, db_.tile({0, s, bb, n}), h_, cols(y_, s, bb), terms, false);
      }
    }
  }

  const std::size_t ns = p_.grid()[0], nb = p_.grid()[2];
  for (std::size_t n = 0; n < heads_; ++n) {
    for (std::size_t bb = 0; bb < nb; ++bb) {
      // dP, then the softmax backward per query tile.
      for (std::size_t jq = 0; jq < ns; ++jq) {
        const TileHandle dot = dot_.tile({jq, bb, n});
        bool first = true;
        for (std::size_t i = 0; i < ns; ++i) {
          if (!live(i, jq)) continue;
          const k::AttnDims d = dims(i, jq, bb);
          const TileHandle dp = dp_.tile({i, jq, bb, n});
          rt_.submit("attn_grad_p",
                     {{v_.tile({0, i, bb, n}), AccessMode::Read}, {db_.tile({0, jq, bb, n}), AccessMode::Read},
                      {dp, AccessMode::Write}},
                     k::attn_cost(d), [d](const TaskContext& ctx) {
                       k::attn_grad_p(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), d);
                     });
          rt_.submit("softmax_bwd_dot",
                     {{p_.tile({i, jq, bb, n}), AccessMode::Read}, {dp, AccessMode::Read}, {dot, contribution(first)}},
                     2.0 * static_cast<double>(d.sk * d.sq * d.tb), [d](const TaskContext& ctx) {
                       k::softmax_backward_dot(ctx.as<float>(0), ctx.as<float>(1), d.sk, ctx.as<float>(2));
                     });
          first = false;
        }
        for (std::size_t i = 0; i < ns; ++i) {
          if (!live(i, jq)) continue;
          const k::AttnDims d = dims(i, jq, bb);
          rt_.submit("softmax_bwd",
                     {{p_.tile({i, jq, bb, n}), AccessMode::Read}, {dot, AccessMode::Read},
                      {dp_.tile({i, jq, bb, n}), AccessMode::ReadWrite}},
                     3.0 * static_cast<double>(d.sk * d.sq * d.tb), [d, scale = scale_](const TaskContext& ctx) {
                       k::softmax_backward(ctx.as<float>(0), ctx.as<float>(2), ctx.as<float>(1), d.sk, scale);
                     });
        }
      }
      // dV and dK sum over query tiles, dQ over key tiles.
      for (std::size_t i = 0; i < ns; ++i) {
        bool first = true;
        for (std::size_t jq = 0; jq < ns; ++jq) {
          if (!live(i, jq)) continue;
          const k::AttnDims d = dims(i, jq, bb);
          rt_.submit("attn_grad_v",
                     {{db_.tile({0, jq, bb, n}), AccessMode::Read}, {p_.tile({i, jq, bb, n}), AccessMode::Read},
                      {dv_.tile({0, i, bb, n}), contribution(first)}},
                     k::attn_cost(d), [d](const TaskContext& ctx) {
                       k::attn_grad_v(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), d, false);
                     });
          rt_.submit("attn_grad_k",
                     {{q_.tile({0, jq, bb, n}), AccessMode::Read}, {dp_.tile({i, jq, bb, n}), AccessMode::Read},
                      {dk_.tile({0, i, bb, n}), contribution(first)}},
                     k::attn_cost(d), [d](const TaskContext& ctx) {
                       k::attn_grad_k(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), d, 1.0f, false);
                     });
          first = false;
        }
      }
      for (std::size_t jq = 0; jq < ns; ++jq) {
        bool first = true;
        for (std::size_t i = 0; i < ns; ++i) {
          if (!live(i, jq)) continue;
          const k::AttnDims d = dims(i, jq, bb);
          rt_.submit("attn_grad_q",
                     {{k_.tile({0, i, bb, n}), AccessMode::Read}, {dp_.tile({i, jq, bb, n}), AccessMode::Read},
                      {dq_.tile({0, jq, bb, n}), contribution(first)}},
                     k::attn_cost(d), [d](const TaskContext& ctx) {
                       k::attn_grad_q(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), d, 1.0f, false);
                     });
          first = false;
        }
      }
    }
  }

  project_grads(wq_, bq_, x, dq_);
  project_grads(wk_, bk_, x, dk_);
  project_grads(wv_, bv_, x, dv_);

  const auto& gx = x.grid();
  for (std::size_t j = 0; j < gx[0]; ++j) {
    for (std::size_t s = 0; s < gx[1]; ++s) {
      for (std::size_t bb = 0; bb < gx[2]; ++bb) {
        std::vector<GemmTerm> terms;
        for (std::size_t n = 0; n < heads_; ++n) {
          terms.push_back({wq_.value.tile({0, n, j}), dq_.tile({0, s, bb, n}), h_, true, false});
          terms.push_back({wk_.value.tile({0, n, j}), dk_.tile({0, s, bb, n}), h_, true, false});
          terms.push_back({wv_.value.tile({0, n, j}), dv_.tile({0, s, bb, n}), h_, true, false});
        }
        gemm_sum(rt_, dx.tile({j, s, bb}), x.tile_extent(0, j), cols(x, s, bb), terms, accumulate_dx);
      }
    }
  }
}

}  // namespace tiletrain::nn
