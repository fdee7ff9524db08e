// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

// Per-tile compute kernels. Each is a deterministic function of its spans,
// touches nothing else, and throws KernelError on inconsistent sizes.
//
// A tile of an (A, rest...) tensor is treated as a rows x cols matrix with
// rows = extent of the leading axis and cols = product of the other extents.
namespace tiletrain::kernels {

// Strided matrix view: element (i, j) lives at data[i * rs + j * cs].
struct MatView {
  float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::ptrdiff_t rs = 0;
  std::ptrdiff_t cs = 1;

  float& operator()(std::size_t i, std::size_t j) const {
    return data[static_cast<std::ptrdiff_t>(i) * rs + static_cast<std::ptrdiff_t>(j) * cs];
  }
  MatView t() const { return {data, cols, rows, cs, rs}; }
};

struct ConstMatView {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::ptrdiff_t rs = 0;
  std::ptrdiff_t cs = 1;

  ConstMatView() = default;
  ConstMatView(const float* d, std::size_t r, std::size_t c, std::ptrdiff_t rs_, std::ptrdiff_t cs_)
      : data(d), rows(r), cols(c), rs(rs_), cs(cs_) {}
  ConstMatView(const MatView& m) : data(m.data), rows(m.rows), cols(m.cols), rs(m.rs), cs(m.cs) {}  // NOLINT

  float operator()(std::size_t i, std::size_t j) const {
    return data[static_cast<std::ptrdiff_t>(i) * rs + static_cast<std::ptrdiff_t>(j) * cs];
  }
  ConstMatView t() const { return {data, cols, rows, cs, rs}; }
};

MatView row_major(std::span<float> data, std::size_t rows, std::size_t cols);
ConstMatView row_major(std::span<const float> data, std::size_t rows, std::size_t cols);

// C := alpha * A * B + beta * C on views (transpose with .t()).
void gemm(float alpha, ConstMatView a, ConstMatView b, float beta, MatView c);

// C (m x n) := alpha * op(A) op(B) + beta * C, all tiles row-major.
// A is m x k (k x m when trans_a), B is k x n (n x k when trans_b).
void gemm_tile(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
               std::size_t k, std::size_t n, float alpha, float beta, bool trans_a, bool trans_b);
constexpr double gemm_cost(std::size_t m, std::size_t k, std::size_t n) {
  return 2.0 * static_cast<double>(m) * static_cast<double>(k) * static_cast<double>(n);
}

// Y[i, j] += b[i].
void bias_add(std::span<float> y, std::span<const float> b, std::size_t rows);
// db[i] = (accumulate ? db[i] : 0) + sum_j dY[i, j].
void bias_grad(std::span<const float> dy, std::span<float> db, std::size_t rows, bool accumulate = false);

// Elementwise helpers.
void fill(std::span<float> x, float value);
void copy(std::span<const float> src, std::span<float> dst);
// out = a + b (out may alias a or b).
void add(std::span<const float> a, std::span<const float> b, std::span<float> out);
// y += alpha * x.
void axpy(float alpha, std::span<const float> x, std::span<float> y);
void scale(std::span<float> x, float alpha);

// GELU, tanh approximation. The templates serve double-precision references.
template <class T>
T gelu_value(T x) {
  const T c = T(0.7978845608028654);  // sqrt(2 / pi)
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_derivative(T x) {
  const T c = T(0.7978845608028654);
  const T u = c * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(u);
  const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

void gelu(std::span<const float> x, std::span<float> y);
// dx = (accumulate ? dx : 0) + dy * gelu'(x).
void gelu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx, bool accumulate = false);

// ---- normalization over the leading (row) axis -----------------------------

inline constexpr float kLayerNormEps = 1e-5f;

// Per-column partial statistics, 3 x cols: (count, mean, M2).
void norm_stats(std::span<const float> x, std::size_t rows, std::span<float> stats);
// Merges partial statistics `part` into `acc` (parallel Welford update).
void norm_stats_combine(std::span<float> acc, std::span<const float> part);
// Rewrites (count, mean, M2) as (count, mean, 1 / sqrt(var + eps)), with the
// biased variance M2 / count.
void norm_finalize(std::span<float> stats, float eps = kLayerNormEps);
// xhat[i, j] = (x[i, j] - mean[j]) * inv_std[j].
void normalize(std::span<const float> x, std::span<const float> stats, std::span<float> xhat, std::size_t rows);
// y[i, j] = gamma[i] * xhat[i, j] + beta[i].
void scale_shift(std::span<const float> xhat, std::span<const float> gamma, std::span<const float> beta,
                 std::span<float> y);
// dgamma[i] = sum_j dy * xhat, dbeta[i] = sum_j dy.
void scale_shift_backward(std::span<const float> dy, std::span<const float> xhat, std::span<float> dgamma,
                          std::span<float> dbeta);
// Per-column partial sums, 2 x cols: (sum_i g, sum_i g * xhat) with g = gamma * dy.
void layernorm_backward_sums(std::span<const float> dy, std::span<const float> xhat, std::span<const float> gamma,
                             std::span<float> sums);
// dx = inv_std * (g - mean_i(g) - xhat * mean_i(g * xhat)); `n` is the full
// normalized extent. Adds into dx when `accumulate`.
void layernorm_backward_dx(std::span<const float> dy, std::span<const float> xhat, std::span<const float> gamma,
                           std::span<const float> stats, std::span<const float> sums, std::size_t n,
                           std::span<float> dx, bool accumulate);

// ---- softmax over the leading (row) axis ----------------------------------

// Autoregressive mask for a tile of a (keys, queries, ...) score tensor: row
// r is key row_offset + r; column c is query col_offset + c / col_group.
// Entries with key > query are excluded.
struct CausalMask {
  bool enabled = false;
  std::size_t row_offset = 0;
  std::size_t col_offset = 0;
  std::size_t col_group = 1;

  bool masked(std::size_t r, std::size_t c) const noexcept {
    return enabled && row_offset + r > col_offset + c / col_group;
  }
};

// Per-column (max, sum exp(t - max)), 2 x cols. Fully masked columns give
// (-inf, 0).
void softmax_stats(std::span<const float> t, std::size_t rows, std::span<float> stats, const CausalMask& mask = {});
// Merges (max, sumexp) partials: m = max(m1, m2), s = s1 e^{m1-m} + s2 e^{m2-m}.
void softmax_stats_combine(std::span<float> acc, std::span<const float> part);
// p = exp(t - max) / sum, written over t; masked entries become 0.
void softmax_apply(std::span<float> t, std::span<const float> stats, std::size_t rows, const CausalMask& mask = {});
// dot[j] = sum_i p[i, j] * dp[i, j].
void softmax_backward_dot(std::span<const float> p, std::span<const float> dp, std::size_t rows,
                          std::span<float> dot);
// dp := scale * p * (dp - dot), in place.
void softmax_backward(std::span<const float> p, std::span<float> dp, std::span<const float> dot, std::size_t rows,
                      float scale = 1.0f);

// ---- attention ------------------------------------------------------------
// Q/K/V/B tiles are (h, s, tb) row-major; score tiles are (sk, sq, tb). For
// every batch column b the kernels apply a matrix product to the b-th slice.

struct AttnDims {
  std::size_t h = 0;
  std::size_t sk = 0;
  std::size_t sq = 0;
  std::size_t tb = 0;
};

// A[:, :, b] = scale * K_b^T Q_b.
void attn_scores(std::span<const float> k, std::span<const float> q, std::span<float> a, const AttnDims& d,
                 float scale);
// B_b (+)= V_b P_b.
void attn_pv(std::span<const float> v, std::span<const float> p, std::span<float> b, const AttnDims& d,
             bool accumulate);
// dP_b = V_b^T dB_b.
void attn_grad_p(std::span<const float> v, std::span<const float> db, std::span<float> dp, const AttnDims& d);
// dV_b (+)= dB_b P_b^T.
void attn_grad_v(std::span<const float> db, std::span<const float> p, std::span<float> dv, const AttnDims& d,
                 bool accumulate);
// dQ_b (+)= scale * K_b dA_b.
void attn_grad_q(std::span<const float> k, std::span<const float> da, std::span<float> dq, const AttnDims& d,
                 float scale, bool accumulate);
// dK_b (+)= scale * Q_b dA_b^T.
void attn_grad_k(std::span<const float> q, std::span<const float> da, std::span<float> dk, const AttnDims& d,
                 float scale, bool accumulate);
constexpr double attn_cost(const AttnDims& d) {
  return 2.0 * static_cast<double>(d.h) * static_cast<double>(d.sk) * static_cast<double>(d.sq) *
         static_cast<double>(d.tb);
}

// ---- embeddings -----------------------------------------------------------

// out[e, c] = table[ids[c] - v_offset, e] for ids inside
// [v_offset, v_offset + vrows); other columns are left untouched. `table`
// is a (vrows, te) tile of the (N_v, N_e) table, `out` is (te, cols).
void embedding_gather(std::span<const std::int32_t> ids, std::span<const float> table, std::size_t vrows,
                      std::size_t v_offset, std::span<float> out);
// grad[id - v_offset, e] = sum over columns with that id of dy[e, c];
// entries with no matching id become 0.
void embedding_scatter(std::span<const std::int32_t> ids, std::span<const float> dy, std::size_t vrows,
                       std::size_t v_offset, std::span<float> grad);
// Throws KernelError when some id is outside [0, vocab).
void check_ids(std::span<const std::int32_t> ids, std::size_t vocab);

// x[e, s, b] += pos[e, s] for x of (te, ts, tb) and pos of (te, ts).
void pos_add(std::span<float> x, std::span<const float> pos, std::size_t te, std::size_t ts);
// dpos[e, s] = sum_b dx[e, s, b].
void pos_grad(std::span<const float> dx, std::span<float> dpos, std::size_t te, std::size_t ts);

// ---- cross-entropy --------------------------------------------------------

// For a (vrows, cols) logits tile covering classes [v_offset, v_offset+vrows)
// and softmax stats (2 x cols) over all classes:
//   dlogits = (softmax - onehot(label)) * inv_count
//   loss = sum over columns whose label lies in this tile of
//          (max + log(sumexp) - logit[label]) * inv_count.
// Returns the loss partial; labels outside [0, n_classes) throw.
float crossentropy(std::span<const float> logits, std::span<const std::int32_t> labels,
                   std::span<const float> stats, std::size_t v_offset, std::size_t n_classes, float inv_count,
                   std::span<float> dlogits);

// ---- optimizers -----------------------------------------------------------

// m = mu * m + g; w -= lr * m.
void sgd_momentum(std::span<float> w, std::span<const float> g, std::span<float> m, float lr, float mu);

struct AdamParams {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  // Decoupled decay (AdamW) when > 0.
  float weight_decay = 0.0f;
};
// Bias-corrected Adam at step t >= 1; AdamW first applies w -= lr * wd * w.
void adam(std::span<float> w, std::span<const float> g, std::span<float> m, std::span<float> v,
          const AdamParams& p, std::int64_t t);

}  // namespace tiletrain::kernels
