// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/kernels.hpp"

#include <algorithm>
#include <string>

#include "tiletrain/error.hpp"

namespace tiletrain::kernels {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw KernelError(what);
}

void require_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw KernelError(std::string(what) + ": expected " + std::to_string(want) + " elements, got " +
                      std::to_string(got));
  }
}

std::size_t cols_of(std::size_t total, std::size_t rows, const char* what) {
  if (rows == 0 || total % rows != 0) {
    throw KernelError(std::string(what) + ": " + std::to_string(total) + " elements do not form " +
                      std::to_string(rows) + " rows");
  }
  return total / rows;
}

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

}  // namespace

MatView row_major(std::span<float> data, std::size_t rows, std::size_t cols) {
  require_size(data.size(), rows * cols, "row_major view");
  return {data.data(), rows, cols, static_cast<std::ptrdiff_t>(cols), 1};
}

ConstMatView row_major(std::span<const float> data, std::size_t rows, std::size_t cols) {
  require_size(data.size(), rows * cols, "row_major view");
  return {data.data(), rows, cols, static_cast<std::ptrdiff_t>(cols), 1};
}

void gemm(float alpha, ConstMatView a, ConstMatView b, float beta, MatView c) {
  if (a.cols != b.rows || a.rows != c.rows || b.cols != c.cols) {
    throw KernelError("gemm: shapes (" + std::to_string(a.rows) + "x" + std::to_string(a.cols) + ") * (" +
                      std::to_string(b.rows) + "x" + std::to_string(b.cols) + ") -> (" + std::to_string(c.rows) +
                      "x" + std::to_string(c.cols) + ") do not agree");
  }
  const std::size_t m = c.rows, n = c.cols, k = a.cols;
  for (std::size_t i = 0; i < m; ++i) {
    if (beta == 0.0f) {
      for (std::size_t j = 0; j < n; ++j) c(i, j) = 0.0f;
    } else if (beta != 1.0f) {
      for (std::size_t j = 0; j < n; ++j) c(i, j) *= beta;
    }
  }
  if (alpha == 0.0f || k == 0) return;

  if (c.cs == 1 && b.cs == 1) {
    // Unit-stride rows of B and C: the inner loop vectorizes.
    for (std::size_t i = 0; i < m; ++i) {
      float* crow = &c(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const float aip = alpha * a(i, p);
        const float* brow = b.data + static_cast<std::ptrdiff_t>(p) * b.rs;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      c(i, j) += alpha * acc;
    }
  }
}

void gemm_tile(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
               std::size_t k, std::size_t n, float alpha, float beta, bool trans_a, bool trans_b) {
  require_size(a.size(), m * k, "gemm_tile A");
  require_size(b.size(), k * n, "gemm_tile B");
  require_size(c.size(), m * n, "gemm_tile C");
  const ConstMatView av = trans_a ? row_major(a, k, m).t() : row_major(a, m, k);
  const ConstMatView bv = trans_b ? row_major(b, n, k).t() : row_major(b, k, n);
  gemm(alpha, av, bv, beta, row_major(c, m, n));
}

void bias_add(std::span<float> y, std::span<const float> b, std::size_t rows) {
  require_size(b.size(), rows, "bias_add bias");
  const std::size_t cols = cols_of(y.size(), rows, "bias_add");
  for (std::size_t i = 0; i < rows; ++i) {
    float* row = y.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += b[i];
  }
}

void bias_grad(std::span<const float> dy, std::span<float> db, std::size_t rows, bool accumulate) {
  require_size(db.size(), rows, "bias_grad bias");
  const std::size_t cols = cols_of(dy.size(), rows, "bias_grad");
  for (std::size_t i = 0; i < rows; ++i) {
    float s = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) s += dy[i * cols + j];
    db[i] = accumulate ? db[i] + s : s;
  }
}

void fill(std::span<float> x, float value) { std::fill(x.begin(), x.end(), value); }

void copy(std::span<const float> src, std::span<float> dst) {
  require_size(dst.size(), src.size(), "copy");
  std::copy(src.begin(), src.end(), dst.begin());
}

void add(std::span<const float> a, std::span<const float> b, std::span<float> out) {
  require_size(b.size(), a.size(), "add");
  require_size(out.size(), a.size(), "add output");
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  require_size(y.size(), x.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<float> x, float alpha) {
  for (float& v : x) v *= alpha;
}

void gelu(std::span<const float> x, std::span<float> y) {
  require_size(y.size(), x.size(), "gelu");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_value(x[i]);
}

void gelu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx, bool accumulate) {
  require_size(dy.size(), x.size(), "gelu_backward dy");
  require_size(dx.size(), x.size(), "gelu_backward dx");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float g = dy[i] * gelu_derivative(x[i]);
    dx[i] = accumulate ? dx[i] + g : g;
  }
}

// ---------------------------------------------------------------------------

void norm_stats(std::span<const float> x, std::size_t rows, std::span<float> stats) {
  const std::size_t cols = cols_of(x.size(), rows, "norm_stats");
  require_size(stats.size(), 3 * cols, "norm_stats stats");
  for (std::size_t j = 0; j < cols; ++j) {
    float mean = 0.0f;
    for (std::size_t i = 0; i < rows; ++i) mean += x[i * cols + j];
    mean /= static_cast<float>(rows);
    float m2 = 0.0f;
    for (std::size_t i = 0; i < rows; ++i) {
      const float d = x[i * cols + j] - mean;
      m2 += d * d;
    }
    stats[j] = static_cast<float>(rows);
    stats[cols + j] = mean;
    stats[2 * cols + j] = m2;
  }
}

void norm_stats_combine(std::span<float> acc, std::span<const float> part) {
  require_size(part.size(), acc.size(), "norm_stats_combine");
  require(acc.size() % 3 == 0, "norm_stats_combine: stats must have 3 rows");
  const std::size_t cols = acc.size() / 3;
  for (std::size_t j = 0; j < cols; ++j) {
    const float na = acc[j], nb = part[j];
    if (nb == 0.0f) continue;
    if (na == 0.0f) {
      acc[j] = nb;
      acc[cols + j] = part[cols + j];
      acc[2 * cols + j] = part[2 * cols + j];
      continue;
    }
    const float n = na + nb;
    const float delta = part[cols + j] - acc[cols + j];
    acc[cols + j] += delta * (nb / n);
    acc[2 * cols + j] += part[2 * cols + j] + delta * delta * (na * nb / n);
    acc[j] = n;
  }
}

void norm_finalize(std::span<float> stats, float eps) {
  require(stats.size() % 3 == 0, "norm_finalize: stats must have 3 rows");
  const std::size_t cols = stats.size() / 3;
  for (std::size_t j = 0; j < cols; ++j) {
    require(stats[j] > 0.0f, "norm_finalize: empty statistics");
    const float var = stats[2 * cols + j] / stats[j];
    stats[2 * cols + j] = 1.0f / std::sqrt(var + eps);
  }
}

void normalize(std::span<const float> x, std::span<const float> stats, std::span<float> xhat, std::size_t rows) {
  const std::size_t cols = cols_of(x.size(), rows, "normalize");
  require_size(stats.size(), 3 * cols, "normalize stats");
  require_size(xhat.size(), x.size(), "normalize output");
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      xhat[i * cols + j] = (x[i * cols + j] - stats[cols + j]) * stats[2 * cols + j];
    }
  }
}

void scale_shift(std::span<const float> xhat, std::span<const float> gamma, std::span<const float> beta,
                 std::span<float> y) {
  const std::size_t rows = gamma.size();
  require_size(beta.size(), rows, "scale_shift beta");
  require_size(y.size(), xhat.size(), "scale_shift output");
  const std::size_t cols = cols_of(xhat.size(), rows, "scale_shift");
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] = gamma[i] * xhat[i * cols + j] + beta[i];
  }
}

void scale_shift_backward(std::span<const float> dy, std::span<const float> xhat, std::span<float> dgamma,
                          std::span<float> dbeta) {
  const std::size_t rows = dgamma.size();
  require_size(dbeta.size(), rows, "scale_shift_backward dbeta");
  require_size(xhat.size(), dy.size(), "scale_shift_backward xhat");
  const std::size_t cols = cols_of(dy.size(), rows, "scale_shift_backward");
  for (std::size_t i = 0; i < rows; ++i) {
    float sg = 0.0f, sb = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) {
      sg += dy[i * cols + j] * xhat[i * cols + j];
      sb += dy[i * cols + j];
    }
    dgamma[i] = sg;
    dbeta[i] = sb;
  }
}

void layernorm_backward_sums(std::span<const float> dy, std::span<const float> xhat, std::span<const float> gamma,
                             std::span<float> sums) {
  const std::size_t rows = gamma.size();
  require_size(xhat.size(), dy.size(), "layernorm_backward_sums xhat");
  const std::size_t cols = cols_of(dy.size(), rows, "layernorm_backward_sums");
  require_size(sums.size(), 2 * cols, "layernorm_backward_sums sums");
  std::fill(sums.begin(), sums.end(), 0.0f);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const float g = gamma[i] * dy[i * cols + j];
      sums[j] += g;
      sums[cols + j] += g * xhat[i * cols + j];
    }
  }
}

void layernorm_backward_dx(std::span<const float> dy, std::span<const float> xhat, std::span<const float> gamma,
                           std::span<const float> stats, std::span<const float> sums, std::size_t n,
                           std::span<float> dx, bool accumulate) {
  const std::size_t rows = gamma.size();
  require_size(xhat.size(), dy.size(), "layernorm_backward_dx xhat");
  require_size(dx.size(), dy.size(), "layernorm_backward_dx dx");
  const std::size_t cols = cols_of(dy.size(), rows, "layernorm_backward_dx");
  require_size(stats.size(), 3 * cols, "layernorm_backward_dx stats");
  require_size(sums.size(), 2 * cols, "layernorm_backward_dx sums");
  require(n > 0, "layernorm_backward_dx: empty normalized extent");
  const float inv_n = 1.0f / static_cast<float>(n);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t at = i * cols + j;
      const float g = gamma[i] * dy[at];
      const float v = stats[2 * cols + j] * (g - sums[j] * inv_n - xhat[at] * sums[cols + j] * inv_n);
      dx[at] = accumulate ? dx[at] + v : v;
    }
  }
}

// ---------------------------------------------------------------------------

void softmax_stats(std::span<const float> t, std::size_t rows, std::span<float> stats, const CausalMask& mask) {
  const std::size_t cols = cols_of(t.size(), rows, "softmax_stats");
  require_size(stats.size(), 2 * cols, "softmax_stats stats");
  for (std::size_t j = 0; j < cols; ++j) {
    float m = kNegInf;
    for (std::size_t i = 0; i < rows; ++i) {
      if (!mask.masked(i, j)) m = std::max(m, t[i * cols + j]);
    }
    float s = 0.0f;
    if (m != kNegInf) {
      for (std::size_t i = 0; i < rows; ++i) {
        if (!mask.masked(i, j)) s += std::exp(t[i * cols + j] - m);
      }
    }
    stats[j] = m;
    stats[cols + j] = s;
  }
}

void softmax_stats_combine(std::span<float> acc, std::span<const float> part) {
  require_size(part.size(), acc.size(), "softmax_stats_combine");
  require(acc.size() % 2 == 0, "softmax_stats_combine: stats must have 2 rows");
  const std::size_t cols = acc.size() / 2;
  for (std::size_t j = 0; j < cols; ++j) {
    const float m1 = acc[j], m2 = part[j];
    if (m2 == kNegInf) continue;
    if (m1 == kNegInf) {
      acc[j] = m2;
      acc[cols + j] = part[cols + j];
      continue;
    }
    const float m = std::max(m1, m2);
    acc[cols + j] = acc[cols + j] * std::exp(m1 - m) + part[cols + j] * std::exp(m2 - m);
    acc[j] = m;
  }
}

void softmax_apply(std::span<float> t, std::span<const float> stats, std::size_t rows, const CausalMask& mask) {
  const std::size_t cols = cols_of(t.size(), rows, "softmax_apply");
  require_size(stats.size(), 2 * cols, "softmax_apply stats");
  for (std::size_t j = 0; j < cols; ++j) {
    const float m = stats[j];
    const float inv = stats[cols + j] > 0.0f ? 1.0f / stats[cols + j] : 0.0f;
    for (std::size_t i = 0; i < rows; ++i) {
      float& v = t[i * cols + j];
      v = (mask.masked(i, j) || m == kNegInf) ? 0.0f : std::exp(v - m) * inv;
    }
  }
}

void softmax_backward_dot(std::span<const float> p, std::span<const float> dp, std::size_t rows,
                          std::span<float> dot) {
  const std::size_t cols = cols_of(p.size(), rows, "softmax_backward_dot");
  require_size(dp.size(), p.size(), "softmax_backward_dot dp");
  require_size(dot.size(), cols, "softmax_backward_dot dot");
  std::fill(dot.begin(), dot.end(), 0.0f);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) dot[j] += p[i * cols + j] * dp[i * cols + j];
  }
}

void softmax_backward(std::span<const float> p, std::span<float> dp, std::span<const float> dot, std::size_t rows,
                      float scale) {
  const std::size_t cols = cols_of(p.size(), rows, "softmax_backward");
  require_size(dp.size(), p.size(), "softmax_backward dp");
  require_size(dot.size(), cols, "softmax_backward dot");
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t at = i * cols + j;
      dp[at] = scale * p[at] * (dp[at] - dot[j]);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

// Slice b of an (r, c, tb) row-major tile as an r x c matrix.
ConstMatView slice(std::span<const float> x, std::size_t r, std::size_t c, std::size_t tb, std::size_t b) {
  return {x.data() + b, r, c, static_cast<std::ptrdiff_t>(c * tb), static_cast<std::ptrdiff_t>(tb)};
}

MatView slice(std::span<float> x, std::size_t r, std::size_t c, std::size_t tb, std::size_t b) {
  return {x.data() + b, r, c, static_cast<std::ptrdiff_t>(c * tb), static_cast<std::ptrdiff_t>(tb)};
}

void check_attn(const AttnDims& d, std::size_t qk_h_sk, std::size_t h_sq, std::size_t scores, const char* what) {
  require(d.h > 0 && d.sk > 0 && d.sq > 0 && d.tb > 0, what);
  require_size(qk_h_sk, d.h * d.sk * d.tb, what);
  require_size(h_sq, d.h * d.sq * d.tb, what);
  require_size(scores, d.sk * d.sq * d.tb, what);
}

}  // namespace

void attn_scores(std::span<const float> k, std::span<const float> q, std::span<float> a, const AttnDims& d,
                 float scale) {
  check_attn(d, k.size(), q.size(), a.size(), "attn_scores: tile sizes do not match dims");
  for (std::size_t b = 0; b < d.tb; ++b) {
    gemm(scale, slice(k, d.h, d.sk, d.tb, b).t(), slice(q, d.h, d.sq, d.tb, b), 0.0f,
         slice(a, d.sk, d.sq, d.tb, b));
  }
}

void attn_pv(std::span<const float> v, std::span<const float> p, std::span<float> out, const AttnDims& d,
             bool accumulate) {
  check_attn(d, v.size(), out.size(), p.size(), "attn_pv: tile sizes do not match dims");
  for (std::size_t b = 0; b < d.tb; ++b) {
    gemm(1.0f, slice(v, d.h, d.sk, d.tb, b), slice(p, d.sk, d.sq, d.tb, b), accumulate ? 1.0f : 0.0f,
         slice(out, d.h, d.sq, d.tb, b));
  }
}

void attn_grad_p(std::span<const float> v, std::span<const float> db, std::span<float> dp, const AttnDims& d) {
  check_attn(d, v.size(), db.size(), dp.size(), "attn_grad_p: tile sizes do not match dims");
  for (std::size_t b = 0; b < d.tb; ++b) {
    gemm(1.0f, slice(v, d.h, d.sk, d.tb, b).t(), slice(db, d.h, d.sq, d.tb, b), 0.0f,
         slice(dp, d.sk, d.sq, d.tb, b));
  }
}

void attn_grad_v(std::span<const float> db, std::span<const float> p, std::span<float> dv, const AttnDims& d,
                 bool accumulate) {
  check_attn(d, dv.size(), db.size(), p.size(), "attn_grad_v: tile sizes do not match dims");
  for (std::size_t b = 0; b < d.tb; ++b) {
    gemm(1.0f, slice(db, d.h, d.sq, d.tb, b), slice(p, d.sk, d.sq, d.tb, b).t(), accumulate ? 1.0f : 0.0f,
         slice(dv, d.h, d.sk, d.tb, b));
  }
}

void attn_grad_q(std::span<const float> k, std::span<const float> da, std::span<float> dq, const AttnDims& d,
                 float scale, bool accumulate) {
  check_attn(d, k.size(), dq.size(), da.size(), "attn_grad_q: tile sizes do not match dims");
  for (std::size_t b = 0; b < d.tb; ++b) {
    gemm(scale, slice(k, d.h, d.sk, d.tb, b), slice(da, d.sk, d.sq, d.tb, b), accumulate ? 1.0f : 0.0f,
         slice(dq, d.h, d.sq, d.tb, b));
  }
}

void attn_grad_k(std::span<const float> q, std::span<const float> da, std::span<float> dk, const AttnDims& d,
                 float scale, bool accumulate) {
  check_attn(d, dk.size(), q.size(), da.size(), "attn_grad_k: tile sizes do not match dims");
  for (std::size_t b = 0; b < d.tb; ++b) {
    gemm(scale, slice(q, d.h, d.sq, d.tb, b), slice(da, d.sk, d.sq, d.tb, b).t(), accumulate ? 1.0f : 0.0f,
         slice(dk, d.h, d.sk, d.tb, b));
  }
}

// ---------------------------------------------------------------------------

void check_ids(std::span<const std::int32_t> ids, std::size_t vocab) {
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw KernelError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
}

void embedding_gather(std::span<const std::int32_t> ids, std::span<const float> table, std::size_t vrows,
                      std::size_t v_offset, std::span<float> out) {
  const std::size_t cols = ids.size();
  const std::size_t te = cols_of(table.size(), vrows, "embedding_gather table");
  require_size(out.size(), te * cols, "embedding_gather output");
  for (std::size_t c = 0; c < cols; ++c) {
    require(ids[c] >= 0, "embedding_gather: negative token id");
    const auto id = static_cast<std::size_t>(ids[c]);
    if (id < v_offset || id >= v_offset + vrows) continue;
    const float* row = table.data() + (id - v_offset) * te;
    for (std::size_t e = 0; e < te; ++e) out[e * cols + c] = row[e];
  }
}

void embedding_scatter(std::span<const std::int32_t> ids, std::span<const float> dy, std::size_t vrows,
                       std::size_t v_offset, std::span<float> grad) {
  const std::size_t cols = ids.size();
  const std::size_t te = cols_of(grad.size(), vrows, "embedding_scatter grad");
  require_size(dy.size(), te * cols, "embedding_scatter dy");
  std::fill(grad.begin(), grad.end(), 0.0f);
  for (std::size_t c = 0; c < cols; ++c) {
    require(ids[c] >= 0, "embedding_scatter: negative token id");
    const auto id = static_cast<std::size_t>(ids[c]);
    if (id < v_offset || id >= v_offset + vrows) continue;
    float* row = grad.data() + (id - v_offset) * te;
    for (std::size_t e = 0; e < te; ++e) row[e] += dy[e * cols + c];
  }
}

void pos_add(std::span<float> x, std::span<const float> pos, std::size_t te, std::size_t ts) {
  require_size(pos.size(), te * ts, "pos_add position tile");
  const std::size_t tb = cols_of(x.size(), te * ts, "pos_add");
  for (std::size_t e = 0; e < te; ++e) {
    for (std::size_t s = 0; s < ts; ++s) {
      const float p = pos[e * ts + s];
      float* run = x.data() + (e * ts + s) * tb;
      for (std::size_t b = 0; b < tb; ++b) run[b] += p;
    }
  }
}

void pos_grad(std::span<const float> dx, std::span<float> dpos, std::size_t te, std::size_t ts) {
  require_size(dpos.size(), te * ts, "pos_grad position tile");
  const std::size_t tb = cols_of(dx.size(), te * ts, "pos_grad");
  for (std::size_t e = 0; e < te; ++e) {
    for (std::size_t s = 0; s < ts; ++s) {
      float acc = 0.0f;
      const float* run = dx.data() + (e * ts + s) * tb;
      for (std::size_t b = 0; b < tb; ++b) acc += run[b];
      dpos[e * ts + s] = acc;
    }
  }
}

// ---------------------------------------------------------------------------

float crossentropy(std::span<const float> logits, std::span<const std::int32_t> labels,
                   std::span<const float> stats, std::size_t v_offset, std::size_t n_classes, float inv_count,
                   std::span<float> dlogits) {
  const std::size_t cols = labels.size();
  const std::size_t rows = cols_of(logits.size(), cols, "crossentropy");
  require_size(stats.size(), 2 * cols, "crossentropy stats");
  require_size(dlogits.size(), logits.size(), "crossentropy dlogits");
  check_ids(labels, n_classes);
  float loss = 0.0f;
  for (std::size_t j = 0; j < cols; ++j) {
    const float m = stats[j];
    const float inv = 1.0f / stats[cols + j];
    const auto label = static_cast<std::size_t>(labels[j]);
    for (std::size_t i = 0; i < rows; ++i) {
      const float p = std::exp(logits[i * cols + j] - m) * inv;
      dlogits[i * cols + j] = (v_offset + i == label ? p - 1.0f : p) * inv_count;
    }
    if (label >= v_offset && label < v_offset + rows) {
      loss += (m + std::log(stats[cols + j]) - logits[(label - v_offset) * cols + j]) * inv_count;
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------

void sgd_momentum(std::span<float> w, std::span<const float> g, std::span<float> m, float lr, float mu) {
  require_size(g.size(), w.size(), "sgd_momentum grad");
  require_size(m.size(), w.size(), "sgd_momentum momentum");
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = mu * m[i] + g[i];
    w[i] -= lr * m[i];
  }
}

void adam(std::span<float> w, std::span<const float> g, std::span<float> m, std::span<float> v, const AdamParams& p,
          std::int64_t t) {
  require_size(g.size(), w.size(), "adam grad");
  require_size(m.size(), w.size(), "adam first moment");
  require_size(v.size(), w.size(), "adam second moment");
  require(t >= 1, "adam: step counter must start at 1");
  const double c1 = 1.0 - std::pow(static_cast<double>(p.beta1), static_cast<double>(t));
  const double c2 = 1.0 - std::pow(static_cast<double>(p.beta2), static_cast<double>(t));
  const float inv_c1 = static_cast<float>(1.0 / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float decay = 1.0f - p.lr * p.weight_decay;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (p.weight_decay > 0.0f) w[i] *= decay;
    m[i] = p.beta1 * m[i] + (1.0f - p.beta1) * g[i];
    v[i] = p.beta2 * v[i] + (1.0f - p.beta2) * g[i] * g[i];
    const float mhat = m[i] * inv_c1;
    const float vhat = v[i] * inv_c2;
    w[i] -= p.lr * mhat / (std::sqrt(vhat) + p.eps);
  }
}

}  // namespace tiletrain::kernels
