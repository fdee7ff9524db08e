// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oracle {

namespace {

void expect(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void expect_size(const Vec& v, std::size_t n, const char* what) {
  expect(v.size() == n, std::string(what) + ": expected " + std::to_string(n) + " elements, got " +
                            std::to_string(v.size()));
}

void add_into(Vec& acc, const Vec& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

Vec plus(const Vec& a, const Vec& b) {
  Vec out = a;
  add_into(out, b);
  return out;
}

}  // namespace

Vec widen(std::span<const float> v) { return Vec(v.begin(), v.end()); }

std::vector<float> narrow(const Vec& v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

// ---- layers ---------------------------------------------------------------

Vec linear(const Vec& w, const Vec* b, const Vec& x, std::size_t out, std::size_t in, std::size_t T) {
  expect_size(w, out * in, "linear weight");
  expect_size(x, in * T, "linear input");
  if (b) expect_size(*b, out, "linear bias");
  Vec y(out * T, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t t = 0; t < T; ++t) {
      double s = b ? (*b)[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * x[i * T + t];
      y[o * T + t] = s;
    }
  }
  return y;
}

LinearGrads linear_backward(const Vec& w, const Vec& x, const Vec& dy, std::size_t out, std::size_t in,
                            std::size_t T) {
  expect_size(dy, out * T, "linear dy");
  LinearGrads g{Vec(in * T, 0.0), Vec(out * in, 0.0), Vec(out, 0.0)};
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t t = 0; t < T; ++t) {
      const double d = dy[o * T + t];
      g.db[o] += d;
      for (std::size_t i = 0; i < in; ++i) {
        g.dx[i * T + t] += w[o * in + i] * d;
        g.dw[o * in + i] += d * x[i * T + t];
      }
    }
  }
  return g;
}

LayerNormOut layernorm(const Vec& x, const Vec& gamma, const Vec& beta, std::size_t F, std::size_t T, double eps) {
  expect_size(x, F * T, "layernorm input");
  expect_size(gamma, F, "layernorm gamma");
  expect_size(beta, F, "layernorm beta");
  LayerNormOut o{Vec(F * T), Vec(F * T), Vec(T)};
  for (std::size_t t = 0; t < T; ++t) {
    double mean = 0.0;
    for (std::size_t f = 0; f < F; ++f) mean += x[f * T + t];
    mean /= static_cast<double>(F);
    double var = 0.0;
    for (std::size_t f = 0; f < F; ++f) var += (x[f * T + t] - mean) * (x[f * T + t] - mean);
    var /= static_cast<double>(F);
    const double rstd = 1.0 / std::sqrt(var + eps);
    o.rstd[t] = rstd;
    for (std::size_t f = 0; f < F; ++f) {
      const double xh = (x[f * T + t] - mean) * rstd;
      o.xhat[f * T + t] = xh;
      o.y[f * T + t] = gamma[f] * xh + beta[f];
    }
  }
  return o;
}

LayerNormGrads layernorm_backward(const LayerNormOut& fwd, const Vec& gamma, const Vec& dy, std::size_t F,
                                  std::size_t T) {
  expect_size(dy, F * T, "layernorm dy");
  LayerNormGrads g{Vec(F * T), Vec(F, 0.0), Vec(F, 0.0)};
  for (std::size_t t = 0; t < T; ++t) {
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
      const double d = dy[f * T + t];
      g.dgamma[f] += d * fwd.xhat[f * T + t];
      g.dbeta[f] += d;
      const double dxh = d * gamma[f];
      sum_dxh += dxh;
      sum_dxh_xh += dxh * fwd.xhat[f * T + t];
    }
    const double n = static_cast<double>(F);
    for (std::size_t f = 0; f < F; ++f) {
      const double dxh = dy[f * T + t] * gamma[f];
      g.dx[f * T + t] = fwd.rstd[t] * (dxh - sum_dxh / n - fwd.xhat[f * T + t] * sum_dxh_xh / n);
    }
  }
  return g;
}

double gelu(double x) {
  const double c = std::sqrt(2.0 / M_PI);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  const double c = std::sqrt(2.0 / M_PI);
  const double u = c * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

Vec gelu(const Vec& x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

Vec gelu_backward(const Vec& x, const Vec& dy) {
  expect_size(dy, x.size(), "gelu dy");
  Vec dx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_grad(x[i]);
  return dx;
}

Vec softmax(const Vec& v) {
  expect(!v.empty(), "softmax of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  Vec out(v.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) denom += (out[i] = std::exp(v[i] - mx));
  for (double& o : out) o /= denom;
  return out;
}

// ---- attention ------------------------------------------------------------

namespace {

struct AttnCache {
  // Indexed [n][b][d][s] for q/k/v/bcat and [n][b][i][j] for p.
  std::vector<Vec> q, k, v, p, bcat;
};

std::size_t hb(const AttnDims& d, std::size_t n, std::size_t b) { return n * d.n_b + b; }

void check_attn(const AttnParams& p, const Vec& x, const AttnDims& d) {
  expect(d.heads > 0 && d.n_e % d.heads == 0, "attention: heads must divide n_e");
  const std::size_t h = d.h();
  expect_size(x, d.n_e * d.T(), "attention input");
  for (const Vec* w : {&p.wq, &p.wk, &p.wv}) expect_size(*w, h * d.heads * d.n_e, "attention qkv weight");
  for (const Vec* b : {&p.bq, &p.bk, &p.bv}) expect_size(*b, h * d.heads, "attention qkv bias");
  expect_size(p.wo, d.n_e * d.heads * h, "attention output weight");
  expect_size(p.bo, d.n_e, "attention output bias");
}

// out[d][s] = sum_e w[d, n, e] x[e, (s, b)] + bias[d, n]
Vec head_proj(const Vec& w, const Vec& bias, const Vec& x, const AttnDims& d, std::size_t n, std::size_t b) {
  const std::size_t h = d.h(), T = d.T();
  Vec out(h * d.n_s);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t s = 0; s < d.n_s; ++s) {
      double acc = bias[r * d.heads + n];
      for (std::size_t e = 0; e < d.n_e; ++e) acc += w[(r * d.heads + n) * d.n_e + e] * x[e * T + s * d.n_b + b];
      out[r * d.n_s + s] = acc;
    }
  }
  return out;
}

AttnCache attn_forward(const AttnParams& p, const Vec& x, const AttnDims& d) {
  check_attn(p, x, d);
  const std::size_t h = d.h(), S = d.n_s;
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));
  AttnCache c;
  const std::size_t groups = d.heads * d.n_b;
  c.q.resize(groups), c.k.resize(groups), c.v.resize(groups), c.p.resize(groups), c.bcat.resize(groups);
  for (std::size_t n = 0; n < d.heads; ++n) {
    for (std::size_t b = 0; b < d.n_b; ++b) {
      const std::size_t g = hb(d, n, b);
      c.q[g] = head_proj(p.wq, p.bq, x, d, n, b);
      c.k[g] = head_proj(p.wk, p.bk, x, d, n, b);
      c.v[g] = head_proj(p.wv, p.bv, x, d, n, b);
      Vec& P = c.p[g];
      P.assign(S * S, 0.0);
      for (std::size_t j = 0; j < S; ++j) {
        const std::size_t keys = d.causal ? j + 1 : S;
        Vec scores(keys);
        for (std::size_t i = 0; i < keys; ++i) {
          double acc = 0.0;
          for (std::size_t r = 0; r < h; ++r) acc += c.k[g][r * S + i] * c.q[g][r * S + j];
          scores[i] = scale * acc;
        }
        const Vec pr = softmax(scores);
        for (std::size_t i = 0; i < keys; ++i) P[i * S + j] = pr[i];
      }
      Vec& B = c.bcat[g];
      B.assign(h * S, 0.0);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t j = 0; j < S; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < S; ++i) acc += c.v[g][r * S + i] * P[i * S + j];
          B[r * S + j] = acc;
        }
      }
    }
  }
  return c;
}

}  // namespace

Vec attention(const AttnParams& p, const Vec& x, const AttnDims& d, Vec* probs) {
  const AttnCache c = attn_forward(p, x, d);
  const std::size_t h = d.h(), S = d.n_s, T = d.T();
  Vec y(d.n_e * T);
  for (std::size_t e = 0; e < d.n_e; ++e) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t b = 0; b < d.n_b; ++b) {
        double acc = p.bo[e];
        for (std::size_t n = 0; n < d.heads; ++n) {
          for (std::size_t r = 0; r < h; ++r) acc += p.wo[(e * d.heads + n) * h + r] * c.bcat[hb(d, n, b)][r * S + s];
        }
        y[e * T + s * d.n_b + b] = acc;
      }
    }
  }
  if (probs) {
    probs->assign(S * S * d.n_b * d.heads, 0.0);
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) {
        for (std::size_t b = 0; b < d.n_b; ++b) {
          for (std::size_t n = 0; n < d.heads; ++n) {
            (*probs)[((i * S + j) * d.n_b + b) * d.heads + n] = c.p[hb(d, n, b)][i * S + j];
          }
        }
      }
    }
  }
  return y;
}

AttnGrads attention_backward(const AttnParams& p, const Vec& x, const Vec& dy, const AttnDims& d) {
  const AttnCache c = attn_forward(p, x, d);
  expect_size(dy, d.n_e * d.T(), "attention dy");
  const std::size_t h = d.h(), S = d.n_s, T = d.T(), H = d.heads, E = d.n_e;
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));
  AttnGrads g;
  g.dx.assign(E * T, 0.0);
  g.dp = AttnParams{Vec(p.wq.size(), 0.0), Vec(p.wk.size(), 0.0), Vec(p.wv.size(), 0.0), Vec(p.wo.size(), 0.0),
                    Vec(p.bq.size(), 0.0), Vec(p.bk.size(), 0.0), Vec(p.bv.size(), 0.0), Vec(p.bo.size(), 0.0)};

  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t t = 0; t < T; ++t) g.dp.bo[e] += dy[e * T + t];
  }
  for (std::size_t n = 0; n < H; ++n) {
    for (std::size_t b = 0; b < d.n_b; ++b) {
      const std::size_t gi = hb(d, n, b);
      const Vec& Q = c.q[gi];
      const Vec& K = c.k[gi];
      const Vec& V = c.v[gi];
      const Vec& P = c.p[gi];
      const Vec& B = c.bcat[gi];
      // dWo and dB.
      Vec dB(h * S, 0.0);
      for (std::size_t e = 0; e < E; ++e) {
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t s = 0; s < S; ++s) {
            const double dys = dy[e * T + s * d.n_b + b];
            g.dp.wo[(e * H + n) * h + r] += dys * B[r * S + s];
            dB[r * S + s] += p.wo[(e * H + n) * h + r] * dys;
          }
        }
      }
      Vec dV(h * S, 0.0), dP(S * S, 0.0), dS(S * S, 0.0), dQ(h * S, 0.0), dK(h * S, 0.0);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t i = 0; i < S; ++i) {
          for (std::size_t j = 0; j < S; ++j) {
            dV[r * S + i] += dB[r * S + j] * P[i * S + j];
            dP[i * S + j] += V[r * S + i] * dB[r * S + j];
          }
        }
      }
      for (std::size_t j = 0; j < S; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < S; ++i) dot += P[i * S + j] * dP[i * S + j];
        for (std::size_t i = 0; i < S; ++i) dS[i * S + j] = P[i * S + j] * (dP[i * S + j] - dot);
      }
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t i = 0; i < S; ++i) {
          for (std::size_t j = 0; j < S; ++j) {
            dQ[r * S + j] += scale * K[r * S + i] * dS[i * S + j];
            dK[r * S + i] += scale * Q[r * S + j] * dS[i * S + j];
          }
        }
      }
      // Projections back to x.
      const std::pair<const Vec*, std::pair<Vec*, Vec*>> proj[] = {
          {&dQ, {&g.dp.wq, &g.dp.bq}}, {&dK, {&g.dp.wk, &g.dp.bk}}, {&dV, {&g.dp.wv, &g.dp.bv}}};
      const Vec* weights[] = {&p.wq, &p.wk, &p.wv};
      for (int which = 0; which < 3; ++which) {
        const Vec& D = *proj[which].first;
        Vec& dw = *proj[which].second.first;
        Vec& db = *proj[which].second.second;
        const Vec& w = *weights[which];
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t s = 0; s < S; ++s) {
            const double dv = D[r * S + s];
            db[r * H + n] += dv;
            for (std::size_t e = 0; e < E; ++e) {
              dw[(r * H + n) * E + e] += dv * x[e * T + s * d.n_b + b];
              g.dx[e * T + s * d.n_b + b] += w[(r * H + n) * E + e] * dv;
            }
          }
        }
      }
    }
  }
  return g;
}

// ---- embedding and loss ---------------------------------------------------

Vec embedding(const Vec& table, std::span<const std::int32_t> ids, std::size_t n_v, std::size_t n_e) {
  expect_size(table, n_v * n_e, "embedding table");
  const std::size_t T = ids.size();
  Vec y(n_e * T);
  for (std::size_t t = 0; t < T; ++t) {
    expect(ids[t] >= 0 && static_cast<std::size_t>(ids[t]) < n_v, "embedding: token id out of range");
    for (std::size_t e = 0; e < n_e; ++e) y[e * T + t] = table[static_cast<std::size_t>(ids[t]) * n_e + e];
  }
  return y;
}

Vec embedding_backward(std::span<const std::int32_t> ids, const Vec& dy, std::size_t n_v, std::size_t n_e) {
  const std::size_t T = ids.size();
  expect_size(dy, n_e * T, "embedding dy");
  Vec g(n_v * n_e, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t e = 0; e < n_e; ++e) g[static_cast<std::size_t>(ids[t]) * n_e + e] += dy[e * T + t];
  }
  return g;
}

CrossEntropyOut cross_entropy(const Vec& logits, std::span<const std::int32_t> labels, std::size_t C, std::size_t T) {
  expect_size(logits, C * T, "cross-entropy logits");
  expect(labels.size() == T, "cross-entropy: one label per column");
  CrossEntropyOut o{0.0, Vec(C * T)};
  for (std::size_t t = 0; t < T; ++t) {
    expect(labels[t] >= 0 && static_cast<std::size_t>(labels[t]) < C, "cross-entropy: label out of range");
    Vec col(C);
    for (std::size_t c = 0; c < C; ++c) col[c] = logits[c * T + t];
    const double mx = *std::max_element(col.begin(), col.end());
    double z = 0.0;
    for (double v : col) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    const auto y = static_cast<std::size_t>(labels[t]);
    o.loss += lse - col[y];
    for (std::size_t c = 0; c < C; ++c) {
      o.dlogits[c * T + t] = (std::exp(col[c] - lse) - (c == y ? 1.0 : 0.0)) / static_cast<double>(T);
    }
  }
  o.loss /= static_cast<double>(T);
  return o;
}

// ---- model ----------------------------------------------------------------

std::map<std::string, std::vector<std::size_t>> model_shapes(const ModelDims& d) {
  expect(d.heads > 0 && d.n_e % d.heads == 0, "model: heads must divide n_e");
  const std::size_t h = d.n_e / d.heads, E = d.n_e, F = 4 * d.n_e;
  std::map<std::string, std::vector<std::size_t>> s;
  s["wte"] = {d.n_v, E};
  s["wpe"] = {E, d.n_s};
  for (std::size_t l = 0; l < d.n_layers; ++l) {
    const std::string b = "h" + std::to_string(l) + ".";
    s[b + "ln1.gamma"] = s[b + "ln1.beta"] = s[b + "ln2.gamma"] = s[b + "ln2.beta"] = {E};
    s[b + "attn.wq"] = s[b + "attn.wk"] = s[b + "attn.wv"] = {h, d.heads, E};
    s[b + "attn.bq"] = s[b + "attn.bk"] = s[b + "attn.bv"] = {h, d.heads};
    s[b + "attn.wo"] = {E, d.heads, h};
    s[b + "attn.bo"] = {E};
    s[b + "fc1.weight"] = {F, E};
    s[b + "fc1.bias"] = {F};
    s[b + "fc2.weight"] = {E, F};
    s[b + "fc2.bias"] = {E};
  }
  s["ln_f.gamma"] = s["ln_f.beta"] = {E};
  if (!d.tie) s["head.weight"] = {d.n_v, E};
  return s;
}

namespace {

struct BlockCache {
  Vec x;
  LayerNormOut ln1;
  Vec h;
  LayerNormOut ln2;
  Vec f1, g;
};

AttnParams attn_params(const Params& p, const std::string& b) {
  auto at = [&](const char* k) { return p.at(b + "attn." + k); };
  return {at("wq"), at("wk"), at("wv"), at("wo"), at("bq"), at("bk"), at("bv"), at("bo")};
}

struct Forward {
  Vec x0;
  std::vector<BlockCache> blocks;
  Vec xl;
  LayerNormOut lnf;
  Vec logits;
  CrossEntropyOut ce;
};

Forward model_forward(const Params& p, const ModelDims& d, std::span<const std::int32_t> ids,
                      std::span<const std::int32_t> labels) {
  const std::size_t E = d.n_e, T = d.n_s * d.n_b, F = 4 * E;
  expect(ids.size() == T && labels.size() == T, "model: ids and labels need N_s * N_b entries");
  const AttnDims ad{E, d.heads, d.n_s, d.n_b, d.causal};
  Forward f;
  f.x0 = embedding(p.at("wte"), ids, d.n_v, E);
  const Vec& wpe = p.at("wpe");
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t t = 0; t < T; ++t) f.x0[e * T + t] += wpe[e * d.n_s + t / d.n_b];
  }
  Vec x = f.x0;
  for (std::size_t l = 0; l < d.n_layers; ++l) {
    const std::string b = "h" + std::to_string(l) + ".";
    BlockCache c;
    c.x = x;
    c.ln1 = layernorm(x, p.at(b + "ln1.gamma"), p.at(b + "ln1.beta"), E, T);
    c.h = plus(x, attention(attn_params(p, b), c.ln1.y, ad));
    c.ln2 = layernorm(c.h, p.at(b + "ln2.gamma"), p.at(b + "ln2.beta"), E, T);
    const Vec& b1 = p.at(b + "fc1.bias");
    const Vec& b2 = p.at(b + "fc2.bias");
    c.f1 = linear(p.at(b + "fc1.weight"), &b1, c.ln2.y, F, E, T);
    c.g = gelu(c.f1);
    x = plus(c.h, linear(p.at(b + "fc2.weight"), &b2, c.g, E, F, T));
    f.blocks.push_back(std::move(c));
  }
  f.xl = x;
  f.lnf = layernorm(x, p.at("ln_f.gamma"), p.at("ln_f.beta"), E, T);
  const Vec& head = d.tie ? p.at("wte") : p.at("head.weight");
  f.logits = linear(head, nullptr, f.lnf.y, d.n_v, E, T);
  f.ce = cross_entropy(f.logits, labels, d.n_v, T);
  return f;
}

}  // namespace

double model_loss(const Params& p, const ModelDims& d, std::span<const std::int32_t> ids,
                  std::span<const std::int32_t> labels) {
  return model_forward(p, d, ids, labels).ce.loss;
}

ModelGrads model_backward(const Params& p, const ModelDims& d, std::span<const std::int32_t> ids,
                          std::span<const std::int32_t> labels) {
  const Forward f = model_forward(p, d, ids, labels);
  const std::size_t E = d.n_e, T = d.n_s * d.n_b, F = 4 * E;
  const AttnDims ad{E, d.heads, d.n_s, d.n_b, d.causal};
  ModelGrads out;
  out.loss = f.ce.loss;
  Params& g = out.grads;
  for (const auto& [name, v] : p) g[name] = Vec(v.size(), 0.0);

  const Vec& head = d.tie ? p.at("wte") : p.at("head.weight");
  const LinearGrads hg = linear_backward(head, f.lnf.y, f.ce.dlogits, d.n_v, E, T);
  add_into(d.tie ? g["wte"] : g["head.weight"], hg.dw);
  const LayerNormGrads lg = layernorm_backward(f.lnf, p.at("ln_f.gamma"), hg.dx, E, T);
  add_into(g["ln_f.gamma"], lg.dgamma);
  add_into(g["ln_f.beta"], lg.dbeta);
  Vec dx = lg.dx;

  for (std::size_t l = d.n_layers; l-- > 0;) {
    const std::string b = "h" + std::to_string(l) + ".";
    const BlockCache& c = f.blocks[l];
    const LinearGrads g2 = linear_backward(p.at(b + "fc2.weight"), c.g, dx, E, F, T);
    add_into(g[b + "fc2.weight"], g2.dw);
    add_into(g[b + "fc2.bias"], g2.db);
    const Vec df1 = gelu_backward(c.f1, g2.dx);
    const LinearGrads g1 = linear_backward(p.at(b + "fc1.weight"), c.ln2.y, df1, F, E, T);
    add_into(g[b + "fc1.weight"], g1.dw);
    add_into(g[b + "fc1.bias"], g1.db);
    const LayerNormGrads l2 = layernorm_backward(c.ln2, p.at(b + "ln2.gamma"), g1.dx, E, T);
    add_into(g[b + "ln2.gamma"], l2.dgamma);
    add_into(g[b + "ln2.beta"], l2.dbeta);
    const Vec dh = plus(dx, l2.dx);

    const AttnGrads ag = attention_backward(attn_params(p, b), c.ln1.y, dh, ad);
    add_into(g[b + "attn.wq"], ag.dp.wq);
    add_into(g[b + "attn.wk"], ag.dp.wk);
    add_into(g[b + "attn.wv"], ag.dp.wv);
    add_into(g[b + "attn.wo"], ag.dp.wo);
    add_into(g[b + "attn.bq"], ag.dp.bq);
    add_into(g[b + "attn.bk"], ag.dp.bk);
    add_into(g[b + "attn.bv"], ag.dp.bv);
    add_into(g[b + "attn.bo"], ag.dp.bo);
    const LayerNormGrads l1 = layernorm_backward(c.ln1, p.at(b + "ln1.gamma"), ag.dx, E, T);
    add_into(g[b + "ln1.gamma"], l1.dgamma);
    add_into(g[b + "ln1.beta"], l1.dbeta);
    dx = plus(dh, l1.dx);
  }

  Vec& dwpe = g["wpe"];
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t t = 0; t < T; ++t) dwpe[e * d.n_s + t / d.n_b] += dx[e * T + t];
  }
  add_into(g["wte"], embedding_backward(ids, dx, d.n_v, E));
  return out;
}

// ---- optimizers -----------------------------------------------------------

void sgd_momentum(Vec& w, const Vec& g, Vec& m, double lr, double mu) {
  expect(g.size() == w.size() && m.size() == w.size(), "sgd: size mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = mu * m[i] + g[i];
    w[i] -= lr * m[i];
  }
}

void adam(Vec& w, const Vec& g, Vec& m, Vec& v, long t, double lr, double b1, double b2, double eps, double wd) {
  expect(g.size() == w.size() && m.size() == w.size() && v.size() == w.size(), "adam: size mismatch");
  expect(t >= 1, "adam: step counter starts at 1");
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] -= lr * wd * w[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

}  // namespace oracle
