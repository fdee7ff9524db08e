// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <utility>

#include "test_support.hpp"
#include "tiletrain/error.hpp"
#include "tiletrain/nn.hpp"

namespace {

using namespace tiletrain;
using oracle::Vec;
using tt_test::options;
using tt_test::random_floats;
using tt_test::rel_error;

TiledTensor activation(Runtime& rt, std::size_t features, std::size_t tile, const nn::SeqTiling& seq,
                       const std::vector<float>& values) {
  TiledTensor t = nn::make_activation(rt, features, tile, seq);
  assign_dense(rt, t, values);
  return t;
}

TiledTensor ids_tensor(Runtime& rt, const nn::SeqTiling& seq, const std::vector<std::int32_t>& ids) {
  TiledTensor t(rt, {seq.n_s, seq.n_b}, {seq.ts, seq.tb}, DType::I32);
  assign_dense_i32(rt, t, ids);
  return t;
}

// ---- linear ---------------------------------------------------------------

TEST(LinearTest, IdentityWeightCopiesInput) {
  Runtime rt(options(2, 1));
  const nn::SeqTiling seq{3, 2, 2, 1};
  nn::Linear lin(rt, "lin", 4, 4, 2, 2, seq, true, Fill::zeros());
  std::vector<float> eye(16, 0.0f);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0f;
  assign_dense(rt, lin.weight().value, eye);
  const auto x = random_floats(4 * 6, 1);
  EXPECT_EQ(to_dense(rt, lin.forward(activation(rt, 4, 2, seq, x))), x);
}

TEST(LinearTest, TilingDoesNotChangeTheResult) {
  const std::size_t in = 12, out = 8;
  const nn::SeqTiling seq{4, 2, 4, 2};
  const auto w = random_floats(in * out, 2), b = random_floats(out, 3), x = random_floats(in * 8, 4);
  std::vector<std::vector<float>> ys;
  for (std::size_t t : {12u, 3u}) {
    Runtime rt(options(4, 4));
    const nn::SeqTiling s = t == 12 ? seq : nn::SeqTiling{4, 2, 1, 1};
    nn::Linear lin(rt, "lin", in, out, t, t == 12 ? 8 : 2, s, true, Fill::zeros());
    assign_dense(rt, lin.weight().value, w);
    assign_dense(rt, lin.bias()->value, b);
    ys.push_back(to_dense(rt, lin.forward(activation(rt, in, t, s, x))));
  }
  EXPECT_LE(rel_error(ys[1], ys[0]), 1e-6);
}

TEST(LinearTest, BackwardMatchesReference) {
  const std::size_t in = 6, out = 5;
  const nn::SeqTiling seq{3, 2, 2, 1};
  Runtime rt(options(2, 2));
  nn::Linear lin(rt, "lin", in, out, 4, 2, seq, true, Fill::zeros());
  const auto w = random_floats(in * out, 5), x = random_floats(in * 6, 6), dy = random_floats(out * 6, 7);
  assign_dense(rt, lin.weight().value, w);
  const TiledTensor xt = activation(rt, in, 4, seq, x);
  const TiledTensor dyt = activation(rt, out, 2, seq, dy);
  const TiledTensor dx = nn::make_activation(rt, in, 4, seq);
  lin.forward(xt);
  nn::zero_grad(rt, lin.params());
  lin.backward(xt, dyt, dx, false);

  const auto want = oracle::linear_backward(oracle::widen(w), oracle::widen(x), oracle::widen(dy), out, in, 6);
  EXPECT_LE(rel_error(to_dense(rt, dx), want.dx), 1e-6);
  EXPECT_LE(rel_error(to_dense(rt, lin.weight().grad), want.dw), 1e-6);
  EXPECT_LE(rel_error(to_dense(rt, lin.bias()->grad), want.db), 1e-6);

  // A second backward pass accumulates parameter gradients.
  lin.backward(xt, dyt, dx, true);
  const auto dw = to_dense(rt, lin.weight().grad);
  for (std::size_t i = 0; i < dw.size(); ++i) EXPECT_NEAR(dw[i], 2.0 * want.dw[i], 1e-5);
  const auto dx2 = to_dense(rt, dx);
  for (std::size_t i = 0; i < dx2.size(); ++i) EXPECT_NEAR(dx2[i], 2.0 * want.dx[i], 1e-5);
}

// ---- layer norm -----------------------------------------------------------

TEST(LayerNormLayerTest, ConstantInputGivesZeroWithDefaultAffine) {
  Runtime rt(options(1, 1));
  const nn::SeqTiling seq{2, 2, 1, 2};
  nn::LayerNorm ln(rt, "ln", 6, 4, seq);
  const auto y = to_dense(rt, ln.forward(activation(rt, 6, 4, seq, std::vector<float>(24, 3.0f))));
  for (float v : y) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNormLayerTest, ForwardAndBackwardMatchReference) {
  const std::size_t F = 10, T = 6;
  const nn::SeqTiling seq{3, 2, 2, 1};
  Runtime rt(options(2, 2));
  nn::LayerNorm ln(rt, "ln", F, 3, seq);
  const auto g = random_floats(F, 8, 0.5f, 1.5f), b = random_floats(F, 9);
  auto x = random_floats(F * T, 10, -2.0f, 2.0f);
  const auto dy = random_floats(F * T, 11);
  assign_dense(rt, ln.gamma().value, g);
  assign_dense(rt, ln.beta().value, b);
  const TiledTensor xt = activation(rt, F, 3, seq, x);
  const auto y = to_dense(rt, ln.forward(xt));
  nn::zero_grad(rt, ln.params());
  const TiledTensor dx = nn::make_activation(rt, F, 3, seq);
  ln.backward(activation(rt, F, 3, seq, dy), dx, false);

  const auto fwd = oracle::layernorm(oracle::widen(x), oracle::widen(g), oracle::widen(b), F, T);
  EXPECT_LE(rel_error(y, fwd.y), 1e-6);
  const auto want = oracle::layernorm_backward(fwd, oracle::widen(g), oracle::widen(dy), F, T);
  EXPECT_LE(rel_error(to_dense(rt, dx), want.dx), 1e-5);
  EXPECT_LE(rel_error(to_dense(rt, ln.gamma().grad), want.dgamma), 1e-6);
  EXPECT_LE(rel_error(to_dense(rt, ln.beta().grad), want.dbeta), 1e-6);
}

// ---- gelu -----------------------------------------------------------------

TEST(GeluLayerTest, BackwardMatchesReference) {
  const nn::SeqTiling seq{2, 3, 1, 2};
  Runtime rt(options(1, 1));
  nn::Gelu gelu(rt, 5, 2, seq);
  const auto x = random_floats(30, 12, -3.0f, 3.0f), dy = random_floats(30, 13);
  const TiledTensor xt = activation(rt, 5, 2, seq, x);
  gelu.forward(xt);
  const TiledTensor dx = nn::make_activation(rt, 5, 2, seq);
  gelu.backward(xt, activation(rt, 5, 2, seq, dy), dx, false);
  EXPECT_LE(rel_error(to_dense(rt, dx), oracle::gelu_backward(oracle::widen(x), oracle::widen(dy))), 1e-6);
}

// ---- attention ------------------------------------------------------------

struct AttnSetup {
  Runtime rt;
  nn::SeqTiling seq;
  nn::Attention attn;
  oracle::AttnParams p;

  AttnSetup(std::size_t n_e, std::size_t heads, std::size_t te, nn::SeqTiling s, bool causal, std::uint64_t seed)
      : rt(options(2, 2)), seq(s), attn(rt, "attn", n_e, heads, te, s, causal, seed) {
    const std::pair<TensorGradPair*, Vec*> params[] = {
        {&attn.wq(), &p.wq}, {&attn.wk(), &p.wk}, {&attn.wv(), &p.wv}, {&attn.wo(), &p.wo},
        {&attn.bq(), &p.bq}, {&attn.bk(), &p.bk}, {&attn.bv(), &p.bv}, {&attn.bo(), &p.bo}};
    for (const auto& [t, v] : params) {
      const auto vals = random_floats(t->value.numel(), seed++, -0.6f, 0.6f);
      assign_dense(rt, t->value, vals);
      *v = oracle::widen(vals);
    }
  }
};

TEST(AttentionLayerTest, SinglePositionAttendsToItself) {
  AttnSetup s(4, 2, 2, {1, 3, 1, 2}, true, 14);
  const auto x = random_floats(4 * 3, 15);
  const TiledTensor xt = activation(s.rt, 4, 2, s.seq, x);
  const auto y = to_dense(s.rt, s.attn.forward(xt));
  for (float p : to_dense(s.rt, s.attn.probabilities())) EXPECT_FLOAT_EQ(p, 1.0f);
  // With one position the output is Wo (Wv x + bv) + bo.
  const std::size_t h = 2, heads = 2, E = 4;
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> v(h * heads);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t hd = 0; hd < heads; ++hd) {
        double acc = s.p.bv[i * heads + hd];
        for (std::size_t e = 0; e < E; ++e) acc += s.p.wv[(i * heads + hd) * E + e] * x[e * 3 + b];
        v[i * heads + hd] = acc;
      }
    }
    for (std::size_t e = 0; e < E; ++e) {
      double acc = s.p.bo[e];
      for (std::size_t hd = 0; hd < heads; ++hd)
        for (std::size_t i = 0; i < h; ++i) acc += s.p.wo[(e * heads + hd) * h + i] * v[i * heads + hd];
      EXPECT_NEAR(y[e * 3 + b], acc, 1e-5);
    }
  }
}

TEST(AttentionLayerTest, CausalOutputIgnoresLaterPositions) {
  const std::size_t E = 6, S = 5, B = 2;
  AttnSetup s(E, 3, 3, {S, B, 2, 1}, true, 16);
  auto x = random_floats(E * S * B, 17);
  const auto y0 = to_dense(s.rt, s.attn.forward(activation(s.rt, E, 3, s.seq, x)));
  // Perturb the last position only.
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t b = 0; b < B; ++b) x[(e * S + S - 1) * B + b] += 5.0f;
  const auto y1 = to_dense(s.rt, s.attn.forward(activation(s.rt, E, 3, s.seq, x)));
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t t = 0; t < S - 1; ++t) {
      for (std::size_t b = 0; b < B; ++b) EXPECT_EQ(y1[(e * S + t) * B + b], y0[(e * S + t) * B + b]);
    }
  }
}

TEST(AttentionLayerTest, BackwardMatchesReference) {
  for (bool causal : {true, false}) {
    const std::size_t E = 8, heads = 2, S = 4, B = 2;
    AttnSetup s(E, heads, 4, {S, B, 2, 1}, causal, 18);
    const auto x = random_floats(E * S * B, 19), dy = random_floats(E * S * B, 20);
    const TiledTensor xt = activation(s.rt, E, 4, s.seq, x);
    s.attn.forward(xt);
    nn::zero_grad(s.rt, s.attn.params());
    const TiledTensor dx = nn::make_activation(s.rt, E, 4, s.seq);
    s.attn.backward(xt, activation(s.rt, E, 4, s.seq, dy), dx, false);

    const auto want = oracle::attention_backward(s.p, oracle::widen(x), oracle::widen(dy), {E, heads, S, B, causal});
    EXPECT_LE(rel_error(to_dense(s.rt, dx), want.dx), 1e-5) << "causal " << causal;
    const std::pair<TensorGradPair*, const Vec*> grads[] = {
        {&s.attn.wq(), &want.dp.wq}, {&s.attn.wk(), &want.dp.wk}, {&s.attn.wv(), &want.dp.wv},
        {&s.attn.wo(), &want.dp.wo}, {&s.attn.bq(), &want.dp.bq}, {&s.attn.bv(), &want.dp.bv},
        {&s.attn.bo(), &want.dp.bo}};
    for (const auto& [t, ref] : grads) EXPECT_LE(rel_error(to_dense(s.rt, t->grad), *ref), 1e-5) << t->name;
    // The key bias shifts every score of a query equally, so its gradient is
    // zero up to rounding.
    const auto dbk = to_dense(s.rt, s.attn.bk().grad);
    for (float g : dbk) EXPECT_LE(std::abs(g), 1e-5);
  }
}

// ---- embeddings and loss --------------------------------------------------

TEST(EmbeddingLayerTest, BackwardMatchesReference) {
  const std::size_t V = 9, E = 5, S = 3, B = 2;
  const nn::SeqTiling seq{S, B, 2, 1};
  Runtime rt(options(2, 1));
  nn::Embedding emb(rt, "wte", V, E, 4, 2, seq, Fill::zeros());
  nn::PositionalEmbedding pos(rt, "wpe", E, 2, seq, Fill::zeros());
  const std::vector<std::int32_t> ids = {1, 1, 4, 8, 1, 0};
  const auto dy = random_floats(E * S * B, 21);
  const TiledTensor idt = ids_tensor(rt, seq, ids);
  emb.forward(idt);
  nn::zero_grad(rt, {&emb.table(), &pos.table()});
  const TiledTensor dyt = activation(rt, E, 2, seq, dy);
  emb.backward(idt, dyt);
  pos.backward(dyt);

  EXPECT_LE(rel_error(to_dense(rt, emb.table().grad), oracle::embedding_backward(ids, oracle::widen(dy), V, E)), 1e-6);
  Vec dpos(E * S, 0.0);
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t t = 0; t < S * B; ++t) dpos[e * S + t / B] += dy[e * S * B + t];
  EXPECT_LE(rel_error(to_dense(rt, pos.table().grad), dpos), 1e-6);
}

TEST(EmbeddingLayerTest, OutOfRangeIdFailsTheStep) {
  const nn::SeqTiling seq{2, 1, 2, 1};
  Runtime rt(options(1, 0));
  nn::Embedding emb(rt, "wte", 4, 2, 2, 2, seq, Fill::zeros());
  const TiledTensor idt = ids_tensor(rt, seq, {0, 4});
  emb.forward(idt);
  EXPECT_THROW(rt.wait_all(), KernelError);
}

TEST(CrossEntropyLayerTest, UniformLogitsGiveLogVocab) {
  const nn::SeqTiling seq{4, 2, 2, 2};
  Runtime rt(options(2, 2));
  nn::CrossEntropy ce(rt, 256, 64, seq);
  const TiledTensor z = activation(rt, 256, 64, seq, std::vector<float>(256 * 8, 0.0f));
  ce.forward_backward(z, ids_tensor(rt, seq, tt_test::random_ids(8, 256, 22)));
  EXPECT_NEAR(ce.loss(), std::log(256.0), 1e-5);
  // Each column of dlogits sums to zero.
  const auto d = to_dense(rt, ce.dlogits());
  for (std::size_t t = 0; t < 8; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < 256; ++c) s += d[c * 8 + t];
    EXPECT_NEAR(s, 0.0, 1e-7);
  }
}

// ---- optimizer ------------------------------------------------------------

struct OneParam {
  Runtime rt{options(1, 1)};
  TensorGradPair p;
  explicit OneParam(std::vector<float> w)
      : p(nn::make_param(rt, "w", {w.size()}, {std::max<std::size_t>(1, w.size() / 2)}, Fill::zeros())) {
    assign_dense(rt, p.value, w);
  }
  void set_grad(const std::vector<float>& g) { assign_dense(rt, p.grad, g); }
  std::vector<float> value() { return to_dense(rt, p.value); }
};

TEST(OptimizerTest, ZeroGradientSgdLeavesWeights) {
  const auto w0 = random_floats(6, 23);
  OneParam w(w0);
  nn::Optimizer opt(w.rt, {&w.p}, {nn::OptimizerKind::SgdMomentum, 0.1f, 0.0f});
  w.set_grad(std::vector<float>(6, 0.0f));
  opt.step();
  EXPECT_EQ(w.value(), w0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(OptimizerTest, AdamMinimizesAQuadratic) {
  OneParam w({1.0f, -0.8f});
  nn::OptimizerConfig cfg;
  cfg.kind = nn::OptimizerKind::Adam;
  cfg.lr = 0.1f;
  nn::Optimizer opt(w.rt, {&w.p}, cfg);
  for (int t = 0; t < 100; ++t) {
    auto g = w.value();
    for (float& v : g) v *= 2.0f;
    w.set_grad(g);
    opt.step();
  }
  for (float v : w.value()) EXPECT_LT(std::abs(v), 0.1f);
}

TEST(OptimizerTest, AdamWShrinksWeightsWithoutGradients) {
  OneParam w({2.0f, -1.0f, 0.5f, 4.0f});
  nn::OptimizerConfig cfg;
  cfg.kind = nn::OptimizerKind::AdamW;
  cfg.lr = 0.05f;
  cfg.weight_decay = 0.1f;
  nn::Optimizer opt(w.rt, {&w.p}, cfg);
  w.set_grad(std::vector<float>(4, 0.0f));
  for (int t = 0; t < 5; ++t) opt.step();
  const double f = std::pow(1.0 - 0.05 * 0.1, 5);
  const auto v = w.value();
  const float w0[] = {2.0f, -1.0f, 0.5f, 4.0f};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(v[i], w0[i] * f, 1e-6);
}

TEST(OptimizerTest, StateSharesParameterTilingAndCountsBytes) {
  Runtime rt(options(1, 1));
  auto a = nn::make_param(rt, "a", {6, 4}, {4, 3}, Fill::zeros());
  auto b = nn::make_param(rt, "b", {5}, {2}, Fill::zeros());
  const std::size_t param_bytes = (24 + 5) * sizeof(float);
  const std::pair<nn::OptimizerKind, std::size_t> kinds[] = {
      {nn::OptimizerKind::SgdMomentum, 1}, {nn::OptimizerKind::Adam, 2}, {nn::OptimizerKind::AdamW, 2}};
  for (const auto& [kind, moments] : kinds) {
    const std::size_t before = rt.registered_bytes();
    nn::OptimizerConfig cfg;
    cfg.kind = kind;
    nn::Optimizer opt(rt, {&a, &b}, cfg);
    EXPECT_EQ(opt.moments_per_param(), moments);
    EXPECT_EQ(opt.param_bytes(), param_bytes);
    EXPECT_EQ(opt.state_bytes(), moments * param_bytes);
    EXPECT_EQ(rt.registered_bytes() - before, moments * param_bytes);
    ASSERT_EQ(opt.state().size(), 2u);
    for (const auto& m : opt.state()[0]) EXPECT_TRUE(m.same_layout(a.value));
    for (const auto& m : opt.state()[1]) EXPECT_TRUE(m.same_layout(b.value));
  }
}

TEST(OptimizerTest, ParsesNames) {
  EXPECT_EQ(nn::parse_optimizer("sgd"), nn::OptimizerKind::SgdMomentum);
  EXPECT_EQ(nn::parse_optimizer("adam"), nn::OptimizerKind::Adam);
  EXPECT_EQ(nn::parse_optimizer("adamw"), nn::OptimizerKind::AdamW);
  for (auto kind : {nn::OptimizerKind::SgdMomentum, nn::OptimizerKind::Adam, nn::OptimizerKind::AdamW})
    EXPECT_EQ(nn::parse_optimizer(nn::to_string(kind)), kind);
  EXPECT_THROW(nn::parse_optimizer("lbfgs"), ConfigError);
}

}  // namespace
