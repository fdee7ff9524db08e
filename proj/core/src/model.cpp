// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/model.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <random>

#include "tiletrain/error.hpp"

namespace tiletrain {

namespace {

constexpr float kInitStd = 0.02f;
constexpr char kModelMagic[4] = {'T', 'T', 'M', 'D'};
constexpr std::uint32_t kModelVersion = 1;

Fill init(std::uint64_t seed) { return Fill::normal(0.0f, kInitStd, seed); }

std::uint64_t block_seed(const GPT2Config& cfg, std::size_t index) { return cfg.seed + 100 * (index + 1); }

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw CheckpointError("truncated model checkpoint");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

// ---- config ---------------------------------------------------------------

void GPT2Config::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(n_e > 0 && heads > 0 && n_s > 0 && n_b > 0 && n_v > 0, "model sizes must be positive");
  need(n_e % heads == 0, "n_e (" + std::to_string(n_e) + ") must be divisible by heads (" + std::to_string(heads) + ")");
  need(n_v <= static_cast<std::size_t>(INT32_MAX), "vocabulary does not fit I32 token ids");
  need(te <= n_e, "te larger than n_e");
  need(ts <= n_s, "ts larger than n_s");
  need(tb <= n_b, "tb larger than n_b");
  need(tf <= hidden(), "tf larger than the MLP hidden size");
  need(tv <= n_v, "tv larger than n_v");
}

std::size_t GPT2Config::expected_parameter_count() const noexcept {
  const std::size_t per_layer = 12 * n_e * n_e + 13 * n_e;
  std::size_t total = n_layers * per_layer + (n_v + n_s) * n_e + 2 * n_e;
  if (!tie_embeddings) total += n_v * n_e;
  return total;
}

double GPT2Config::model_flops_per_step() const noexcept {
  const double tokens = static_cast<double>(n_s * n_b);
  const double params = static_cast<double>(expected_parameter_count());
  return tokens * (6.0 * params + 12.0 * static_cast<double>(n_layers * n_e * n_s));
}

// ---- block ----------------------------------------------------------------

Block::Block(Runtime& rt, const GPT2Config& cfg, std::size_t index)
    : rt_(rt),
      ln1_(rt, "h" + std::to_string(index) + ".ln1", cfg.n_e, cfg.tile_e(), cfg.seq()),
      attn_(rt, "h" + std::to_string(index) + ".attn", cfg.n_e, cfg.heads, cfg.tile_e(), cfg.seq(), cfg.causal,
            block_seed(cfg, index)),
      ln2_(rt, "h" + std::to_string(index) + ".ln2", cfg.n_e, cfg.tile_e(), cfg.seq()),
      fc1_(rt, "h" + std::to_string(index) + ".fc1", cfg.n_e, cfg.hidden(), cfg.tile_e(), cfg.tile_f(), cfg.seq(),
           true, init(block_seed(cfg, index) + 4)),
      gelu_(rt, cfg.hidden(), cfg.tile_f(), cfg.seq()),
      fc2_(rt, "h" + std::to_string(index) + ".fc2", cfg.hidden(), cfg.n_e, cfg.tile_f(), cfg.tile_e(), cfg.seq(),
           true, init(block_seed(cfg, index) + 5)) {
  const nn::SeqTiling seq = cfg.seq();
  for (TiledTensor* t : {&h_, &out_, &dln_, &da_, &dh_, &dx_}) *t = nn::make_activation(rt, cfg.n_e, cfg.tile_e(), seq);
  dgelu_ = nn::make_activation(rt, cfg.hidden(), cfg.tile_f(), seq);
  dfc1_ = nn::make_activation(rt, cfg.hidden(), cfg.tile_f(), seq);
}

std::vector<TensorGradPair*> Block::params() {
  std::vector<TensorGradPair*> out = ln1_.params();
  for (auto* p : attn_.params()) out.push_back(p);
  for (auto* p : ln2_.params()) out.push_back(p);
  for (auto* p : fc1_.params()) out.push_back(p);
  for (auto* p : fc2_.params()) out.push_back(p);
  return out;
}

const TiledTensor& Block::forward(const TiledTensor& x) {
  const TiledTensor& a = attn_.forward(ln1_.forward(x));
  nn::add(rt_, x, a, h_);
  const TiledTensor& m = fc2_.forward(gelu_.forward(fc1_.forward(ln2_.forward(h_))));
  nn::add(rt_, h_, m, out_);
  return out_;
}

const TiledTensor& Block::backward(const TiledTensor& dy) {
  // MLP branch plus the residual path into dh.
  fc2_.backward(gelu_.output(), dy, dgelu_, false);
  gelu_.backward(fc1_.output(), dgelu_, dfc1_, false);
  fc1_.backward(ln2_.output(), dfc1_, dln_, false);
  nn::copy(rt_, dy, dh_);
  ln2_.backward(dln_, dh_, true);

  attn_.backward(ln1_.output(), dh_, da_, false);
  nn::copy(rt_, dh_, dx_);
  ln1_.backward(da_, dx_, true);
  return dx_;
}

// ---- model ----------------------------------------------------------------

GPT2::GPT2(Runtime& rt, GPT2Config cfg)
    : rt_(rt),
      cfg_((cfg.validate(), cfg)),
      wte_(rt, "wte", cfg_.n_v, cfg_.n_e, cfg_.tile_v(), cfg_.tile_e(), cfg_.seq(), init(cfg_.seed)),
      wpe_(rt, "wpe", cfg_.n_e, cfg_.tile_e(), cfg_.seq(), init(cfg_.seed + 1)),
      blocks_([&] {
        std::vector<std::unique_ptr<Block>> b;
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) b.push_back(std::make_unique<Block>(rt, cfg_, l));
        return b;
      }()),
      ln_f_(rt, "ln_f", cfg_.n_e, cfg_.tile_e(), cfg_.seq()),
      head_(cfg_.tie_embeddings
                ? nn::Linear(rt, &wte_.table(), cfg_.tile_e(), cfg_.seq())
                : nn::Linear(rt, "head", cfg_.n_e, cfg_.n_v, cfg_.tile_e(), cfg_.tile_v(), cfg_.seq(), false,
                             init(cfg_.seed + 2))),
      ce_(rt, cfg_.n_v, cfg_.tile_v(), cfg_.seq()),
      dlnf_(nn::make_activation(rt, cfg_.n_e, cfg_.tile_e(), cfg_.seq())),
      dx_(nn::make_activation(rt, cfg_.n_e, cfg_.tile_e(), cfg_.seq())) {}

GPT2::~GPT2() = default;

TiledTensor GPT2::make_tokens() const {
  return TiledTensor(rt_, {cfg_.n_s, cfg_.n_b}, {cfg_.tile_s(), cfg_.tile_b()}, DType::I32);
}

std::vector<Block*> GPT2::blocks() {
  std::vector<Block*> out;
  for (auto& b : blocks_) out.push_back(b.get());
  return out;
}

std::vector<TensorGradPair*> GPT2::params() {
  std::vector<TensorGradPair*> out{&wte_.table(), &wpe_.table()};
  for (auto& b : blocks_) {
    for (auto* p : b->params()) out.push_back(p);
  }
  for (auto* p : ln_f_.params()) out.push_back(p);
  for (auto* p : head_.params()) out.push_back(p);
  return out;
}

std::size_t GPT2::parameter_count() {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->value.numel();
  return n;
}

const TiledTensor& GPT2::forward(const TiledTensor& ids, const TiledTensor& labels) {
  const TiledTensor& emb = wte_.forward(ids);
  wpe_.forward(emb);
  const TiledTensor* x = &emb;
  for (auto& b : blocks_) x = &b->forward(*x);
  const TiledTensor& logits = head_.forward(ln_f_.forward(*x));
  ce_.forward_backward(logits, labels);
  return logits;
}

void GPT2::forward_backward(const TiledTensor& ids, const TiledTensor& labels) {
  nn::zero_grad(rt_, params());
  forward(ids, labels);
  head_.backward(ln_f_.output(), ce_.dlogits(), dlnf_, false);
  ln_f_.backward(dlnf_, dx_, false);
  const TiledTensor* d = &dx_;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = &(*it)->backward(*d);
  wpe_.backward(*d);
  wte_.backward(ids, *d);
}

float GPT2::loss() { return ce_.loss(); }

void GPT2::save(std::ostream& out) {
  const auto ps = params();
  out.write(kModelMagic, 4);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto* p : ps) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    save_tensor(out, rt_, p->value);
  }
  if (!out) throw CheckpointError("failed writing model checkpoint");
}

void GPT2::save(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  save(f);
}

void GPT2::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kModelMagic)) throw CheckpointError("not a model checkpoint");
  if (const auto v = get_u32(in); v != kModelVersion) {
    throw CheckpointError("unsupported model checkpoint version " + std::to_string(v));
  }
  const auto ps = params();
  if (const auto n = get_u32(in); n != ps.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(n) + " tensors, model has " +
                          std::to_string(ps.size()));
  }
  for (const auto* p : ps) {
    const std::uint32_t len = get_u32(in);
    if (len > 4096) throw CheckpointError("corrupt parameter name");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw CheckpointError("truncated model checkpoint");
    if (name != p->name) throw CheckpointError("expected parameter " + p->name + ", found " + name);
    load_tensor_into(in, rt_, p->value);
  }
}

void GPT2::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path);
  load(f);
}

// ---- training -------------------------------------------------------------

TokenBatch synthetic_batch(const GPT2Config& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> dist(0, static_cast<std::int32_t>(cfg.n_v - 1));
  TokenBatch batch;
  batch.ids.resize(cfg.n_s * cfg.n_b);
  batch.labels.resize(cfg.n_s * cfg.n_b);
  std::vector<std::int32_t> seq(cfg.n_s + 1);
  for (std::size_t b = 0; b < cfg.n_b; ++b) {
    for (auto& t : seq) t = dist(rng);
    for (std::size_t s = 0; s < cfg.n_s; ++s) {
      batch.ids[s * cfg.n_b + b] = seq[s];
      batch.labels[s * cfg.n_b + b] = seq[s + 1];
    }
  }
  return batch;
}

TrainResult train(GPT2& model, const TrainConfig& cfg, const StepCallback& on_step) {
  Runtime& rt = model.runtime();
  const GPT2Config& mc = model.config();
  nn::Optimizer opt(rt, model.params(), cfg.optimizer);
  const TiledTensor ids = model.make_tokens();
  const TiledTensor labels = model.make_tokens();

  std::vector<TokenBatch> dataset;
  for (std::size_t i = 0; i < cfg.dataset_batches; ++i) dataset.push_back(synthetic_batch(mc, cfg.data_seed + i));

  TrainResult result;
  result.parameter_count = model.parameter_count();
  result.optimizer_state_bytes = opt.state_bytes();
  result.busy_seconds.assign(rt.topology().size(), 0.0);
  const double flops = mc.model_flops_per_step();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const TokenBatch batch = dataset.empty() ? synthetic_batch(mc, cfg.data_seed + step) : dataset[step % dataset.size()];
    assign_dense_i32(rt, ids, batch.ids);
    assign_dense_i32(rt, labels, batch.labels);

    const auto t0 = std::chrono::steady_clock::now();
    model.forward_backward(ids, labels);
    opt.step();
    rt.wait_all();
    const auto t1 = std::chrono::steady_clock::now();

    const FlushStats& fs = rt.last_flush();
    TrainMetrics m;
    m.step = step;
    m.loss = model.loss();
    m.makespan = fs.makespan();
    m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    m.model_flops = flops;
    m.flops_per_vsec = m.makespan > 0.0 ? flops / m.makespan : 0.0;
    m.bytes_moved = fs.bytes_transferred;
    for (std::size_t d = 0; d < fs.busy_seconds.size(); ++d) result.busy_seconds[d] += fs.busy_seconds[d];
    result.total_makespan += m.makespan;
    result.steps.push_back(m);
    if (on_step) on_step(m);
  }
  return result;
}

void write_metrics_csv(const std::vector<TrainMetrics>& steps, std::ostream& out) {
  out << "step,loss,makespan,flops_per_vsec,bytes_moved,wall_seconds\n";
  const auto old = out.precision(9);
  for (const auto& m : steps) {
    out << m.step << ',' << m.loss << ',' << m.makespan << ',' << m.flops_per_vsec << ',' << m.bytes_moved << ','
        << m.wall_seconds << '\n';
  }
  out.precision(old);
}

}  // namespace tiletrain
