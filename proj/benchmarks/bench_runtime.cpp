// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "tiletrain/devices.hpp"
#include "tiletrain/model.hpp"
#include "tiletrain/runtime.hpp"
#include "tiletrain/tensor.hpp"

namespace {

using namespace tiletrain;

RuntimeOptions quiet_options(PolicyKind policy) {
  RuntimeOptions o;
  o.policy = policy;
  o.record_trace = false;
  return o;
}

// Submission and simulated execution overhead for independent tiny tasks.
void BM_SubmitIndependent(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Runtime rt(quiet_options(PolicyKind::GreedyEct));
  std::vector<TileHandle> tiles;
  for (std::size_t i = 0; i < n; ++i) tiles.push_back(rt.register_tile(64));
  for (auto _ : state) {
    for (const TileHandle& t : tiles) {
      rt.submit("touch", {{t, AccessMode::ReadWrite}}, 1.0, [](const TaskContext& ctx) { ctx.as<float>(0)[0] += 1.0f; });
    }
    rt.wait_all();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_SubmitIndependent)->Arg(256)->Arg(4096);

// A dependency chain plus a fan-in of Reduce contributions.
void BM_SubmitChainAndReduce(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Runtime rt(quiet_options(PolicyKind::GreedyEct));
  const TileHandle acc = rt.register_tile(256);
  const TileHandle chain = rt.register_tile(256);
  rt.set_reduce_op(acc, ReduceOp::sum_f32());
  for (auto _ : state) {
    for (std::size_t i = 0; i < n; ++i) {
      rt.submit("step", {{chain, AccessMode::ReadWrite}}, 1e3, [](const TaskContext&) {});
      rt.submit("contrib", {{acc, AccessMode::Reduce}}, 1e3, [](const TaskContext& ctx) { ctx.as<float>(0)[0] = 1.0f; });
    }
    rt.wait_all();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n));
}
BENCHMARK(BM_SubmitChainAndReduce)->Arg(1024);

// One training step of a small GPT-2; reports the simulated step time.
void BM_Gpt2Step(benchmark::State& state) {
  const auto policy = state.range(0) == 0 ? PolicyKind::EagerFifo : PolicyKind::GreedyEct;
  Runtime rt(quiet_options(policy));
  GPT2Config c;
  c.n_layers = 2;
  c.n_e = 64;
  c.heads = 4;
  c.n_s = 32;
  c.n_b = 4;
  c.n_v = 128;
  c.te = 16;
  c.ts = 8;
  c.tb = 2;
  c.tf = 64;
  c.tv = 32;
  GPT2 model(rt, c);
  const TiledTensor ids = model.make_tokens(), labels = model.make_tokens();
  const TokenBatch batch = synthetic_batch(c, 1);
  assign_dense_i32(rt, ids, batch.ids);
  assign_dense_i32(rt, labels, batch.labels);
  double makespan = 0.0;
  for (auto _ : state) {
    model.forward_backward(ids, labels);
    rt.wait_all();
    makespan = rt.last_flush().makespan();
  }
  state.counters["virtual_ms"] = makespan * 1e3;
  state.counters["tasks"] = static_cast<double>(rt.last_flush().tasks);
}
BENCHMARK(BM_Gpt2Step)->Arg(0)->Arg(1)->ArgNames({"greedy"})->Unit(benchmark::kMillisecond);

}  // namespace
