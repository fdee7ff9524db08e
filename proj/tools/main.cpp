// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

// Command line driver: `tiletrain train --config run.json [...]` and
// `tiletrain info --config run.json`.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tiletrain/config.hpp"
#include "tiletrain/error.hpp"
#include "tiletrain/model.hpp"
#include "tiletrain/trace.hpp"

namespace {

using namespace tiletrain;

constexpr int kExitOom = 3;

struct TrainArgs {
  std::string config;
  std::string policy;
  std::string trace;
  std::string metrics;
  std::string summary;
  std::string save;
  std::string load;
  std::optional<std::size_t> cap_bytes;
  std::optional<std::size_t> steps;
  bool no_offload = false;
  bool no_prefetch = false;
  bool quiet = false;
};

RunConfig resolve(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (!a.policy.empty()) rc.policy = parse_policy(a.policy);
  if (a.cap_bytes) rc.topology.gpu_capacity = *a.cap_bytes;
  if (a.steps) rc.training.steps = *a.steps;
  if (a.no_offload) rc.offload = false;
  if (a.no_prefetch) rc.prefetch = false;
  return rc;
}

nlohmann::json summary_json(const RunConfig& rc, const Runtime& rt, const TrainResult& r) {
  nlohmann::json devices = nlohmann::json::array();
  const Topology& topo = rt.topology();
  for (const DeviceModel& d : topo.devices) {
    const double busy = r.busy_seconds.at(static_cast<std::size_t>(d.id));
    const IdleHistogram& idle = rt.stats().idle.at(static_cast<std::size_t>(d.id));
    nlohmann::json bins = nlohmann::json::array();
    for (std::size_t i = 0; i < IdleHistogram::kBins; ++i) {
      bins.push_back({{"from_seconds", IdleHistogram::lower_edge(i)}, {"count", idle.counts[i]}});
    }
    devices.push_back({{"id", d.id},
                       {"kind", std::string(to_string(d.kind))},
                       {"busy_seconds", busy},
                       {"utilization", r.total_makespan > 0 ? busy / r.total_makespan : 0.0},
                       {"peak_bytes", rt.residency().peak_bytes(d.id)},
                       {"idle_seconds", idle.total_seconds},
                       {"idle_gaps", bins}});
  }
  nlohmann::json j;
  j["parameter_count"] = r.parameter_count;
  j["expected_parameter_count"] = rc.model.expected_parameter_count();
  j["optimizer"] = std::string(nn::to_string(rc.training.optimizer.kind));
  j["optimizer_state_bytes"] = r.optimizer_state_bytes;
  j["policy"] = std::string(to_string(rc.policy));
  j["offload"] = rc.offload;
  j["steps"] = r.steps.size();
  if (!r.steps.empty()) {
    j["initial_loss"] = r.steps.front().loss;
    j["final_loss"] = r.steps.back().loss;
  }
  j["total_makespan"] = r.total_makespan;
  j["bytes_transferred"] = rt.stats().bytes_transferred;
  j["devices"] = devices;
  return j;
}

int run_train(const TrainArgs& a) {
  const RunConfig rc = resolve(a);
  RuntimeOptions opts = rc.runtime_options();
  opts.record_trace = !a.trace.empty();
  Runtime rt(opts);
  GPT2 model(rt, rc.model);
  if (!a.load.empty()) model.load(a.load);
  if (!a.quiet) {
    std::printf("model: %zu parameters (%zu layers, n_e=%zu, heads=%zu, n_v=%zu)\n", model.parameter_count(),
                rc.model.n_layers, rc.model.n_e, rc.model.heads, rc.model.n_v);
    std::printf("devices: %zu, policy %s, offload %s\n", rt.topology().size(),
                std::string(to_string(rc.policy)).c_str(), rc.offload ? "on" : "off");
  }

  TrainResult result;
  try {
    result = train(model, rc.training, [&](const TrainMetrics& m) {
      if (!a.quiet) {
        std::printf("step %4zu  loss %.5f  makespan %.4gs  %.3g flops/vs  moved %zu B\n", m.step, m.loss, m.makespan,
                    m.flops_per_vsec, m.bytes_moved);
      }
    });
  } catch (const OutOfDeviceMemory& e) {
    std::fprintf(stderr, "error: %s\n  %s\n", e.what(),
                 rc.offload ? "every resident tile is pinned; raise --cap-bytes" : "raise --cap-bytes or enable offload");
    return kExitOom;
  }

  if (!a.metrics.empty()) {
    std::ofstream f(a.metrics);
    if (!f) throw Error("cannot write " + a.metrics);
    write_metrics_csv(result.steps, f);
  }
  if (!a.summary.empty()) {
    std::ofstream f(a.summary);
    if (!f) throw Error("cannot write " + a.summary);
    f << summary_json(rc, rt, result).dump(2) << '\n';
  }
  if (!a.trace.empty()) write_chrome_trace(rt.trace(), rt.topology(), a.trace);
  if (!a.save.empty()) model.save(a.save);
  return 0;
}

int run_info(const std::string& config) {
  const RunConfig rc = load_run_config(config);
  Runtime rt(rc.runtime_options());
  GPT2 model(rt, rc.model);
  std::size_t bytes = 0;
  for (const auto* p : model.params()) {
    std::printf("%-16s %12zu\n", p->name.c_str(), p->value.numel());
    bytes += p->value.nbytes();
  }
  std::printf("total parameters %zu (closed form %zu), %zu bytes\n", model.parameter_count(),
              rc.model.expected_parameter_count(), bytes);
  std::printf("registered tile bytes %zu\n", rt.registered_bytes());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tile-based task-parallel GPT2 training on modeled devices"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model described by a JSON run config");
  train_cmd->add_option("--config", ta.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--policy", ta.policy, "scheduling policy")->check(CLI::IsMember({"eager", "greedy-ect"}));
  train_cmd->add_option("--trace", ta.trace, "write a Chrome trace-event file");
  train_cmd->add_option("--cap-bytes", ta.cap_bytes, "memory capacity of each GPU-like device");
  train_cmd->add_option("--steps", ta.steps, "override the number of training steps");
  train_cmd->add_option("--metrics", ta.metrics, "write per-step metrics as CSV");
  train_cmd->add_option("--summary", ta.summary, "write a JSON run summary");
  train_cmd->add_option("--save", ta.save, "save the trained parameters");
  train_cmd->add_option("--load", ta.load, "initialize parameters from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_flag("--no-offload", ta.no_offload, "disable eviction from GPU-like devices");
  train_cmd->add_flag("--no-prefetch", ta.no_prefetch, "disable prefetch directives");
  train_cmd->add_flag("-q,--quiet", ta.quiet, "only print errors");

  std::string info_config;
  auto* info_cmd = app.add_subcommand("info", "print the parameter breakdown of a run config");
  info_cmd->add_option("--config", info_config, "run config (JSON)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return run_train(ta);
    return run_info(info_config);
  } catch (const tiletrain::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
