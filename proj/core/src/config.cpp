// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tiletrain/error.hpp"

namespace tiletrain {

namespace {

using nlohmann::json;

void reject_unknown(const json& block, const std::string& where, const std::set<std::string>& known) {
  if (!block.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, value] : block.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in '" + where + "'");
  }
}

template <class T>
void read(const json& block, const char* key, T& out) {
  if (!block.contains(key)) return;
  try {
    out = block.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void read_model(const json& j, GPT2Config& m) {
  reject_unknown(j, "model",
                 {"n_layers", "n_e", "heads", "n_s", "n_b", "n_v", "te", "ts", "tb", "tf", "tv", "seed", "causal",
                  "tie_embeddings"});
  read(j, "n_layers", m.n_layers);
  read(j, "n_e", m.n_e);
  read(j, "heads", m.heads);
  read(j, "n_s", m.n_s);
  read(j, "n_b", m.n_b);
  read(j, "n_v", m.n_v);
  read(j, "te", m.te);
  read(j, "ts", m.ts);
  read(j, "tb", m.tb);
  read(j, "tf", m.tf);
  read(j, "tv", m.tv);
  read(j, "seed", m.seed);
  read(j, "causal", m.causal);
  read(j, "tie_embeddings", m.tie_embeddings);
}

void read_devices(const json& j, RunConfig& rc) {
  reject_unknown(j, "devices",
                 {"gpu_count", "gpu_capacity", "gpu_speed", "cpu_count", "cpu_speed", "bandwidth",
                  "flops_per_speed_unit", "offload", "prefetch"});
  TopologyParams& t = rc.topology;
  read(j, "gpu_count", t.gpu_count);
  read(j, "gpu_capacity", t.gpu_capacity);
  read(j, "gpu_speed", t.gpu_speed);
  read(j, "cpu_count", t.cpu_count);
  read(j, "cpu_speed", t.cpu_speed);
  read(j, "bandwidth", t.bandwidth);
  read(j, "flops_per_speed_unit", t.flops_per_speed_unit);
  read(j, "offload", rc.offload);
  read(j, "prefetch", rc.prefetch);
}

void read_training(const json& j, TrainConfig& t) {
  reject_unknown(j, "training",
                 {"steps", "optimizer", "lr", "momentum", "beta1", "beta2", "eps", "weight_decay", "dataset_batches",
                  "data_seed"});
  read(j, "steps", t.steps);
  if (j.contains("optimizer")) t.optimizer.kind = nn::parse_optimizer(j.at("optimizer").get<std::string>());
  read(j, "lr", t.optimizer.lr);
  read(j, "momentum", t.optimizer.momentum);
  read(j, "beta1", t.optimizer.beta1);
  read(j, "beta2", t.optimizer.beta2);
  read(j, "eps", t.optimizer.eps);
  read(j, "weight_decay", t.optimizer.weight_decay);
  read(j, "dataset_batches", t.dataset_batches);
  read(j, "data_seed", t.data_seed);
}

}  // namespace

RuntimeOptions RunConfig::runtime_options() const {
  RuntimeOptions o;
  o.topology = make_topology(topology);
  o.policy = policy;
  o.offload = offload;
  o.prefetch = prefetch;
  return o;
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  reject_unknown(root, "<root>", {"model", "devices", "scheduler", "training"});
  RunConfig rc;
  if (root.contains("model")) read_model(root["model"], rc.model);
  if (root.contains("devices")) read_devices(root["devices"], rc);
  if (root.contains("scheduler")) {
    const json& s = root["scheduler"];
    reject_unknown(s, "scheduler", {"policy"});
    if (s.contains("policy")) rc.policy = parse_policy(s.at("policy").get<std::string>());
  }
  if (root.contains("training")) read_training(root["training"], rc.training);
  rc.model.validate();
  make_topology(rc.topology).validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace tiletrain
