// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "tiletrain/devices.hpp"
#include "tiletrain/model.hpp"
#include "tiletrain/runtime.hpp"
#include "tiletrain/scheduler.hpp"

namespace tiletrain {

// A training run as read from a JSON file with "model", "devices",
// "scheduler" and "training" blocks. Missing keys keep their defaults;
// unknown keys are rejected.
struct RunConfig {
  GPT2Config model;
  TopologyParams topology;
  bool offload = true;
  bool prefetch = true;
  PolicyKind policy = PolicyKind::GreedyEct;
  TrainConfig training;

  RuntimeOptions runtime_options() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace tiletrain
