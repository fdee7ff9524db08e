// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>

#include "tiletrain/error.hpp"
#include "tiletrain/nn.hpp"

namespace tiletrain::nn {

namespace k = tiletrain::kernels;

std::string_view to_string(OptimizerKind kind) noexcept {
  switch (kind) {
    case OptimizerKind::SgdMomentum:
      return "sgd";
    case OptimizerKind::Adam:
      return "adam";
    case OptimizerKind::AdamW:
      return "adamw";
  }
  return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd" || name == "sgd-momentum") return OptimizerKind::SgdMomentum;
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "adamw") return OptimizerKind::AdamW;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd, adam or adamw)");
}

Optimizer::Optimizer(Runtime& rt, std::vector<TensorGradPair*> params, OptimizerConfig config)
    : rt_(rt), params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0f)) throw ConfigError("learning rate must be > 0");
  state_.reserve(params_.size());
  for (const TensorGradPair* p : params_) {
    if (!p->value.same_layout(p->grad)) throw ConfigError("parameter " + p->name + " has a mismatched gradient");
    std::vector<TiledTensor> moments;
    for (std::size_t i = 0; i < moments_per_param(); ++i) {
      moments.push_back(make_tiled(rt, p->value.shape(), p->value.tile_shape()));
    }
    state_.push_back(std::move(moments));
  }
}

std::size_t Optimizer::moments_per_param() const noexcept {
  return config_.kind == OptimizerKind::SgdMomentum ? 1 : 2;
}

std::size_t Optimizer::param_bytes() const noexcept {
  std::size_t total = 0;
  for (const TensorGradPair* p : params_) total += p->value.nbytes();
  return total;
}

std::size_t Optimizer::state_bytes() const noexcept {
  std::size_t total = 0;
  for (const auto& moments : state_) {
    for (const TiledTensor& m : moments) total += m.nbytes();
  }
  return total;
}

void Optimizer::step() {
  ++t_;
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    const TensorGradPair& p = *params_[pi];
    const auto& moments = state_[pi];
    for (std::size_t i = 0; i < p.value.num_tiles(); ++i) {
      const double n = static_cast<double>(p.value.tile(i).nbytes / 4);
      if (config_.kind == OptimizerKind::SgdMomentum) {
        rt_.submit("sgd_momentum",
                   {{p.value.tile(i), AccessMode::ReadWrite},
                    {p.grad.tile(i), AccessMode::Read},
                    {moments[0].tile(i), AccessMode::ReadWrite}},
                   4.0 * n, [lr = config_.lr, mu = config_.momentum](const TaskContext& ctx) {
                     k::sgd_momentum(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), lr, mu);
                   });
        continue;
      }
      k::AdamParams ap{config_.lr, config_.beta1, config_.beta2, config_.eps,
                       config_.kind == OptimizerKind::AdamW ? config_.weight_decay : 0.0f};
      rt_.submit("adam",
                 {{p.value.tile(i), AccessMode::ReadWrite},
                  {p.grad.tile(i), AccessMode::Read},
                  {moments[0].tile(i), AccessMode::ReadWrite},
                  {moments[1].tile(i), AccessMode::ReadWrite}},
                 12.0 * n, [ap, t = t_](const TaskContext& ctx) {
                   k::adam(ctx.as<float>(0), ctx.as<float>(1), ctx.as<float>(2), ctx.as<float>(3), ap, t);
                 });
    }
  }
}

}  // namespace tiletrain::nn
