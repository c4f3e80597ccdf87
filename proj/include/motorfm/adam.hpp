#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "motorfm/tensor.hpp"

namespace motorfm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// One parameter block handed to `adam_step`. `grad` may be null for blocks
/// that received no gradient; frozen blocks are never written.
struct ParamRef {
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
  bool trainable = true;
};

/// Bias-corrected Adam state. Moment arrays are created zero-filled on the
/// first step and are indexed by block position, so callers must pass blocks
/// in the same order every step.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) { config.validate(); }
};

void adam_step(AdamState& state, std::span<const ParamRef> params);

}  // namespace motorfm
