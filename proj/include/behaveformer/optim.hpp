#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "behaveformer/types.hpp"

namespace bf {

struct AdamConfig {
  Scalar lr = 1e-3;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

/// Per-parameter Adam moments keyed by parameter name, plus the shared step
/// counter. Slots are allocated on first use and shape-checked afterwards.
struct AdamState {
  AdamConfig config;
  long step_count = 0;
  struct Slot {
    Matrix m;
    Matrix v;
  };
  std::map<std::string, Slot> slots;
};

using NamedParams = std::vector<std::pair<std::string, Matrix*>>;
using GradMap = std::map<std::string, Matrix>;

/// One bias-corrected Adam update over all named parameters. Every parameter
/// must have a gradient entry of matching shape.
void adam_step(const NamedParams& params, const GradMap& grads, AdamState& state);

}  // namespace bf
