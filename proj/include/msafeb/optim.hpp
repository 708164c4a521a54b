#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msafeb/params.hpp"

namespace msafeb {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  // One accumulator vector per parameter tensor, sized on the first step.
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One Adam step with coupled L2: g = grad + weight_decay * param.
/// Throws ShapeError when the parameter, gradient and state sizes disagree.
void adam_step(std::span<const std::span<float>> params,
               std::span<const std::span<const float>> grads, AdamState& state, double lr,
               double weight_decay);

/// Steps every learnable parameter that requires grad. A parameter that
/// received no gradient this step is treated as having a zero gradient.
void adam_step(ParameterSet& params, AdamState& state, double lr, double weight_decay);

}  // namespace msafeb
