#include "msafeb/optim.hpp"

#include <cmath>
#include <string>

#include "msafeb/errors.hpp"

namespace msafeb {

void adam_step(std::span<const std::span<float>> params,
               std::span<const std::span<const float>> grads, AdamState& state, double lr,
               double weight_decay) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty() && state.t == 0) {
    for (auto p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].size() || state.m[k].size() != params[k].size()) {
      throw ShapeError("adam: size mismatch at parameter " + std::to_string(k));
    }
  }

  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = double(g[i]) + weight_decay * double(p[i]);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] = static_cast<float>(double(p[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

void adam_step(ParameterSet& params, AdamState& state, double lr, double weight_decay) {
  std::vector<std::span<float>> values;
  std::vector<std::span<const float>> grads;
  std::vector<std::vector<float>> zeros;
  zeros.reserve(params.entries().size());
  for (auto& p : params.entries()) {
    if (!p.learnable || !p.value.requires_grad()) continue;
    values.push_back(p.value.mutable_data());
    if (p.value.has_grad()) {
      grads.push_back(p.value.grad());
    } else {
      zeros.emplace_back(p.value.numel(), 0.0f);
      grads.push_back(zeros.back());
    }
  }
  adam_step(values, grads, state, lr, weight_decay);
}

}  // namespace msafeb
