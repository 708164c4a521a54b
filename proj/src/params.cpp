#include "msafeb/params.hpp"

#include <cmath>

#include "msafeb/errors.hpp"

namespace msafeb {

Tensor ParameterSet::add(std::string name, Tensor value, bool learnable) {
  if (find(name) != nullptr) throw UsageError("duplicate parameter name: " + name);
  value.set_requires_grad(learnable);
  entries_.push_back({std::move(name), value, learnable});
  return value;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : entries_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterSet::learnable_scalars() const {
  return learnable_scalars_with_prefix("");
}

std::size_t ParameterSet::learnable_scalars_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : entries_) {
    if (p.learnable && p.name.starts_with(prefix)) n += p.value.numel();
  }
  return n;
}

void ParameterSet::clear_grads() {
  for (auto& p : entries_) p.value.clear_grad();
}

std::vector<std::vector<float>> ParameterSet::snapshot() const {
  std::vector<std::vector<float>> out;
  out.reserve(entries_.size());
  for (const auto& p : entries_) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

void ParameterSet::restore(const std::vector<std::vector<float>>& values) {
  if (values.size() != entries_.size()) throw UsageError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = entries_[i].value.mutable_data();
    if (values[i].size() != dst.size()) {
      throw UsageError("restore: size mismatch for " + entries_[i].name);
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

Tensor he_normal(Dims dims, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<float> v(product(dims));
  for (auto& x : v) x = static_cast<float>(rng.normal() * sd);
  return Tensor::create(std::move(dims), std::move(v));
}

ConvLayer ConvLayer::create(const ConvSpec& spec, ParameterSet& params, const std::string& name,
                            Rng& rng) {
  spec.validate();
  ConvLayer layer;
  layer.spec = spec;
  const std::size_t fan_in = spec.in_channels / spec.groups * spec.kernel * spec.kernel;
  layer.weight = params.add(name + ".weight", he_normal(spec.weight_dims(), fan_in, rng));
  if (spec.bias) layer.bias = params.add(name + ".bias", Tensor::zeros({spec.out_channels}));
  return layer;
}

DenseLayer DenseLayer::create(std::size_t in, std::size_t out, ParameterSet& params,
                              const std::string& name, Rng& rng) {
  DenseLayer layer;
  layer.weight = params.add(name + ".weight", he_normal({in, out}, in, rng));
  layer.bias = params.add(name + ".bias", Tensor::zeros({out}));
  return layer;
}

BatchNormState register_batch_norm(std::size_t channels, ParameterSet& params,
                                   const std::string& name, float momentum, float eps) {
  BatchNormState s = BatchNormState::create(channels, momentum, eps);
  s.gamma = params.add(name + ".gamma", s.gamma, true);
  s.beta = params.add(name + ".beta", s.beta, true);
  s.running_mean = params.add(name + ".running_mean", s.running_mean, false);
  s.running_var = params.add(name + ".running_var", s.running_var, false);
  return s;
}

}  // namespace msafeb
