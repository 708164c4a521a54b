#pragma once

#include <string>
#include <vector>

#include "msafeb/layers.hpp"
#include "msafeb/rng.hpp"
#include "msafeb/tensor.hpp"

namespace msafeb {

struct Parameter {
  std::string name;
  Tensor value;
  bool learnable = true;  // false for running statistics
};

/// Ordered registry of named tensors. Registration order is the checkpoint
/// manifest order.
class ParameterSet {
 public:
  /// Throws UsageError on a duplicate name.
  Tensor add(std::string name, Tensor value, bool learnable = true);

  const std::vector<Parameter>& entries() const { return entries_; }
  std::vector<Parameter>& entries() { return entries_; }
  const Parameter* find(const std::string& name) const;

  /// Number of learnable scalars.
  std::size_t learnable_scalars() const;
  std::size_t learnable_scalars_with_prefix(const std::string& prefix) const;

  void clear_grads();
  /// Deep copy of all values, in registration order.
  std::vector<std::vector<float>> snapshot() const;
  void restore(const std::vector<std::vector<float>>& values);

 private:
  std::vector<Parameter> entries_;
};

/// Zero-mean normal with standard deviation sqrt(2 / fan_in).
Tensor he_normal(Dims dims, std::size_t fan_in, Rng& rng);

struct ConvLayer {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;

  static ConvLayer create(const ConvSpec& spec, ParameterSet& params, const std::string& name,
                          Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, spec, weight, bias); }
};

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;

  static DenseLayer create(std::size_t in, std::size_t out, ParameterSet& params,
                           const std::string& name, Rng& rng);
  Tensor operator()(const Tensor& x) const { return dense(x, weight, bias); }
};

/// Registers gamma/beta as learnable and the running statistics as buffers.
BatchNormState register_batch_norm(std::size_t channels, ParameterSet& params,
                                   const std::string& name, float momentum, float eps);

}  // namespace msafeb
