#pragma once

#include <functional>

#include "msafeb/tensor.hpp"

namespace msafeb {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the analytic gradient of fn at input against central
/// differences with step eps * max(1, |x_i|). Returns
/// max_i |analytic - numeric| / max(1, |analytic| + |numeric|). Outputs of
/// scalar reductions are differenced at double precision (item_exact()).
double grad_check(const ScalarFn& fn, const Tensor& input, double eps = 1e-3);

/// Same comparison against a leaf captured by fn (e.g. a weight tensor).
/// The leaf is perturbed in place and restored.
double grad_check_leaf(const std::function<Tensor()>& fn, Tensor& leaf, double eps = 1e-3);

}  // namespace msafeb
