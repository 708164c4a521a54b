#include "msafeb/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "msafeb/errors.hpp"

namespace msafeb {

namespace {

double scalar_of(const Tensor& out) {
  if (!out.defined() || out.numel() != 1) {
    throw ShapeError("grad_check: function output must be a single element, got " +
                     (out.defined() ? to_string(out.dims()) : std::string("undefined")));
  }
  return out.item_exact();
}

}  // namespace

double grad_check_leaf(const std::function<Tensor()>& fn, Tensor& leaf, double eps) {
  if (!(eps > 0.0)) throw UsageError("grad_check: eps must be positive");
  const bool had_rg = leaf.requires_grad();
  leaf.set_requires_grad(true);
  leaf.clear_grad();
  const Tensor out = fn();
  scalar_of(out);
  backward(out);
  std::vector<float> analytic(leaf.numel(), 0.0f);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
  leaf.clear_grad();

  auto values = leaf.mutable_data();
  double worst = 0.0;
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float original = values[i];
      const double h = eps * std::max(1.0, std::abs(double(original)));
      values[i] = static_cast<float>(original + h);
      const double hp = double(values[i]) - original;
      const double fp = scalar_of(fn());
      values[i] = static_cast<float>(original - h);
      const double hm = original - double(values[i]);
      const double fm = scalar_of(fn());
      values[i] = original;
      // Use the representable step actually taken.
      const double numeric = (fp - fm) / (hp + hm);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  leaf.set_requires_grad(had_rg);
  return worst;
}

double grad_check(const ScalarFn& fn, const Tensor& input, double eps) {
  Tensor x = input.detach();
  return grad_check_leaf([&] { return fn(x); }, x, eps);
}

}  // namespace msafeb
