#include "msafeb/layers.hpp"

#include <algorithm>
#include <cmath>

#include "msafeb/errors.hpp"

namespace msafeb {

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || dilation == 0 ||
      groups == 0) {
    throw ConfigError("conv spec: extents, stride, dilation and groups must be >= 1");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv spec: channels (" + std::to_string(in_channels) + " in, " +
                      std::to_string(out_channels) + " out) not divisible by groups " +
                      std::to_string(groups));
  }
  if (padding == Padding::same_zero && kernel % 2 == 0) {
    throw ConfigError("conv spec: unsupported configuration, even kernel " +
                      std::to_string(kernel) + " with same-zero padding");
  }
}

Dims ConvSpec::weight_dims() const {
  return {out_channels, in_channels / groups, kernel, kernel};
}

std::size_t ConvSpec::weight_count() const { return product(weight_dims()); }

std::size_t ConvSpec::pad() const {
  return padding == Padding::same_zero ? dilation * (kernel - 1) / 2 : 0;
}

std::size_t ConvSpec::output_extent(std::size_t input_extent) const {
  const std::size_t span = dilation * (kernel - 1) + 1;
  const std::size_t padded = input_extent + 2 * pad();
  if (padded < span) {
    throw ShapeError("conv2d: input extent " + std::to_string(input_extent) +
                     " smaller than the valid kernel span " + std::to_string(span));
  }
  return (padded - span) / stride + 1;
}

kernels::ConvGeometry ConvSpec::geometry(const Dims& d) const {
  kernels::ConvGeometry g;
  g.batch = d[0];
  g.in_channels = d[1];
  g.height = d[2];
  g.width = d[3];
  g.out_channels = out_channels;
  g.kernel = kernel;
  g.stride = stride;
  g.dilation = dilation;
  g.groups = groups;
  g.pad = pad();
  g.out_height = output_extent(d[2]);
  g.out_width = output_extent(d[3]);
  return g;
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
              const Tensor& bias) {
  spec.validate();
  if (input.rank() != 4) {
    throw ShapeError("conv2d: input must be rank-4, got " + to_string(input.dims()));
  }
  if (input.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(input.dim(1)) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  if (weights.dims() != spec.weight_dims()) {
    throw ShapeError("conv2d: weight dims " + to_string(weights.dims()) + ", expected " +
                     to_string(spec.weight_dims()));
  }
  if (spec.bias != bias.defined() ||
      (bias.defined() && bias.dims() != Dims{spec.out_channels})) {
    throw ShapeError("conv2d: bias does not match spec");
  }
  const kernels::ConvGeometry g = spec.geometry(input.dims());
  std::vector<float> out(g.output_size());
  kernels::conv2d_forward(g, input.data(), weights.data(),
                          bias.defined() ? bias.data() : std::span<const float>{}, out);
  std::vector<Tensor> inputs{input, weights};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(
      {g.batch, g.out_channels, g.out_height, g.out_width}, std::move(out), "conv2d",
      std::move(inputs), [g](const BackwardContext& ctx) {
        if (ctx.wants(0)) kernels::conv2d_backward_input(g, ctx.grad_output, ctx.input(1), ctx.grad(0));
        if (ctx.wants(1)) kernels::conv2d_backward_weight(g, ctx.grad_output, ctx.input(0), ctx.grad(1));
        if (ctx.inputs.size() > 2 && ctx.wants(2)) {
          kernels::conv2d_backward_bias(g, ctx.grad_output, ctx.grad(2));
        }
      });
}

BatchNormState BatchNormState::create(std::size_t channels, float momentum, float eps) {
  if (!(eps > 0.0f)) throw ConfigError("batch_norm: eps must be positive");
  BatchNormState s;
  s.gamma = Tensor::full({channels}, 1.0f, true);
  s.beta = Tensor::zeros({channels}, true);
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0f);
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

Tensor batch_norm(const Tensor& input, BatchNormState& state, Mode mode) {
  if (input.rank() != 4) {
    throw ShapeError("batch_norm: input must be rank-4, got " + to_string(input.dims()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (c != state.channels()) {
    throw ShapeError("batch_norm: channel mismatch, input has " + std::to_string(c) +
                     ", state has " + std::to_string(state.channels()));
  }
  const std::size_t m = n * hw;
  if (mode == Mode::train && m < 2) {
    throw ShapeError("batch_norm: train mode needs N*H*W >= 2, got " + std::to_string(m));
  }
  auto x = input.data();
  auto gamma = state.gamma.data();
  auto beta = state.beta.data();
  std::vector<float> xhat(input.numel());
  std::vector<float> inv_std(c);
  std::vector<float> out(input.numel());

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (mode == Mode::train) {
      double acc = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) acc += x[(b * c + ch) * hw + i];
      mu = acc / double(m);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = x[(b * c + ch) * hw + i] - mu;
          sq += d * d;
        }
      var = sq / double(m);
    } else {
      mu = state.running_mean.data()[ch];
      var = state.running_var.data()[ch];
    }
    const double is = 1.0 / std::sqrt(var + double(state.eps));
    inv_std[ch] = static_cast<float>(is);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (b * c + ch) * hw + i;
        const double xh = (x[k] - mu) * is;
        xhat[k] = static_cast<float>(xh);
        out[k] = static_cast<float>(gamma[ch] * xh + beta[ch]);
      }
    if (mode == Mode::train) {
      auto rm = state.running_mean.mutable_data();
      auto rv = state.running_var.mutable_data();
      const double mom = state.momentum;
      rm[ch] = static_cast<float>((1.0 - mom) * mu + mom * rm[ch]);
      rv[ch] = static_cast<float>((1.0 - mom) * var + mom * rv[ch]);
    }
  }

  const bool train = mode == Mode::train;
  return detail::make_result(
      input.dims(), std::move(out), "batch_norm", {input, state.gamma, state.beta},
      [n, c, hw, m, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const BackwardContext& ctx) {
        const auto go = ctx.grad_output;
        auto gamma = ctx.input(1);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = (b * c + ch) * hw + i;
              sum_dy += go[k];
              sum_dy_xhat += double(go[k]) * xhat[k];
            }
          if (ctx.wants(1)) ctx.grad(1)[ch] += static_cast<float>(sum_dy_xhat);
          if (ctx.wants(2)) ctx.grad(2)[ch] += static_cast<float>(sum_dy);
          if (!ctx.wants(0)) continue;
          auto gx = ctx.grad(0);
          const double scale_ = double(gamma[ch]) * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = (b * c + ch) * hw + i;
              if (train) {
                gx[k] += static_cast<float>(
                    scale_ * (go[k] - sum_dy / double(m) - xhat[k] * sum_dy_xhat / double(m)));
              } else {
                gx[k] += static_cast<float>(scale_ * go[k]);
              }
            }
        }
      });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() != 4) {
    throw ShapeError("global_avg_pool: input must be rank-4, got " + to_string(input.dims()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  auto x = input.data();
  std::vector<float> out(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
    out[p] = static_cast<float>(acc / double(hw));
  }
  return detail::make_result({n, c}, std::move(out), "global_avg_pool", {input},
                             [n, c, hw](const BackwardContext& ctx) {
                               if (!ctx.wants(0)) return;
                               auto g = ctx.grad(0);
                               for (std::size_t p = 0; p < n * c; ++p) {
                                 const float share = ctx.grad_output[p] / static_cast<float>(hw);
                                 for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += share;
                               }
                             });
}

Tensor dropout(const Tensor& input, float rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0f && rate < 1.0f)) {
    throw UsageError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0f) return input;
  const float keep_scale = 1.0f / (1.0f - rate);
  std::vector<float> mask(input.numel());
  std::vector<float> out(input.numel());
  auto x = input.data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : 0.0f;
    out[i] = x[i] * mask[i];
  }
  return detail::make_result(input.dims(), std::move(out), "dropout", {input},
                             [mask = std::move(mask)](const BackwardContext& ctx) {
                               if (!ctx.wants(0)) return;
                               auto g = ctx.grad(0);
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += ctx.grad_output[i] * mask[i];
                             });
}

std::vector<float> softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax: logits must be rank-2, got " + to_string(logits.dims()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto z = logits.data();
  std::vector<float> p(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = z.data() + r * k;
    const float mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(double(row[j]) - mx);
    for (std::size_t j = 0; j < k; ++j)
      p[r * k + j] = static_cast<float>(std::exp(double(row[j]) - mx) / total);
  }
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: logits must be rank-2, got " +
                     to_string(logits.dims()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= k) {
      throw UsageError("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                       " out of range [0, " + std::to_string(k) + ")");
    }
  }
  auto z = logits.data();
  std::vector<float> prob(n * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = z.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(double(row[j]) - mx);
    const double lse = mx + std::log(total);
    loss += lse - row[labels[r]];
    for (std::size_t j = 0; j < k; ++j)
      prob[r * k + j] = static_cast<float>(std::exp(double(row[j]) - lse));
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  Tensor out = detail::make_result(
      {1}, {static_cast<float>(loss / double(n))}, "softmax_cross_entropy", {logits},
      [n, k, prob = std::move(prob), lab = std::move(lab)](const BackwardContext& ctx) {
        if (!ctx.wants(0)) return;
        auto g = ctx.grad(0);
        const double go = ctx.grad_output[0] / double(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < k; ++j) {
            const double onehot = j == lab[r] ? 1.0 : 0.0;
            g[r * k + j] += static_cast<float>(go * (prob[r * k + j] - onehot));
          }
      });
  out.impl()->exact = loss / double(n);
  return out;
}

}  // namespace msafeb
