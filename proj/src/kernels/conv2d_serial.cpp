#include "msafeb/kernels.hpp"

#include <cstdint>

namespace msafeb::kernels::serial {

namespace {

// Input coordinate sampled by output coordinate o and tap t; negative or
// >= extent means the tap lands in the zero padding.
inline std::int64_t tap(const ConvGeometry& g, std::size_t o, std::size_t t) {
  return static_cast<std::int64_t>(o * g.stride + t * g.dilation) -
         static_cast<std::int64_t>(g.pad);
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const float> in,
                    std::span<const float> w, std::span<const float> bias,
                    std::span<float> out) {
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group(), k = g.kernel;
  const auto H = static_cast<std::int64_t>(g.height), W = static_cast<std::int64_t>(g.width);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const std::size_t grp = oc / cog;
      for (std::size_t oy = 0; oy < g.out_height; ++oy)
        for (std::size_t ox = 0; ox < g.out_width; ++ox) {
          float acc = bias.empty() ? 0.0f : bias[oc];
          for (std::size_t ci = 0; ci < cig; ++ci) {
            const std::size_t ic = grp * cig + ci;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const auto iy = tap(g, oy, ky);
              if (iy < 0 || iy >= H) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto ix = tap(g, ox, kx);
                if (ix < 0 || ix >= W) continue;
                acc += w[((oc * cig + ci) * k + ky) * k + kx] *
                       in[((n * g.in_channels + ic) * g.height + iy) * g.width + ix];
              }
            }
          }
          out[((n * g.out_channels + oc) * g.out_height + oy) * g.out_width + ox] = acc;
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_out,
                           std::span<const float> w, std::span<float> grad_in) {
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group(), k = g.kernel;
  const auto H = static_cast<std::int64_t>(g.height), W = static_cast<std::int64_t>(g.width);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const std::size_t grp = oc / cog;
      for (std::size_t oy = 0; oy < g.out_height; ++oy)
        for (std::size_t ox = 0; ox < g.out_width; ++ox) {
          const float go =
              grad_out[((n * g.out_channels + oc) * g.out_height + oy) * g.out_width + ox];
          for (std::size_t ci = 0; ci < cig; ++ci) {
            const std::size_t ic = grp * cig + ci;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const auto iy = tap(g, oy, ky);
              if (iy < 0 || iy >= H) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto ix = tap(g, ox, kx);
                if (ix < 0 || ix >= W) continue;
                grad_in[((n * g.in_channels + ic) * g.height + iy) * g.width + ix] +=
                    go * w[((oc * cig + ci) * k + ky) * k + kx];
              }
            }
          }
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const float> grad_out,
                            std::span<const float> in, std::span<float> grad_w) {
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group(), k = g.kernel;
  const auto H = static_cast<std::int64_t>(g.height), W = static_cast<std::int64_t>(g.width);
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    const std::size_t grp = oc / cog;
    for (std::size_t ci = 0; ci < cig; ++ci) {
      const std::size_t ic = grp * cig + ci;
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t oy = 0; oy < g.out_height; ++oy) {
              const auto iy = tap(g, oy, ky);
              if (iy < 0 || iy >= H) continue;
              for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                const auto ix = tap(g, ox, kx);
                if (ix < 0 || ix >= W) continue;
                acc += double(grad_out[((n * g.out_channels + oc) * g.out_height + oy) *
                                           g.out_width + ox]) *
                       in[((n * g.in_channels + ic) * g.height + iy) * g.width + ix];
              }
            }
          grad_w[((oc * cig + ci) * k + ky) * k + kx] += static_cast<float>(acc);
        }
    }
  }
}

void conv2d_backward_bias(const ConvGeometry& g, std::span<const float> grad_out,
                          std::span<float> grad_b) {
  const std::size_t plane = g.out_height * g.out_width;
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    double acc = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t i = 0; i < plane; ++i)
        acc += grad_out[(n * g.out_channels + oc) * plane + i];
    grad_b[oc] += static_cast<float>(acc);
  }
}

}  // namespace msafeb::kernels::serial
