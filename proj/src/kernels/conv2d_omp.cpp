#include <algorithm>
#include <cstdint>
#include <memory>
#include <vector>

#include "msafeb/kernels.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

// The convolution is lowered to matrix products over an unfolded input
// ("im2col"): for image n and group g, col is (cig * k * k) x (out_h * out_w)
// with zeros where a tap falls into the padding. Every output element is
// produced by exactly one task, summing in a fixed order.

namespace msafeb::kernels {

namespace {

struct Range {
  std::size_t lo = 0, hi = 0;  // [lo, hi)
};

// Output positions o whose tap o*stride + offset - pad lands inside
// [0, extent).
inline Range valid_outputs(std::size_t extent, std::size_t out_extent, std::size_t stride,
                           std::size_t offset, std::size_t pad) {
  const auto first = static_cast<std::int64_t>(pad) - static_cast<std::int64_t>(offset);
  const auto last = static_cast<std::int64_t>(extent) - 1 + first;
  if (last < 0) return {};
  const auto s = static_cast<std::int64_t>(stride);
  const std::int64_t lo = first <= 0 ? 0 : (first + s - 1) / s;
  const std::int64_t hi = std::min<std::int64_t>(last / s + 1, static_cast<std::int64_t>(out_extent));
  if (hi <= lo) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline std::size_t col_rows(const ConvGeometry& g) {
  return g.in_per_group() * g.kernel * g.kernel;
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

// Unfolds channels [grp*cig, (grp+1)*cig) of image n into col.
void im2col(const ConvGeometry& g, const float* image, std::size_t grp, float* col) {
  const std::size_t cig = g.in_per_group(), k = g.kernel, s = g.stride;
  const std::size_t in_plane = g.height * g.width;
  const std::size_t out_plane = g.out_height * g.out_width;
  std::fill(col, col + col_rows(g) * out_plane, 0.0f);
  for (std::size_t ci = 0; ci < cig; ++ci) {
    const float* src = image + (grp * cig + ci) * in_plane;
    for (std::size_t ky = 0; ky < k; ++ky) {
      const Range yr = valid_outputs(g.height, g.out_height, s, ky * g.dilation, g.pad);
      for (std::size_t kx = 0; kx < k; ++kx) {
        const Range xr = valid_outputs(g.width, g.out_width, s, kx * g.dilation, g.pad);
        float* row = col + ((ci * k + ky) * k + kx) * out_plane;
        if (xr.hi <= xr.lo) continue;
        const std::size_t len = xr.hi - xr.lo;
        for (std::size_t oy = yr.lo; oy < yr.hi; ++oy) {
          const std::size_t iy = oy * s + ky * g.dilation - g.pad;
          const std::size_t ix0 = xr.lo * s + kx * g.dilation - g.pad;
          const float* x = src + iy * g.width + ix0;
          float* d = row + oy * g.out_width + xr.lo;
          if (s == 1) {
            std::copy_n(x, len, d);
          } else {
            for (std::size_t j = 0; j < len; ++j) d[j] = x[j * s];
          }
        }
      }
    }
  }
}

// Scatter-adds col back onto channels of group grp of one image.
void col2im_add(const ConvGeometry& g, const float* col, std::size_t grp, float* image) {
  const std::size_t cig = g.in_per_group(), k = g.kernel, s = g.stride;
  const std::size_t in_plane = g.height * g.width;
  const std::size_t out_plane = g.out_height * g.out_width;
  for (std::size_t ci = 0; ci < cig; ++ci) {
    float* dst = image + (grp * cig + ci) * in_plane;
    for (std::size_t ky = 0; ky < k; ++ky) {
      const Range yr = valid_outputs(g.height, g.out_height, s, ky * g.dilation, g.pad);
      for (std::size_t kx = 0; kx < k; ++kx) {
        const Range xr = valid_outputs(g.width, g.out_width, s, kx * g.dilation, g.pad);
        if (xr.hi <= xr.lo) continue;
        const float* row = col + ((ci * k + ky) * k + kx) * out_plane;
        const std::size_t len = xr.hi - xr.lo;
        for (std::size_t oy = yr.lo; oy < yr.hi; ++oy) {
          const std::size_t iy = oy * s + ky * g.dilation - g.pad;
          const std::size_t ix0 = xr.lo * s + kx * g.dilation - g.pad;
          float* __restrict__ x = dst + iy * g.width + ix0;
          const float* __restrict__ c = row + oy * g.out_width + xr.lo;
          if (s == 1) {
#pragma omp simd
            for (std::size_t j = 0; j < len; ++j) x[j] += c[j];
          } else {
            for (std::size_t j = 0; j < len; ++j) x[j * s] += c[j];
          }
        }
      }
    }
  }
}

// dst[0:len] = init + sum_r w[r] * rows[r][0:len], four rows per pass.
inline void combine_rows(float* __restrict__ dst, float init, const float* __restrict__ w,
                         const float* __restrict__ rows, std::size_t n_rows, std::size_t len) {
  std::size_t r = 0;
  if (n_rows >= 4) {
    const float w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3];
    const float* __restrict__ c0 = rows;
    const float* __restrict__ c1 = c0 + len;
    const float* __restrict__ c2 = c1 + len;
    const float* __restrict__ c3 = c2 + len;
#pragma omp simd
    for (std::size_t j = 0; j < len; ++j) {
      dst[j] = init + (w0 * c0[j] + w1 * c1[j] + w2 * c2[j] + w3 * c3[j]);
    }
    r = 4;
  } else {
    std::fill(dst, dst + len, init);
  }
  for (; r + 4 <= n_rows; r += 4) {
    const float w0 = w[r], w1 = w[r + 1], w2 = w[r + 2], w3 = w[r + 3];
    const float* __restrict__ c0 = rows + r * len;
    const float* __restrict__ c1 = c0 + len;
    const float* __restrict__ c2 = c1 + len;
    const float* __restrict__ c3 = c2 + len;
#pragma omp simd
    for (std::size_t j = 0; j < len; ++j) {
      dst[j] += w0 * c0[j] + w1 * c1[j] + w2 * c2[j] + w3 * c3[j];
    }
  }
  for (; r < n_rows; ++r) {
    const float wr = w[r];
    const float* __restrict__ c = rows + r * len;
#pragma omp simd
    for (std::size_t j = 0; j < len; ++j) dst[j] += wr * c[j];
  }
}

// Unfolded input for every (image, group), or views of the input itself
// for pointwise convolutions.
class Unfolded {
 public:
  Unfolded(const ConvGeometry& g, std::span<const float> in) : g_(g), in_(in) {
    if (is_pointwise(g)) return;
    const std::size_t block = col_rows(g) * g.out_height * g.out_width;
    storage_.reset(new float[g.batch * g.groups * block]);
    const auto tasks = static_cast<std::int64_t>(g.batch * g.groups);
#pragma omp parallel for schedule(static)
    for (std::int64_t t = 0; t < tasks; ++t) {
      const std::size_t n = static_cast<std::size_t>(t) / g.groups;
      const std::size_t grp = static_cast<std::size_t>(t) % g.groups;
      im2col(g, in.data() + n * g.in_channels * g.height * g.width, grp,
             storage_.get() + static_cast<std::size_t>(t) * block);
    }
  }

  const float* block(std::size_t n, std::size_t grp) const {
    if (!storage_) {
      return in_.data() + (n * g_.in_channels + grp * g_.in_per_group()) * g_.height * g_.width;
    }
    return storage_.get() + (n * g_.groups + grp) * col_rows(g_) * g_.out_height * g_.out_width;
  }

 private:
  const ConvGeometry& g_;
  std::span<const float> in_;
  std::unique_ptr<float[]> storage_;  // uninitialized; im2col writes every element
};

}  // namespace

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void conv2d_forward(const ConvGeometry& g, std::span<const float> in,
                    std::span<const float> w, std::span<const float> bias,
                    std::span<float> out) {
  const std::size_t cog = g.out_per_group();
  const std::size_t rows = col_rows(g);
  const std::size_t out_plane = g.out_height * g.out_width;
  const Unfolded cols(g, in);
  const auto planes = static_cast<std::int64_t>(g.batch * g.out_channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / g.out_channels;
    const std::size_t oc = static_cast<std::size_t>(p) % g.out_channels;
    float* dst = out.data() + static_cast<std::size_t>(p) * out_plane;
    const float b0 = bias.empty() ? 0.0f : bias[oc];
    combine_rows(dst, b0, w.data() + oc * rows, cols.block(n, oc / cog), rows, out_plane);
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_out,
                           std::span<const float> w, std::span<float> grad_in) {
  const std::size_t cog = g.out_per_group();
  const std::size_t rows = col_rows(g);
  const std::size_t out_plane = g.out_height * g.out_width;
  const std::size_t in_image = g.in_channels * g.height * g.width;
  const auto tasks = static_cast<std::int64_t>(g.batch * g.groups);

#pragma omp parallel
  {
    std::vector<float> gcol(rows * out_plane);
    std::vector<float> wt(cog);
#pragma omp for schedule(static)
    for (std::int64_t t = 0; t < tasks; ++t) {
      const std::size_t n = static_cast<std::size_t>(t) / g.groups;
      const std::size_t grp = static_cast<std::size_t>(t) % g.groups;
      const float* go = grad_out.data() + (n * g.out_channels + grp * cog) * out_plane;
      // gcol[r] = sum over the group's output channels of w[oc][r] * grad_out[oc].
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < cog; ++o) wt[o] = w[(grp * cog + o) * rows + r];
        combine_rows(gcol.data() + r * out_plane, 0.0f, wt.data(), go, cog, out_plane);
      }
      float* image = grad_in.data() + n * in_image;
      if (is_pointwise(g)) {
        float* base = image + grp * g.in_per_group() * out_plane;
        for (std::size_t i = 0; i < rows * out_plane; ++i) base[i] += gcol[i];
      } else {
        col2im_add(g, gcol.data(), grp, image);
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const float> grad_out,
                            std::span<const float> in, std::span<float> grad_w) {
  const std::size_t cog = g.out_per_group();
  const std::size_t rows = col_rows(g);
  const std::size_t out_plane = g.out_height * g.out_width;
  const Unfolded cols(g, in);
  const auto out_channels = static_cast<std::int64_t>(g.out_channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t oc_i = 0; oc_i < out_channels; ++oc_i) {
    const auto oc = static_cast<std::size_t>(oc_i);
    const std::size_t grp = oc / cog;
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        const float* __restrict__ go = grad_out.data() + (n * g.out_channels + oc) * out_plane;
        const float* __restrict__ c = cols.block(n, grp) + r * out_plane;
        float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
        for (std::size_t j = 0; j < out_plane; ++j) acc += go[j] * c[j];
        total += acc;
      }
      grad_w[oc * rows + r] += static_cast<float>(total);
    }
  }
}

void conv2d_backward_bias(const ConvGeometry& g, std::span<const float> grad_out,
                          std::span<float> grad_b) {
  const std::size_t plane = g.out_height * g.out_width;
  const auto out_channels = static_cast<std::int64_t>(g.out_channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t oc_i = 0; oc_i < out_channels; ++oc_i) {
    const auto oc = static_cast<std::size_t>(oc_i);
    double acc = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const float* src = grad_out.data() + (n * g.out_channels + oc) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    }
    grad_b[oc] += static_cast<float>(acc);
  }
}

}  // namespace msafeb::kernels
