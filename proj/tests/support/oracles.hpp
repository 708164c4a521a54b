#pragma once

// Reference computations and input generators shared by the test suites.
// The oracles never call into the library's numerical code: each is a direct
// transcription of the defining formula, evaluated in double or long double.

#include <array>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "msafeb/image.hpp"
#include "msafeb/rng.hpp"
#include "msafeb/tensor.hpp"

namespace oracle {

inline std::vector<float> random_values(msafeb::Rng& rng, std::size_t n, double lo = -1.0,
                                        double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

/// Values bounded away from zero: magnitude in [lo, hi] with a random sign.
inline std::vector<float> away_from_zero(msafeb::Rng& rng, std::size_t n, double lo = 0.1,
                                         double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>((rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(lo, hi));
  return v;
}

/// Dyadic values k / 1024 in [-1, 1]: sums of a few hundred are exact in
/// double, so reductions over them are order-independent.
inline std::vector<float> dyadic_values(msafeb::Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>((double(rng.below(2049)) - 1024.0) / 1024.0);
  return v;
}

inline std::size_t extent(msafeb::Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline msafeb::Tensor random_tensor(msafeb::Rng& rng, msafeb::Dims dims, double lo = -1.0,
                                    double hi = 1.0) {
  const std::size_t n = msafeb::product(dims);
  return msafeb::Tensor::create(std::move(dims), random_values(rng, n, lo, hi));
}

/// Weighted sum with fixed random weights of magnitude ~1/sqrt(n): a scalar
/// objective of order one that exercises every output element.
inline msafeb::Tensor probe_sum(const msafeb::Tensor& y, std::uint64_t seed) {
  msafeb::Rng rng(seed);
  const double scale = 1.0 / std::sqrt(double(y.numel()));
  auto w = random_values(rng, y.numel(), -scale, scale);
  return msafeb::sum(msafeb::mul(y, msafeb::Tensor::create(y.dims(), std::move(w))));
}

struct ConvParams {
  std::size_t kernel = 3, stride = 1, dilation = 1, groups = 1;
  bool same = true;
};

inline double max_abs_diff(std::span<const float> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(double(a[i]) - b[i]));
  return worst;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(double(a[i]) - double(b[i])));
  return worst;
}

inline std::size_t conv_out_extent(std::size_t in, const ConvParams& p) {
  const std::size_t pad = p.same ? p.dilation * (p.kernel - 1) / 2 : 0;
  const std::size_t span = p.dilation * (p.kernel - 1) + 1;
  if (in + 2 * pad < span) return 0;
  return (in + 2 * pad - span) / p.stride + 1;
}

/// Direct nested-loop cross-correlation (NCHW, weights O x C/g x k x k).
inline std::vector<double> conv_direct(std::span<const float> x, std::size_t n, std::size_t c,
                                       std::size_t h, std::size_t w, std::span<const float> wt,
                                       std::span<const float> bias, std::size_t out_c,
                                       const ConvParams& p) {
  const std::size_t pad = p.same ? p.dilation * (p.kernel - 1) / 2 : 0;
  const std::size_t oh = conv_out_extent(h, p), ow = conv_out_extent(w, p);
  const std::size_t cg = c / p.groups, og = out_c / p.groups, k = p.kernel;
  std::vector<double> out(n * out_c * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out_c; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = bias.empty() ? 0.0 : bias[o];
          const std::size_t g = o / og;
          for (std::size_t ci = 0; ci < cg; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = long(y * p.stride + ky * p.dilation) - long(pad);
                const long ix = long(xo * p.stride + kx * p.dilation) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
                acc += double(wt[((o * cg + ci) * k + ky) * k + kx]) *
                       double(x[((b * c + g * cg + ci) * h + std::size_t(iy)) * w + std::size_t(ix)]);
              }
          out[((b * out_c + o) * oh + y) * ow + xo] = acc;
        }
  return out;
}

/// Student-t density.
inline long double t_density(long double x, long double df) {
  const long double logc = std::lgamma((df + 1.0L) / 2.0L) - std::lgamma(df / 2.0L) -
                           0.5L * std::log(df * std::numbers::pi_v<long double>);
  return std::exp(logc - (df + 1.0L) / 2.0L * std::log1p(x * x / df));
}

/// Two-sided tail P(|T| >= |t|) = 1 - 2 * integral_0^|t| density, by
/// composite Simpson with a fixed fine grid.
inline double t_two_sided_p(double t, double df, int intervals = 200000) {
  const long double a = 0.0L, b = std::fabs(static_cast<long double>(t));
  if (b == 0.0L) return 1.0;
  const long double h = (b - a) / intervals;
  long double s = t_density(a, df) + t_density(b, df);
  for (int i = 1; i < intervals; ++i) {
    s += (i % 2 ? 4.0L : 2.0L) * t_density(a + i * h, df);
  }
  const long double integral = s * h / 3.0L;
  return static_cast<double>(1.0L - 2.0L * integral);
}

struct WelchOracle {
  double t = 0.0, df = 0.0, p = 1.0;
};

inline WelchOracle welch(std::span<const double> a, std::span<const double> b) {
  auto moments = [](std::span<const double> xs, long double& mean, long double& var) {
    mean = 0.0L;
    for (double x : xs) mean += x;
    mean /= xs.size();
    var = 0.0L;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= (xs.size() - 1);
  };
  long double ma, va, mb, vb;
  moments(a, ma, va);
  moments(b, mb, vb);
  const long double sa = va / a.size(), sb = vb / b.size();
  WelchOracle r;
  r.t = static_cast<double>((ma - mb) / std::sqrt(sa + sb));
  r.df = static_cast<double>((sa + sb) * (sa + sb) /
                             (sa * sa / (a.size() - 1) + sb * sb / (b.size() - 1)));
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

/// Adam with coupled L2, written out in long double.
struct AdamOracle {
  long double b1 = 0.9L, b2 = 0.999L, eps = 1e-8L;
  std::vector<long double> m, v;
  int t = 0;

  void step(std::vector<long double>& p, const std::vector<long double>& g, long double lr,
            long double wd) {
    if (m.empty()) {
      m.assign(p.size(), 0.0L);
      v.assign(p.size(), 0.0L);
    }
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const long double gi = g[i] + wd * p[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const long double mh = m[i] / (1 - std::pow(b1, (long double)t));
      const long double vh = v[i] / (1 - std::pow(b2, (long double)t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

/// P(lo <= X <= hi) for X ~ Binomial(n, p), summed exactly in log space.
inline double binomial_interval(std::size_t n, double p, std::size_t lo, std::size_t hi) {
  long double total = 0.0L;
  for (std::size_t k = lo; k <= hi && k <= n; ++k) {
    const long double lc = std::lgamma(n + 1.0L) - std::lgamma(k + 1.0L) - std::lgamma(n - k + 1.0L);
    total += std::exp(lc + k * std::log((long double)p) + (n - k) * std::log1p(-(long double)p));
  }
  return static_cast<double>(total);
}

/// Doubled-angle mean of 3x3 Sobel gradients over the luma: a 2-vector
/// whose direction encodes the dominant texture orientation.
inline std::array<double, 2> orientation_feature(const msafeb::Image& img) {
  const std::size_t w = img.width, h = img.height;
  std::vector<double> g(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    g[i] = 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] + 0.114 * img.pixels[3 * i + 2];
  }
  auto at = [&](std::size_t x, std::size_t y) { return g[y * w + x]; };
  double c2 = 0.0, s2 = 0.0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
      const double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
      c2 += gx * gx - gy * gy;
      s2 += 2 * gx * gy;
    }
  const double norm = std::hypot(c2, s2);
  if (norm == 0.0) return {0.0, 0.0};
  return {c2 / norm, s2 / norm};
}

}  // namespace oracle
