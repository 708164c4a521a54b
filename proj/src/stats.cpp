#include "msafeb/stats.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "msafeb/errors.hpp"

namespace msafeb {

double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw UsageError("mean of an empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / double(xs.size());
}

double population_sd(std::span<const double> xs) {
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(xs.size()));
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw UsageError("need >= 2 observations");
  // Exactly zero for a constant sample, whatever the rounding of its mean.
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; })) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / double(xs.size() - 1);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw UsageError("need >= 2 observations per sample, got " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  for (auto xs : {a, b})
    for (double x : xs)
      if (!std::isfinite(x)) throw NumericError("welch: non-finite observation");

  const double se_a = sample_variance(a) / double(a.size());
  const double se_b = sample_variance(b) / double(b.size());
  const double se2 = se_a + se_b;
  if (se2 == 0.0) throw UsageError("degenerate samples: both variances are zero");

  WelchResult r;
  r.t_statistic = (mean_of(a) - mean_of(b)) / std::sqrt(se2);
  r.degrees_of_freedom = se2 * se2 / (se_a * se_a / double(a.size() - 1) +
                                      se_b * se_b / double(b.size() - 1));
  // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2).
  const double df = r.degrees_of_freedom;
  const double x = df / (df + r.t_statistic * r.t_statistic);
  r.p_value = boost::math::ibeta(df / 2.0, 0.5, x);
  return r;
}

std::string format_mean_sd(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.3f", mean * 100.0, sd);
  return buf;
}

}  // namespace msafeb
