#pragma once

#include <span>
#include <string>

namespace msafeb {

struct WelchResult {
  double t_statistic = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 1.0;  // two-sided
};

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom. Throws UsageError for samples with fewer than two values and
/// "degenerate samples" when both variances are zero.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

double mean_of(std::span<const double> xs);
/// Divides by n.
double population_sd(std::span<const double> xs);
/// Divides by n - 1.
double sample_variance(std::span<const double> xs);

/// "95.85 ± 0.003": mean as a percentage with two decimals, SD as a
/// fraction with three.
std::string format_mean_sd(double mean, double sd);

}  // namespace msafeb
