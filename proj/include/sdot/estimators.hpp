#ifndef SDOT_ESTIMATORS_HPP
#define SDOT_ESTIMATORS_HPP

#include "sdot/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sdot {

/// Running W_hat_n = -(1/n) sum h_k and sigma2_hat_n = (1/n) sum h_k^2 - W_hat_n^2,
/// where h_k = h(X_k, V_{k-1}) is recorded before the potential moves.
class RunningEstimators {
 public:
  void update(double h_value);

  std::int64_t count() const { return n_; }
  /// NaN before the first update.
  double w_hat() const;
  /// Clamped at zero; NaN before the first update.
  double sigma2_hat() const;

 private:
  std::int64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;  // sum of squared deviations from the running mean
};

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::int64_t> counts;
};

struct NormalitySummary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // unbiased (n - 1)
  Histogram histogram;
  /// Kolmogorov-Smirnov distance sup |F_n - Phi| against N(0, 1).
  double ks_statistic = 0.0;
};

inline constexpr std::size_t kMinNormalityReplications = 30;

/// Summary statistics of replicated terminal values. Throws when fewer than
/// 30 values are given.
NormalitySummary normality_stats(std::span<const double> values, int bins = 30);

/// Standard normal CDF.
double standard_normal_cdf(double x);

/// Sum with Neumaier compensation, in the given order.
double compensated_sum(std::span<const double> values);

}  // namespace sdot

#endif  // SDOT_ESTIMATORS_HPP
