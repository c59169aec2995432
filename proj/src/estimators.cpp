#include "sdot/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace sdot {

void RunningEstimators::update(double h_value) {
  ++n_;
  const double delta = h_value - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (h_value - mean_);
}

double RunningEstimators::w_hat() const {
  if (n_ == 0) return std::numeric_limits<double>::quiet_NaN();
  return -mean_;
}

double RunningEstimators::sigma2_hat() const {
  if (n_ == 0) return std::numeric_limits<double>::quiet_NaN();
  return std::max(0.0, m2_ / static_cast<double>(n_));
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double compensated_sum(std::span<const double> values) {
  double sum = 0.0;
  double c = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      c += (sum - t) + v;
    } else {
      c += (v - t) + sum;
    }
    sum = t;
  }
  return sum + c;
}

NormalitySummary normality_stats(std::span<const double> values, int bins) {
  if (values.size() < kMinNormalityReplications) {
    throw Error(ErrorCode::invalid_argument, "normality_stats: need at least 30 values, got " +
                                                 std::to_string(values.size()));
  }
  if (bins < 1) throw Error(ErrorCode::invalid_argument, "normality_stats: bins must be >= 1");
  NormalitySummary out;
  out.count = values.size();
  const double n = static_cast<double>(values.size());
  out.mean = compensated_sum(values) / n;
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - out.mean) * (values[i] - out.mean);
  out.stddev = std::sqrt(compensated_sum(sq) / (n - 1.0));

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = standard_normal_cdf(sorted[i]);
    ks = std::max({ks, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  out.ks_statistic = ks;

  double lo = sorted.front();
  double hi = sorted.back();
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  out.histogram.edges.resize(static_cast<std::size_t>(bins) + 1);
  out.histogram.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) out.histogram.edges[static_cast<std::size_t>(b)] = lo + b * width;
  out.histogram.edges.back() = hi;
  for (double v : sorted) {
    auto b = static_cast<std::ptrdiff_t>((v - lo) / width);
    b = std::clamp<std::ptrdiff_t>(b, 0, bins - 1);
    ++out.histogram.counts[static_cast<std::size_t>(b)];
  }
  return out;
}

}  // namespace sdot
