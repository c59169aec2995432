#include "sdot/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace sdot {

namespace {

void check_simplex(const Vector& w, const char* what) {
  if (w.size() == 0) throw Error(ErrorCode::invalid_argument, std::string(what) + ": empty weights");
  for (Index i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w(i)) || w(i) <= 0.0) {
      throw Error(ErrorCode::invalid_argument,
                  std::string(what) + ": weight " + std::to_string(i) + " is not strictly positive");
    }
  }
  const double total = w.sum();
  // Accumulated rounding grows with the atom count; 1e-12 covers up to 1e4 atoms.
  const double tol = kSimplexTol * std::max(1.0, static_cast<double>(w.size()) / 1e4);
  if (std::abs(total - 1.0) > tol) {
    throw Error(ErrorCode::invalid_argument,
                std::string(what) + ": weights sum to " + std::to_string(total) + ", expected 1");
  }
}

std::vector<double> cumulative_of(const Vector& w) {
  std::vector<double> c(static_cast<std::size_t>(w.size()));
  double acc = 0.0;
  for (Index i = 0; i < w.size(); ++i) {
    acc += w(i);
    c[static_cast<std::size_t>(i)] = acc;
  }
  // Guard the last bucket against rounding so u < 1 always lands inside.
  c.back() = std::numeric_limits<double>::infinity();
  return c;
}

Index draw_from_cumulative(const std::vector<double>& cumulative, double u) {
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return static_cast<Index>(it - cumulative.begin());
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(Matrix points, Vector weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.rows() == 0) throw Error(ErrorCode::invalid_argument, "discrete measure: no atoms");
  if (points_.rows() != weights_.size()) {
    throw Error(ErrorCode::dimension_mismatch, "discrete measure: " + std::to_string(points_.rows()) +
                                                   " points but " + std::to_string(weights_.size()) +
                                                   " weights");
  }
  if (!points_.allFinite()) throw Error(ErrorCode::non_finite, "discrete measure: non-finite point");
  check_simplex(weights_, "discrete measure");
  cumulative_ = cumulative_of(weights_);
}

DiscreteMeasure DiscreteMeasure::uniform(Matrix points) {
  const Index n = points.rows();
  if (n == 0) throw Error(ErrorCode::invalid_argument, "discrete measure: no atoms");
  return DiscreteMeasure(std::move(points), Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

Index DiscreteMeasure::index_for(double u) const { return draw_from_cumulative(cumulative_, u); }

void GaussianMixture::validate() const {
  if (weights.size() != means.rows() || weights.size() != stds.size()) {
    throw Error(ErrorCode::dimension_mismatch, "gaussian mixture: component counts disagree");
  }
  if (means.cols() == 0) throw Error(ErrorCode::invalid_argument, "gaussian mixture: zero dimension");
  check_simplex(weights, "gaussian mixture");
  if ((stds.array() <= 0.0).any() || !stds.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "gaussian mixture: stds must be positive");
  }
}

Index dimension(const SourceMeasure& source) {
  return std::visit(
      [](const auto& s) -> Index {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, UniformHypercube>) {
          return s.dim;
        } else {
          return s.dim();
        }
      },
      source);
}

SeededStream::SeededStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

double SeededStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SeededStream::normal() {
  const double u1 = uniform_open_low();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Index sample_index(const DiscreteMeasure& source, SeededStream& stream) {
  return source.index_for(stream.uniform());
}

Vector sample(const SourceMeasure& source, SeededStream& stream) {
  return std::visit(
      [&stream](const auto& s) -> Vector {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, DiscreteMeasure>) {
          return s.point(sample_index(s, stream));
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          // Cumulative search inline: mixtures have a handful of components.
          const double u = stream.uniform();
          Index k = 0;
          double acc = s.weights(0);
          while (k + 1 < s.weights.size() && u >= acc) acc += s.weights(++k);
          Vector x(s.dim());
          for (Index i = 0; i < x.size(); ++i) x(i) = s.means(k, i) + s.stds(k) * stream.normal();
          return x;
        } else {
          Vector x(s.dim);
          for (Index i = 0; i < x.size(); ++i) x(i) = stream.uniform();
          return x;
        }
      },
      source);
}

Matrix sample_n(const SourceMeasure& source, SeededStream& stream, Index n) {
  Matrix out(n, dimension(source));
  for (Index i = 0; i < n; ++i) out.row(i) = sample(source, stream).transpose();
  return out;
}

DiscreteMeasure empirical_of_samples(const Matrix& samples) {
  if (samples.rows() == 0) throw Error(ErrorCode::invalid_argument, "empirical measure: no samples");
  return DiscreteMeasure::uniform(samples);
}

}  // namespace sdot
