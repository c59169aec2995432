#ifndef SDOT_MEASURES_HPP
#define SDOT_MEASURES_HPP

#include "sdot/types.hpp"

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

namespace sdot {

/// Finitely supported probability measure: one point per row of `points`.
/// Used both for the target nu and for discrete sources mu.
class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;
  /// Throws Error if weights are not a strictly positive simplex, if the
  /// counts disagree, or if the measure is empty.
  DiscreteMeasure(Matrix points, Vector weights);

  static DiscreteMeasure uniform(Matrix points);

  Index size() const { return points_.rows(); }
  Index dim() const { return points_.cols(); }
  const Matrix& points() const { return points_; }
  const Vector& weights() const { return weights_; }
  auto point(Index i) const { return points_.row(i).transpose(); }
  double min_weight() const { return weights_.minCoeff(); }
  double max_weight() const { return weights_.maxCoeff(); }

  /// Inverse-CDF draw of an atom index from a uniform u in [0, 1).
  Index index_for(double u) const;

 private:
  Matrix points_;
  Vector weights_;
  std::vector<double> cumulative_;
};

using TargetMeasure = DiscreteMeasure;

/// Mixture of isotropic Gaussians in R^d.
struct GaussianMixture {
  Vector weights;  // K
  Matrix means;    // K x d
  Vector stds;     // K

  void validate() const;
  Index dim() const { return means.cols(); }
};

/// Uniform law on [0,1]^d.
struct UniformHypercube {
  Index dim = 1;
};

using SourceMeasure = std::variant<DiscreteMeasure, GaussianMixture, UniformHypercube>;

Index dimension(const SourceMeasure& source);

/// Reproducible random stream keyed by (seed, stream id).
///
/// Engine: std::mt19937_64 seeded through std::seed_seq over the four 32-bit
/// words (seed_lo, seed_hi, stream_lo, stream_hi). Both algorithms are fixed by
/// the C++ standard, so the raw 64-bit sequence is identical on every
/// conforming platform. Uniforms use the top 53 bits; normals use Box-Muller.
/// Distinct stream ids give distinct engine states.
class SeededStream {
 public:
  SeededStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on (0, 1].
  double uniform_open_low() { return 1.0 - uniform(); }
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

/// Stream ids at or above this value are reserved for instance generation.
inline constexpr std::uint64_t kReservedStreamBase = std::uint64_t(1) << 63;

/// One i.i.d. draw from the source.
Vector sample(const SourceMeasure& source, SeededStream& stream);

/// Index of the drawn atom (discrete sources only).
Index sample_index(const DiscreteMeasure& source, SeededStream& stream);

/// n draws stacked as rows.
Matrix sample_n(const SourceMeasure& source, SeededStream& stream, Index n);

/// Uniform measure on the given rows; duplicates are kept as distinct atoms.
DiscreteMeasure empirical_of_samples(const Matrix& samples);

}  // namespace sdot

#endif  // SDOT_MEASURES_HPP
