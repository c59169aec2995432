#ifndef SDOT_LINALG_HPP
#define SDOT_LINALG_HPP

// Symmetric spectral helpers. Every matrix handled here has the all-ones
// direction in its kernel (or is meant to act on its orthogonal complement),
// so "restricted" quantities deflate that direction before eigen-analysis.

#include "sdot/types.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

namespace sdot {

inline constexpr double kPinvRelThreshold = 1e-10;

/// P_J = I - (1/J) 11^T.
template <typename Scalar = double>
Mat<Scalar> zero_mean_projector(Index J) {
  return Mat<Scalar>::Identity(J, J) - Mat<Scalar>::Constant(J, J, Scalar(1) / Scalar(J));
}

/// Spectrum of a symmetric matrix restricted to the orthogonal complement of
/// the all-ones vector, ascending. Size J-1 (empty for J = 1).
template <typename Derived>
Vec<typename Derived::Scalar> restricted_eigenvalues(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Index J = m.rows();
  if (J <= 1) return Vec<Scalar>(0);
  const Mat<Scalar> p = zero_mean_projector<Scalar>(J);
  Mat<Scalar> a = p * m.derived() * p;
  a = Scalar(0.5) * (a + a.transpose()).eval();
  // Push the kernel direction above the rest of the spectrum, then drop it.
  const Scalar shift = Scalar(1) + Scalar(2) * a.norm();
  a.array() += shift / Scalar(J);
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().head(J - 1);
}

/// Smallest eigenvalue over <1>^perp; +inf when J = 1 (vacuous).
template <typename Derived>
typename Derived::Scalar restricted_min_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const auto ev = restricted_eigenvalues(m);
  if (ev.size() == 0) return std::numeric_limits<Scalar>::infinity();
  return ev.minCoeff();
}

/// Applies f to the eigenvalues of a symmetric matrix that exceed
/// rel_threshold * max|lambda|; eigenvalues below it map to zero.
template <typename Derived, typename F>
Mat<typename Derived::Scalar> spectral_map(const Eigen::MatrixBase<Derived>& m, F f,
                                           double rel_threshold = kPinvRelThreshold) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> sym = Scalar(0.5) * (m.derived() + m.derived().transpose());
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(sym);
  const Vec<Scalar>& lambda = es.eigenvalues();
  const Scalar cut = Scalar(rel_threshold) * lambda.cwiseAbs().maxCoeff();
  Vec<Scalar> mapped(lambda.size());
  for (Index i = 0; i < lambda.size(); ++i) {
    mapped(i) = lambda(i) > cut ? f(lambda(i)) : Scalar(0);
  }
  return es.eigenvectors() * mapped.asDiagonal() * es.eigenvectors().transpose();
}

/// Moore-Penrose inverse of a symmetric PSD matrix.
template <typename Derived>
Mat<typename Derived::Scalar> pinv_psd(const Eigen::MatrixBase<Derived>& m,
                                       double rel_threshold = kPinvRelThreshold) {
  using Scalar = typename Derived::Scalar;
  return spectral_map(m, [](Scalar l) { return Scalar(1) / l; }, rel_threshold);
}

/// Square root of the Moore-Penrose inverse, A^{-1/2}.
template <typename Derived>
Mat<typename Derived::Scalar> pinv_sqrt_psd(const Eigen::MatrixBase<Derived>& m,
                                            double rel_threshold = kPinvRelThreshold) {
  using Scalar = typename Derived::Scalar;
  return spectral_map(m, [](Scalar l) { return Scalar(1) / std::sqrt(l); }, rel_threshold);
}

template <typename Derived>
Mat<typename Derived::Scalar> sqrt_psd(const Eigen::MatrixBase<Derived>& m,
                                       double rel_threshold = kPinvRelThreshold) {
  using Scalar = typename Derived::Scalar;
  return spectral_map(m, [](Scalar l) { return std::sqrt(l); }, rel_threshold);
}

/// Number of eigenvalues above rel_threshold * max|lambda|.
template <typename Derived>
Index numerical_rank(const Eigen::MatrixBase<Derived>& m, double rel_threshold = kPinvRelThreshold) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> sym = Scalar(0.5) * (m.derived() + m.derived().transpose());
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(sym, Eigen::EigenvaluesOnly);
  const auto& lambda = es.eigenvalues();
  if (lambda.size() == 0) return 0;
  const Scalar cut = Scalar(rel_threshold) * lambda.cwiseAbs().maxCoeff();
  return (lambda.array() > cut).count();
}

/// Operator 2-norm of a symmetric matrix.
template <typename Derived>
typename Derived::Scalar sym_norm2(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> sym = Scalar(0.5) * (m.derived() + m.derived().transpose());
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace sdot

#endif  // SDOT_LINALG_HPP
