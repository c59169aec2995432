#ifndef SDOT_OBJECTIVE_HPP
#define SDOT_OBJECTIVE_HPP

// Semi-dual objective of entropic semi-discrete OT:
//
//   h(x, v) = eps + eps * log sum_j nu_j exp((v_j - c(x, y_j)) / eps) - <v, nu>
//   grad h  = pi(x, v) - nu
//   hess h  = (diag(pi) - pi pi^T) / eps
//
// with pi the softmax row pi_j ∝ nu_j exp((v_j - c_j) / eps). Everything is
// evaluated through a max-shifted log-sum-exp.

#include "sdot/measures.hpp"
#include "sdot/types.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace sdot {

enum class CostKind { squared, normalized, custom };

using CostCallback = std::function<double(const Eigen::Ref<const Vector>& x,
                                          const Eigen::Ref<const Vector>& y)>;

/// Ground cost c(x, y). `squared` is ||x-y||^2, `normalized` is ||x-y||^2 / d;
/// `custom` defers to a user callback, which must return finite values >= 0.
struct Cost {
  CostKind kind = CostKind::squared;
  CostCallback callback;

  static Cost squared() { return {CostKind::squared, {}}; }
  static Cost normalized() { return {CostKind::normalized, {}}; }
  static Cost custom(CostCallback f) { return {CostKind::custom, std::move(f)}; }
};

/// c_x[j] = c(x, y_j).
inline Vector cost_row(const Eigen::Ref<const Vector>& x, const TargetMeasure& target,
                       const Cost& cost = Cost::squared()) {
  if (x.size() != target.dim()) {
    throw Error(ErrorCode::dimension_mismatch, "cost_row: point has dimension " + std::to_string(x.size()) +
                                                   ", target has " + std::to_string(target.dim()));
  }
  const Index J = target.size();
  Vector c(J);
  switch (cost.kind) {
    case CostKind::squared:
      c = (target.points().rowwise() - x.transpose()).rowwise().squaredNorm();
      break;
    case CostKind::normalized:
      c = (target.points().rowwise() - x.transpose()).rowwise().squaredNorm() /
          static_cast<double>(target.dim());
      break;
    case CostKind::custom:
      if (!cost.callback) throw Error(ErrorCode::invalid_argument, "cost_row: custom cost without callback");
      for (Index j = 0; j < J; ++j) {
        c(j) = cost.callback(x, target.point(j));
        if (!std::isfinite(c(j)) || c(j) < 0.0) {
          throw Error(ErrorCode::invalid_argument, "cost_row: custom cost must be finite and >= 0");
        }
      }
      break;
  }
  return c;
}

/// I x J matrix of c(x_i, y_j).
inline Matrix cost_matrix(const Matrix& points, const TargetMeasure& target,
                          const Cost& cost = Cost::squared()) {
  Matrix c(points.rows(), target.size());
  for (Index i = 0; i < points.rows(); ++i) c.row(i) = cost_row(points.row(i).transpose(), target, cost);
  return c;
}

/// log sum_j exp(a_j), max-shifted.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

/// Softmax row and the value of h at one sample, sharing the exponentials.
template <typename Scalar>
struct PointEval {
  Vec<Scalar> pi;
  Scalar h;
};

template <typename DC, typename DV, typename DN>
PointEval<typename DC::Scalar> evaluate_point(const Eigen::MatrixBase<DC>& cost,
                                              const Eigen::MatrixBase<DV>& v,
                                              typename DC::Scalar eps,
                                              const Eigen::MatrixBase<DN>& nu) {
  using Scalar = typename DC::Scalar;
  // z_j = (v_j - c_j) / eps, weighted by nu_j inside the exponential.
  Vec<Scalar> z = (v.derived() - cost.derived()) / eps;
  const Scalar zmax = z.maxCoeff();
  Vec<Scalar> w = nu.derived().array() * (z.array() - zmax).exp();
  const Scalar total = w.sum();
  PointEval<Scalar> out;
  out.pi = w / total;
  out.h = eps + eps * (zmax + std::log(total)) - v.derived().dot(nu.derived());
  return out;
}

template <typename DC, typename DV, typename DN>
Vec<typename DC::Scalar> soft_assignment(const Eigen::MatrixBase<DC>& cost, const Eigen::MatrixBase<DV>& v,
                                         typename DC::Scalar eps, const Eigen::MatrixBase<DN>& nu) {
  return evaluate_point(cost, v, eps, nu).pi;
}

template <typename DC, typename DV, typename DN>
typename DC::Scalar h_eps(const Eigen::MatrixBase<DC>& cost, const Eigen::MatrixBase<DV>& v,
                          typename DC::Scalar eps, const Eigen::MatrixBase<DN>& nu) {
  return evaluate_point(cost, v, eps, nu).h;
}

/// pi - nu; zero coordinate sum, norm <= 2.
template <typename DP, typename DN>
Vec<typename DP::Scalar> grad_h(const Eigen::MatrixBase<DP>& pi, const Eigen::MatrixBase<DN>& nu) {
  return pi.derived() - nu.derived();
}

/// (diag(pi) - pi pi^T) / eps.
template <typename DP>
Mat<typename DP::Scalar> hess_h(const Eigen::MatrixBase<DP>& pi, typename DP::Scalar eps) {
  using Scalar = typename DP::Scalar;
  Mat<Scalar> m = -pi.derived() * pi.derived().transpose();
  m.diagonal() += pi.derived();
  return m / eps;
}

/// v - mean(v) * 1, i.e. P_J v.
template <typename Derived>
Vec<typename Derived::Scalar> project_zero_mean(const Eigen::MatrixBase<Derived>& v) {
  return (v.derived().array() - v.derived().mean()).matrix();
}

template <typename Derived>
void project_zero_mean_inplace(Eigen::MatrixBase<Derived>& v) {
  v.derived().array() -= v.derived().mean();
}

/// Discrete source, target, cost matrix and eps bundled for exact expectations.
struct DiscreteProblem {
  DiscreteMeasure source;
  TargetMeasure target;
  Matrix cost;  // I x J
  double eps = 1.0;

  DiscreteProblem() = default;
  DiscreteProblem(DiscreteMeasure source_, TargetMeasure target_, double eps_,
                  const Cost& c = Cost::squared())
      : source(std::move(source_)), target(std::move(target_)), eps(eps_) {
    if (!(eps > 0.0)) throw Error(ErrorCode::invalid_argument, "eps must be > 0");
    if (source.dim() != target.dim()) {
      throw Error(ErrorCode::dimension_mismatch, "source and target dimensions differ");
    }
    cost = cost_matrix(source.points(), target, c);
  }
};

struct ObjectiveValue {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// H(v) = sum_i mu_i h(x_i, v) with matching gradient and Hessian.
inline ObjectiveValue exact_objective(const DiscreteProblem& p, const Vector& v, bool with_hessian = true) {
  const Index J = p.target.size();
  const Vector& nu = p.target.weights();
  const Vector& mu = p.source.weights();
  ObjectiveValue out;
  out.gradient = Vector::Zero(J);
  Vector mean_pi = Vector::Zero(J);
  Matrix second = Matrix::Zero(J, J);
  for (Index i = 0; i < p.source.size(); ++i) {
    const auto e = evaluate_point(p.cost.row(i).transpose(), v, p.eps, nu);
    out.value += mu(i) * e.h;
    mean_pi += mu(i) * e.pi;
    if (with_hessian) second.selfadjointView<Eigen::Lower>().rankUpdate(e.pi, mu(i));
  }
  out.gradient = mean_pi - nu;
  if (with_hessian) {
    Matrix pp = second.selfadjointView<Eigen::Lower>();
    out.hessian = -pp;
    out.hessian.diagonal() += mean_pi;
    out.hessian /= p.eps;
  }
  return out;
}

inline ObjectiveValue exact_objective(const DiscreteMeasure& source, const TargetMeasure& target,
                                      const Vector& v, double eps, const Cost& cost = Cost::squared()) {
  return exact_objective(DiscreteProblem(source, target, eps, cost), v);
}

}  // namespace sdot

#endif  // SDOT_OBJECTIVE_HPP
