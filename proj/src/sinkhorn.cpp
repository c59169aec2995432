#include "sdot/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sdot {

namespace {

// f_i = -eps log sum_j nu_j exp((g_j - C_ij) / eps)
Vector row_potential(const Matrix& cost, const Vector& log_nu, const Vector& g, double eps) {
  const Index I = cost.rows();
  Vector f(I);
  Vector z(cost.cols());
  for (Index i = 0; i < I; ++i) {
    z = log_nu + (g - cost.row(i).transpose()) / eps;
    f(i) = -eps * log_sum_exp(z);
  }
  return f;
}

// g_j = -eps log sum_i mu_i exp((f_i - C_ij) / eps)
Vector column_potential(const Matrix& cost, const Vector& log_mu, const Vector& f, double eps) {
  const Index J = cost.cols();
  Vector g(J);
  Vector z(cost.rows());
  for (Index j = 0; j < J; ++j) {
    z = log_mu + (f - cost.col(j)) / eps;
    g(j) = -eps * log_sum_exp(z);
  }
  return g;
}

// Damped Newton on H restricted to <1>^perp. Returns the number of steps taken.
int newton_polish(const DiscreteProblem& p, Vector& v, double tol, int max_steps) {
  const Index J = v.size();
  if (J == 1) return 0;
  int steps = 0;
  auto current = exact_objective(p, v);
  while (steps < max_steps && current.gradient.lpNorm<1>() > tol) {
    // The all-ones block makes the system definite without changing the step on <1>^perp.
    Matrix a = current.hessian;
    a.array() += 1.0 / static_cast<double>(J);
    Vector d = -a.ldlt().solve(current.gradient);
    project_zero_mean_inplace(d);
    double t = 1.0;
    const double slope = current.gradient.dot(d);
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector trial = v + t * d;
      auto next = exact_objective(p, trial);
      if (next.value <= current.value + 1e-4 * t * slope ||
          next.gradient.lpNorm<1>() < current.gradient.lpNorm<1>()) {
        v = trial;
        current = std::move(next);
        moved = true;
        break;
      }
      t *= 0.5;
    }
    ++steps;
    if (!moved) break;
  }
  return steps;
}

}  // namespace

Matrix coupling_from_potentials(const DiscreteProblem& p, const Vector& f, const Vector& g) {
  const Vector& mu = p.source.weights();
  const Vector& nu = p.target.weights();
  Matrix out(p.cost.rows(), p.cost.cols());
  for (Index j = 0; j < out.cols(); ++j) {
    out.col(j) = (mu.array() * nu(j) * ((f.array() + g(j) - p.cost.col(j).array()) / p.eps).exp()).matrix();
  }
  return out;
}

double marginal_residual(const Matrix& coupling, const Vector& mu, const Vector& nu) {
  if (coupling.rows() != mu.size() || coupling.cols() != nu.size()) {
    throw Error(ErrorCode::dimension_mismatch, "marginal_residual: coupling shape differs from marginals");
  }
  const double rows = (coupling.rowwise().sum() - mu).lpNorm<1>();
  const double cols = (coupling.colwise().sum().transpose() - nu).lpNorm<1>();
  return std::max(rows, cols);
}

double primal_value(const Matrix& coupling, const DiscreteProblem& p) {
  const Vector& mu = p.source.weights();
  const Vector& nu = p.target.weights();
  double total = 0.0;
  for (Index j = 0; j < coupling.cols(); ++j) {
    for (Index i = 0; i < coupling.rows(); ++i) {
      const double q = coupling(i, j);
      if (q <= 0.0) continue;
      total += q * p.cost(i, j) + p.eps * q * (std::log(q / (mu(i) * nu(j))) - 1.0);
    }
  }
  return total;
}

SinkhornResult sinkhorn_solve(const DiscreteProblem& p, const SinkhornOptions& opt) {
  if (!(opt.tol > 0.0)) throw Error(ErrorCode::invalid_argument, "sinkhorn: tol must be > 0");
  if (opt.max_iter < 0) throw Error(ErrorCode::invalid_argument, "sinkhorn: max_iter must be >= 0");
  if (!p.cost.allFinite()) throw Error(ErrorCode::non_finite, "sinkhorn: cost matrix is not finite");
  const Vector log_mu = p.source.weights().array().log();
  const Vector log_nu = p.target.weights().array().log();
  const Vector& mu = p.source.weights();
  const double eps = p.eps;

  SinkhornResult out;
  Vector g = Vector::Zero(p.cost.cols());
  Vector f = row_potential(p.cost, log_nu, g, eps);
  double sweep_residual = std::numeric_limits<double>::infinity();
  const double stop = opt.newton_polish ? std::max(opt.tol, opt.newton_switch) : opt.tol;
  while (out.iterations < opt.max_iter && sweep_residual > stop) {
    g = column_potential(p.cost, log_mu, f, eps);
    const Vector f_next = row_potential(p.cost, log_nu, g, eps);
    // After the column update the columns are exact; row i carries mu_i exp((f_i - f_next_i) / eps).
    sweep_residual = (mu.array() * (((f - f_next) / eps).array().exp() - 1.0).abs()).sum();
    f = f_next;
    ++out.iterations;
    if (opt.keep_history) out.residual_history.push_back(sweep_residual);
  }

  Vector v = project_zero_mean(g);
  if (opt.newton_polish) {
    const double col_res = (exact_objective(p, v, false).gradient).lpNorm<1>();
    if (col_res > opt.tol) out.newton_steps = newton_polish(p, v, opt.tol, opt.max_newton);
  }
  out.v_star = v;
  out.u_star = row_potential(p.cost, log_nu, v, eps);
  out.coupling = coupling_from_potentials(p, out.u_star, out.v_star);
  out.residual = marginal_residual(out.coupling, mu, p.target.weights());
  out.converged = out.residual <= opt.tol;
  out.W_eps = -exact_objective(p, out.v_star, false).value;
  return out;
}

SinkhornResult sinkhorn_solve(const DiscreteMeasure& source, const TargetMeasure& target, double eps,
                              double tol, int max_iter, const Cost& cost) {
  SinkhornOptions opt;
  opt.tol = tol;
  opt.max_iter = max_iter;
  return sinkhorn_solve(DiscreteProblem(source, target, eps, cost), opt);
}

}  // namespace sdot
