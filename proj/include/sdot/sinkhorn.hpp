#ifndef SDOT_SINKHORN_HPP
#define SDOT_SINKHORN_HPP

#include "sdot/objective.hpp"

#include <vector>

namespace sdot {

struct SinkhornOptions {
  double tol = 1e-9;  // on max(l1 row error, l1 column error)
  int max_iter = 100000;
  /// When the sweeps stop short of tol, finish with damped Newton steps on
  /// the semi-dual. Disable to observe raw Sinkhorn behaviour.
  bool newton_polish = true;
  /// Sweep residual below which the polish takes over early.
  double newton_switch = 1e-4;
  int max_newton = 50;
  /// Record the residual after every sweep.
  bool keep_history = false;
};

struct SinkhornResult {
  double W_eps = 0.0;
  Vector v_star;   // zero-mean column potential
  Vector u_star;   // row potential f, paired with the uncentred g
  Matrix coupling;  // I x J
  int iterations = 0;
  int newton_steps = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<double> residual_history;
};

/// Log-domain alternating scaling for the discrete problem
///   min_pi <pi, C> + eps sum pi (log(pi / (mu nu)) - 1).
/// W_eps is reported as -H(v*) from exact_objective.
SinkhornResult sinkhorn_solve(const DiscreteProblem& problem, const SinkhornOptions& options = {});

SinkhornResult sinkhorn_solve(const DiscreteMeasure& source, const TargetMeasure& target, double eps,
                              double tol = 1e-9, int max_iter = 100000, const Cost& cost = Cost::squared());

/// max(||coupling 1 - mu||_1, ||coupling^T 1 - nu||_1).
double marginal_residual(const Matrix& coupling, const Vector& mu, const Vector& nu);

/// <coupling, C> + eps sum coupling (log(coupling / (mu nu)) - 1); zero entries contribute 0.
double primal_value(const Matrix& coupling, const DiscreteProblem& problem);

/// Coupling mu_i nu_j exp((f_i + g_j - C_ij) / eps).
Matrix coupling_from_potentials(const DiscreteProblem& problem, const Vector& f, const Vector& g);

}  // namespace sdot

#endif  // SDOT_SINKHORN_HPP
