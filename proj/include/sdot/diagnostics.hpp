#ifndef SDOT_DIAGNOSTICS_HPP
#define SDOT_DIAGNOSTICS_HPP

#include "sdot/objective.hpp"
#include "sdot/sinkhorn.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sdot {

/// One line of a diagnostics report: pass iff the check's inequality holds.
struct CheckResult {
  std::string check;
  double value = 0.0;
  double bound = 0.0;
  bool pass = true;
  bool applicable = true;  // false: precondition not met, not counted as failure
  bool skipped = false;    // true: evaluation point excluded by definition
  bool gating = true;      // false: reported for information, never fails a suite
};

/// G(v) = sum_i mu_i (pi(x_i, v) - nu)(pi(x_i, v) - nu)^T.
Matrix g_matrix(const DiscreteProblem& problem, const Vector& v);

struct GroundTruth {
  double W_eps = 0.0;
  Vector v_star;
  Matrix G_star;
  Matrix H_star;
  double eps = 0.0;
  Vector nu;
  double residual = 0.0;
};

GroundTruth compute_ground_truth(const DiscreteProblem& problem, const SinkhornOptions& options = {});

/// Assembles G* and H* at a known minimizer.
GroundTruth ground_truth_at(const DiscreteProblem& problem, const Vector& v_star, double residual = 0.0);

/// eps <= min(nu) / (max(nu) - min(nu)); always true for uniform nu.
bool keystone_condition(const Vector& nu, double eps);

struct KeystoneReport {
  bool applicable = true;
  double lambda_min_h_minus_g = 0.0;  // over <1>^perp
  double lambda_min_gamma = 0.0;      // over <1>^perp
  bool pass = true;
};

inline constexpr double kKeystoneSlack = 1e-9;
inline constexpr double kGammaSlack = 1e-6;

KeystoneReport keystone_check(const Matrix& G_star, const Matrix& H_star, const Vector& nu, double eps);

struct AsymptoticCovariances {
  Matrix gamma;        // G^{-1/2} H G^{-1/2}
  Matrix sigma_v;      // G^{-1/2} (2 Gamma - P)^- G^{-1/2}
  Matrix g_pinv;       // A = G^-
  double lyapunov_residual = 0.0;  // relative to ||A G A||_F
};

inline constexpr double kLyapunovTol = 1e-8;

/// Throws rank_deficient when G has rank below J - 1.
AsymptoticCovariances asymptotic_covariances(const Matrix& G_star, const Matrix& H_star);

inline constexpr double kInequalitySlack = 1e-9;

struct SelfConcordanceReport {
  CheckResult strong_convexity;  // <grad H(v), v - v*> >= ((1 - e^-d)/d) (v-v*)^T H* (v-v*)
  CheckResult linearization;     // ||grad H(v) - H*(v - v*)|| <= (2 sqrt2 / eps) ||v - v*||^2
  CheckResult g_lipschitz;       // ||G(v) - G*||_2 <= (4 / eps) ||v - v*||
  CheckResult taylor;            // H(v) - H(v*) <= ||v - v*||^2 / (2 eps)
  bool pass() const {
    return strong_convexity.pass && linearization.pass && g_lipschitz.pass && taylor.pass;
  }
};

SelfConcordanceReport self_concordance_checks(const DiscreteProblem& problem, const GroundTruth& truth,
                                              const Vector& v);

inline constexpr double kKlSkipBelow = 1e-14;

/// m_eps = eps lambda_min^perp(G*) min(1, eps/4) <= ||grad Ht||^2 + ||grad Ht||^2 / Ht
/// where Ht(u) = H(G*^{-1/2} u) - H(v*) and u = G*^{1/2} v.
CheckResult kl_check(const DiscreteProblem& problem, const GroundTruth& truth, const Vector& v);

double kl_constant(const GroundTruth& truth);

struct FiniteDifference {
  Vector gradient;
  Matrix hessian;
};

using ScalarField = std::function<double(const Vector&)>;
using VectorField = std::function<Vector(const Vector&)>;

/// Central differences of f along each coordinate, projected onto <1>^perp.
FiniteDifference finite_difference_oracle(const ScalarField& f, const Vector& v, double step);

/// Central-difference Jacobian of a vector field, projected onto <1>^perp on both sides.
Matrix fd_jacobian(const VectorField& grad, const Vector& v, double step);

/// Random zero-mean direction scaled to the given norm.
Vector random_offset(Index J, double norm, std::uint64_t seed, std::uint64_t stream);

struct SuiteOptions {
  int points = 100;
  double max_radius = 1.0;
  std::uint64_t seed = 0;
};

/// Full diagnostics suite on one discrete instance: G identity, eigenvalue bounds,
/// keystone, Lyapunov, self-concordance and KL at random points.
std::vector<CheckResult> run_check_suite(const DiscreteProblem& problem, const GroundTruth& truth,
                                         const SuiteOptions& options = {});

/// True when every applicable, gating check passed.
bool suite_passes(const std::vector<CheckResult>& report);

/// JSON array of {check, value, bound, pass}; applicability flags are added when relevant.
std::string report_to_json(const std::vector<CheckResult>& report);

}  // namespace sdot

#endif  // SDOT_DIAGNOSTICS_HPP
