#ifndef SDOT_SOLVERS_HPP
#define SDOT_SOLVERS_HPP

#include "sdot/estimators.hpp"
#include "sdot/measures.hpp"
#include "sdot/objective.hpp"
#include "sdot/preconditioner.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sdot {

enum class Algorithm { sgd, adam, sgn, sn };

std::string to_string(Algorithm a);
/// Accepts "sgd", "adam", "sgn", "sn" (case-insensitive); throws ErrorCode::config.
Algorithm algorithm_from_string(const std::string& name);

struct SolverConfig {
  Algorithm algorithm = Algorithm::sgn;
  double eps = 0.1;
  double alpha = 0.0;
  /// SGD scale s; unset means eps / (2 min nu).
  std::optional<double> sgd_scale;
  double adam_lr = 0.005;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double gamma = 1e-3;
  double beta = 0.49;
  RegularizerIndexing indexing = RegularizerIndexing::literal;
  std::int64_t n_max = 0;

  /// Per-algorithm defaults: SGD uses alpha = 1/2, the others alpha = 0.
  static SolverConfig defaults(Algorithm a, double eps);
  /// Throws ErrorCode::config on an inadmissible combination.
  void validate() const;
};

/// One replication's state: the potential, the preconditioner or moment
/// accumulators, and the running estimators.
class Solver {
 public:
  Solver(SolverConfig config, const TargetMeasure& target, bool track_sbar = false);

  /// One iteration from a precomputed cost row c(X_{n+1}, .). Records
  /// h(X_{n+1}, V_n) into the estimators, then moves V. Returns that h value.
  double step_cost_row(const Vector& cost_row);
  double step(const Eigen::Ref<const Vector>& x, const Cost& cost = Cost::squared());

  const SolverConfig& config() const { return config_; }
  const Vector& potential() const { return v_; }
  std::int64_t count() const { return n_; }
  const RunningEstimators& estimators() const { return est_; }

  /// S_n / n for SGN; requires track_sbar. Identity at n = 0.
  Matrix s_bar() const;
  bool tracks_sbar() const { return track_sbar_; }

  /// Preconditioner states, exposed for inspection in tests.
  const std::optional<SgnInverseState>& sgn_state() const { return sgn_; }
  const std::optional<SnPinvState>& sn_state() const { return sn_; }

 private:
  SolverConfig config_;
  const TargetMeasure* target_;
  bool track_sbar_;
  Vector v_;
  std::int64_t n_ = 0;
  RunningEstimators est_;
  double sgd_scale_ = 0.0;
  std::optional<SgnInverseState> sgn_;
  std::optional<SnPinvState> sn_;
  Vector adam_m_;
  Vector adam_v_;
};

struct Snapshot {
  std::int64_t n = 0;
  double wall_time_s = 0.0;
  Vector v;
  double w_hat = 0.0;       // NaN at n = 0
  double sigma2_hat = 0.0;  // NaN at n = 0
  std::optional<Matrix> s_bar;
};

struct RunRecord {
  std::vector<Snapshot> snapshots;
};

using SnapshotSink = std::function<void(const Snapshot&)>;

/// Runs config.n_max steps drawing X from `source` through `stream`. Emits the
/// initial state (n = 0) and every listed snapshot; snapshots must be strictly
/// increasing and <= n_max. Discrete sources reuse a cached cost matrix.
RunRecord run(const SolverConfig& config, const SourceMeasure& source, const TargetMeasure& target,
              const Cost& cost, SeededStream& stream, const std::vector<std::int64_t>& snapshots,
              bool keep_sbar = false, const SnapshotSink& sink = {});

}  // namespace sdot

#endif  // SDOT_SOLVERS_HPP
