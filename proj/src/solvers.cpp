#include "sdot/solvers.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>

namespace sdot {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sgd: return "sgd";
    case Algorithm::adam: return "adam";
    case Algorithm::sgn: return "sgn";
    case Algorithm::sn: return "sn";
  }
  return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "sgd") return Algorithm::sgd;
  if (s == "adam") return Algorithm::adam;
  if (s == "sgn") return Algorithm::sgn;
  if (s == "sn") return Algorithm::sn;
  throw Error(ErrorCode::config, "unknown algorithm '" + name + "' (expected sgd, adam, sgn or sn)");
}

SolverConfig SolverConfig::defaults(Algorithm a, double eps) {
  SolverConfig c;
  c.algorithm = a;
  c.eps = eps;
  c.alpha = a == Algorithm::sgd ? 0.5 : 0.0;
  return c;
}

void SolverConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::config, msg); };
  if (!(eps > 0.0) || !std::isfinite(eps)) fail("eps must be a finite positive number");
  if (n_max < 0) fail("n_max must be >= 0");
  switch (algorithm) {
    case Algorithm::sgd:
      if (!(alpha >= 0.0 && alpha <= 1.0)) fail("sgd: alpha must lie in [0, 1]");
      if (sgd_scale && !(*sgd_scale > 0.0)) fail("sgd: scale must be > 0");
      break;
    case Algorithm::adam:
      if (!(adam_lr > 0.0)) fail("adam: stepsize must be > 0");
      if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam: beta1 must lie in [0, 1)");
      if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam: beta2 must lie in [0, 1)");
      if (!(adam_eps > 0.0)) fail("adam: epsilon must be > 0");
      break;
    case Algorithm::sgn:
      if (!(gamma > 0.0)) fail("sgn: gamma must be > 0");
      if (!(beta > 0.0 && beta < 0.5)) fail("sgn: beta must lie in (0, 1/2)");
      if (!(alpha >= 0.0 && alpha + beta < 0.5)) fail("sgn: need alpha >= 0 and alpha + beta < 1/2");
      break;
    case Algorithm::sn:
      if (!(alpha >= 0.0 && alpha < 0.5)) fail("sn: alpha must lie in [0, 1/2)");
      break;
  }
}

Solver::Solver(SolverConfig config, const TargetMeasure& target, bool track_sbar)
    : config_(std::move(config)), target_(&target), track_sbar_(track_sbar) {
  config_.validate();
  const Index J = target.size();
  v_ = Vector::Zero(J);
  switch (config_.algorithm) {
    case Algorithm::sgd:
      sgd_scale_ = config_.sgd_scale.value_or(config_.eps / (2.0 * target.min_weight()));
      break;
    case Algorithm::adam:
      adam_m_ = Vector::Zero(J);
      adam_v_ = Vector::Zero(J);
      break;
    case Algorithm::sgn:
      sgn_.emplace(J, config_.gamma, config_.beta, config_.indexing, track_sbar);
      break;
    case Algorithm::sn:
      sn_.emplace(J);
      break;
  }
  if (track_sbar_ && config_.algorithm != Algorithm::sgn) {
    throw Error(ErrorCode::config, "S_bar tracking is only defined for sgn");
  }
}

double Solver::step_cost_row(const Vector& c) {
  const Vector& nu = target_->weights();
  if (c.size() != nu.size()) throw Error(ErrorCode::dimension_mismatch, "step: cost row size differs from J");
  const auto e = evaluate_point(c, v_, config_.eps, nu);
  const Vector phi = e.pi - nu;
  est_.update(e.h);
  const std::int64_t k = n_ + 1;
  const double kd = static_cast<double>(k);
  switch (config_.algorithm) {
    case Algorithm::sgd:
      v_.noalias() -= (sgd_scale_ * std::pow(kd, config_.alpha - 1.0)) * phi;
      break;
    case Algorithm::adam: {
      const double b1 = config_.adam_beta1;
      const double b2 = config_.adam_beta2;
      adam_m_ = b1 * adam_m_ + (1.0 - b1) * phi;
      adam_v_ = b2 * adam_v_ + (1.0 - b2) * phi.cwiseAbs2();
      const double c1 = 1.0 - std::pow(b1, kd);
      const double c2 = 1.0 - std::pow(b2, kd);
      v_.array() -= config_.adam_lr * (adam_m_.array() / c1) /
                    ((adam_v_.array() / c2).sqrt() + config_.adam_eps);
      break;
    }
    case Algorithm::sgn:
      // The inverse in use predates X_{n+1}; the new gradient is folded in afterwards.
      v_.noalias() -= std::pow(kd, config_.alpha) * sgn_->apply(phi);
      sgn_->update(phi, nu);
      break;
    case Algorithm::sn:
      v_.noalias() -= std::pow(kd, config_.alpha) * sn_->apply(phi);
      sn_->update(e.pi, config_.eps);
      break;
  }
  project_zero_mean_inplace(v_);
  if (!v_.allFinite()) throw Error(ErrorCode::non_finite, "step: potential became non-finite");
  n_ = k;
  return e.h;
}

double Solver::step(const Eigen::Ref<const Vector>& x, const Cost& cost) {
  return step_cost_row(cost_row(x, *target_, cost));
}

Matrix Solver::s_bar() const {
  if (!track_sbar_) throw Error(ErrorCode::invalid_argument, "S_bar not tracked for this solver");
  if (n_ == 0) return sgn_->forward();
  return sgn_->forward() / static_cast<double>(n_);
}

RunRecord run(const SolverConfig& config, const SourceMeasure& source, const TargetMeasure& target,
              const Cost& cost, SeededStream& stream, const std::vector<std::int64_t>& snapshots,
              bool keep_sbar, const SnapshotSink& sink) {
  config.validate();
  if (dimension(source) != target.dim()) {
    throw Error(ErrorCode::dimension_mismatch, "run: source and target dimensions differ");
  }
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (snapshots[i] < 0 || snapshots[i] > config.n_max) {
      throw Error(ErrorCode::config, "run: snapshot " + std::to_string(snapshots[i]) + " outside [0, n_max]");
    }
    if (i > 0 && snapshots[i] <= snapshots[i - 1]) {
      throw Error(ErrorCode::config, "run: snapshots must be strictly increasing");
    }
  }
  Solver solver(config, target, keep_sbar);
  RunRecord record;
  const auto start = std::chrono::steady_clock::now();
  auto emit = [&]() {
    Snapshot s;
    s.n = solver.count();
    s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    s.v = solver.potential();
    s.w_hat = solver.estimators().w_hat();
    s.sigma2_hat = solver.estimators().sigma2_hat();
    if (keep_sbar) s.s_bar = solver.s_bar();
    if (sink) sink(s);
    record.snapshots.push_back(std::move(s));
  };

  const DiscreteMeasure* discrete = std::get_if<DiscreteMeasure>(&source);
  Matrix cached;
  if (discrete) cached = cost_matrix(discrete->points(), target, cost);

  emit();
  auto next = std::find_if(snapshots.begin(), snapshots.end(), [](std::int64_t s) { return s > 0; });
  Vector row;
  while (solver.count() < config.n_max) {
    if (discrete) {
      row = cached.row(sample_index(*discrete, stream)).transpose();
    } else {
      row = cost_row(sample(source, stream), target, cost);
    }
    solver.step_cost_row(row);
    if (next != snapshots.end() && solver.count() == *next) {
      emit();
      ++next;
    }
  }
  return record;
}

}  // namespace sdot
