#ifndef SDOT_PRECONDITIONER_HPP
#define SDOT_PRECONDITIONER_HPP

// Running inverses for the two second-order solvers.
//
// SgnInverse keeps S_n^{-1} for
//   S_n = I + sum_k phi_k phi_k^T + gamma (1 + floor(k/J))^{-beta} nu_{l_k} e_{l_k} e_{l_k}^T
// using two Sherman-Morrison steps per iteration (regularizer first, then the
// gradient outer product), O(J^2) each.
//
// SnPinv keeps the Moore-Penrose inverse of
//   H_n = P_J + sum_k (diag(pi_k) - pi_k pi_k^T) / eps,
// so that (I + sum_k hess_k)^{-1} = H_n^- + v_J v_J^T. One update is a dense
// O(J^3) solve.

#include "sdot/linalg.hpp"
#include "sdot/types.hpp"

#include <cmath>
#include <array>
#include <span>
#include <string>

namespace sdot {

/// How the regularizer weight index is grouped.
///   literal:   weight of term k is gamma (1 + floor(k / J))^{-beta}
///   blockwise: weight of term k is gamma (1 + floor((k - 1) / J))^{-beta},
///              so that every full cycle of J terms shares one weight.
enum class RegularizerIndexing { literal, blockwise };

template <typename Scalar>
struct RankOneTerm {
  Vec<Scalar> u;
  Scalar weight;
};

template <typename Scalar>
class SgnInverse {
 public:
  static constexpr Index kSymmetrizeEvery = 1000;

  SgnInverse(Index J, Scalar gamma, Scalar beta,
             RegularizerIndexing indexing = RegularizerIndexing::literal, bool track_forward = false)
      : gamma_(gamma), beta_(beta), indexing_(indexing), track_forward_(track_forward),
        inv_(Mat<Scalar>::Identity(J, J)) {
    if (J < 1) throw Error(ErrorCode::invalid_argument, "SGN: J must be >= 1");
    if (!(gamma > 0)) throw Error(ErrorCode::invalid_argument, "SGN: gamma must be > 0");
    if (track_forward_) forward_ = Mat<Scalar>::Identity(J, J);
  }

  Index dim() const { return inv_.rows(); }
  /// Number of completed updates n.
  Index count() const { return n_; }
  Scalar gamma() const { return gamma_; }
  Scalar beta() const { return beta_; }
  RegularizerIndexing indexing() const { return indexing_; }

  /// 0-based atom hit by the regularizer of term k (k >= 1): (k - 1) mod J.
  Index cyclic_index(Index k) const { return (k - 1) % dim(); }

  /// gamma (1 + floor(k/J))^{-beta}, or the blockwise variant.
  Scalar regularizer_weight(Index k) const {
    const Index J = dim();
    const Index block = indexing_ == RegularizerIndexing::literal ? k / J : (k - 1) / J;
    return gamma_ * std::pow(Scalar(1) + Scalar(block), -beta_);
  }

  /// S_n -> S_{n+1}: regularizer step then gradient step.
  template <typename DP, typename DN>
  void update(const Eigen::MatrixBase<DP>& phi, const Eigen::MatrixBase<DN>& nu) {
    if (!phi.allFinite()) throw Error(ErrorCode::non_finite, "SGN update: non-finite gradient");
    if (phi.size() != dim() || nu.size() != dim()) {
      throw Error(ErrorCode::dimension_mismatch, "SGN update: vector size differs from J");
    }
    const Index k = n_ + 1;
    regularizer_step(k, nu);
    gradient_step(phi);
    n_ = k;
    if (n_ % kSymmetrizeEvery == 0) {
      inv_ = Scalar(0.5) * (inv_ + inv_.transpose()).eval();
    }
  }

  /// S^{-1} g.
  template <typename Derived>
  Vec<Scalar> apply(const Eigen::MatrixBase<Derived>& g) const {
    return inv_ * g.derived();
  }

  const Mat<Scalar>& inverse() const { return inv_; }

  /// S_n itself; only available when constructed with track_forward.
  const Mat<Scalar>& forward() const {
    if (!track_forward_) throw Error(ErrorCode::invalid_argument, "SGN: forward matrix not tracked");
    return forward_;
  }
  bool tracks_forward() const { return track_forward_; }

  /// The rank-one terms that update(phi, nu) at step k adds to S, in order.
  template <typename DP, typename DN>
  std::array<RankOneTerm<Scalar>, 2> terms_for(Index k, const Eigen::MatrixBase<DP>& phi,
                                               const Eigen::MatrixBase<DN>& nu) const {
    const Index l = cyclic_index(k);
    return {RankOneTerm<Scalar>{Vec<Scalar>::Unit(dim(), l), regularizer_weight(k) * nu(l)},
            RankOneTerm<Scalar>{phi.derived(), Scalar(1)}};
  }

 private:
  template <typename DN>
  void regularizer_step(Index k, const Eigen::MatrixBase<DN>& nu) {
    const Index l = cyclic_index(k);
    const Scalar w = regularizer_weight(k);
    const Scalar nu_l = nu(l);
    // S^{-1} - nu_l S^{-1}_{:,l} S^{-1}_{l,:} / (nu_l S^{-1}_{ll} + 1/w)
    const Vec<Scalar> col = inv_.col(l);
    const Scalar denom = nu_l * col(l) + Scalar(1) / w;
    inv_.noalias() -= (nu_l / denom) * col * col.transpose();
    if (track_forward_) forward_(l, l) += w * nu_l;
  }

  template <typename DP>
  void gradient_step(const Eigen::MatrixBase<DP>& phi) {
    // S^{-1} - S^{-1} phi phi^T S^{-1} / (1 + phi^T S^{-1} phi)
    const Vec<Scalar> s_phi = inv_ * phi.derived();
    const Scalar denom = Scalar(1) + phi.derived().dot(s_phi);
    inv_.noalias() -= (Scalar(1) / denom) * s_phi * s_phi.transpose();
    if (track_forward_) forward_.noalias() += phi.derived() * phi.derived().transpose();
  }

  Scalar gamma_;
  Scalar beta_;
  RegularizerIndexing indexing_;
  bool track_forward_;
  Index n_ = 0;
  Mat<Scalar> inv_;
  Mat<Scalar> forward_;
};

/// S = I + sum_t w_t u_t u_t^T.
template <typename Scalar>
Mat<Scalar> assemble_from_history(Index J, std::span<const RankOneTerm<Scalar>> history) {
  Mat<Scalar> s = Mat<Scalar>::Identity(J, J);
  for (const auto& t : history) s.noalias() += t.weight * t.u * t.u.transpose();
  return s;
}

/// Rebuilds S from its rank-one history and inverts it by dense Cholesky.
template <typename Scalar>
Mat<Scalar> dense_inverse_oracle(Index J, std::span<const RankOneTerm<Scalar>> history) {
  const Mat<Scalar> s = assemble_from_history(J, history);
  Eigen::LLT<Mat<Scalar>> llt(s);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::singular, "dense_inverse_oracle: matrix is not positive definite");
  }
  return llt.solve(Mat<Scalar>::Identity(J, J));
}

template <typename Scalar>
class SnPinv {
 public:
  /// Entries of pi below this make eps / pi_j overflow.
  static constexpr double kMinProbability = 1e-300;

  explicit SnPinv(Index J) : pinv_(zero_mean_projector<Scalar>(J)) {
    if (J < 1) throw Error(ErrorCode::invalid_argument, "SN: J must be >= 1");
  }

  Index dim() const { return pinv_.rows(); }
  Index count() const { return n_; }

  /// H_{n-1}^- -> H_n^- after adding (diag(pi) - pi pi^T) / eps.
  template <typename DP>
  void update(const Eigen::MatrixBase<DP>& pi, Scalar eps) {
    const Index J = dim();
    if (pi.size() != J) throw Error(ErrorCode::dimension_mismatch, "SN update: pi size differs from J");
    if (!pi.allFinite()) throw Error(ErrorCode::non_finite, "SN update: non-finite pi");
    if (pi.minCoeff() < Scalar(kMinProbability)) {
      throw Error(ErrorCode::underflow, "SN update: pi entry below 1e-300");
    }
    const Scalar inv_j = Scalar(1) / Scalar(J);
    // T = (H_{n-1} + v v^T)^{-1} = H_{n-1}^- + v v^T.
    Mat<Scalar> t = pinv_;
    t.array() += inv_j;
    // K = (H_{n-1} + v v^T + diag(pi)/eps)^{-1} = T - T (T + eps diag(1/pi))^{-1} T.
    Mat<Scalar> m = t;
    m.diagonal().array() += eps / pi.derived().array();
    Eigen::LLT<Mat<Scalar>> llt(m);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::singular, "SN update: inner system is not positive definite");
    }
    Mat<Scalar> k = t - t * llt.solve(t);
    // Remove the v v^T term: (K^{-1} - v v^T)^{-1} = K + K v v^T K / (1 - v^T K v).
    const Vec<Scalar> kv = k.rowwise().sum() * std::sqrt(inv_j);
    const Scalar vkv = kv.sum() * std::sqrt(inv_j);
    k.noalias() += (Scalar(1) / (Scalar(1) - vkv)) * kv * kv.transpose();
    // H_n^- = P K' P.
    k.rowwise() -= k.colwise().mean();
    k.colwise() -= k.rowwise().mean();
    pinv_ = Scalar(0.5) * (k + k.transpose());
    ++n_;
  }

  /// (I + sum hess)^{-1} g = H^- g + mean(g) * 1.
  template <typename Derived>
  Vec<Scalar> apply(const Eigen::MatrixBase<Derived>& g) const {
    Vec<Scalar> out = pinv_ * g.derived();
    out.array() += g.derived().mean();
    return out;
  }

  const Mat<Scalar>& pinv() const { return pinv_; }

  /// S_n^{-1} = H_n^- + v_J v_J^T.
  Mat<Scalar> inverse() const {
    Mat<Scalar> out = pinv_;
    out.array() += Scalar(1) / Scalar(dim());
    return out;
  }

 private:
  Index n_ = 0;
  Mat<Scalar> pinv_;
};

using SgnInverseState = SgnInverse<double>;
using SnPinvState = SnPinv<double>;

}  // namespace sdot

#endif  // SDOT_PRECONDITIONER_HPP
