#ifndef SDOT_TYPES_HPP
#define SDOT_TYPES_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sdot {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = Vec<double>;
using Matrix = Mat<double>;
using Index = Eigen::Index;

enum class ErrorCode {
  dimension_mismatch,
  invalid_argument,
  non_finite,
  underflow,
  singular,
  rank_deficient,
  config,
  replication_failed,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::underflow: return "underflow";
    case ErrorCode::singular: return "singular";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::config: return "config";
    case ErrorCode::replication_failed: return "replication_failed";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Tolerances shared by validation code.
inline constexpr double kSimplexTol = 1e-12;
inline constexpr double kZeroMeanTol = 1e-9;

}  // namespace sdot

#endif  // SDOT_TYPES_HPP
