#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qstein {

using cd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  not_hermitian,
  not_psd,
  trace_mismatch,
  invalid_layout,
  invalid_channel,
  budget_exceeded,
  rank_deficient,
  representation_unsupported,
  permutation_closure,
  group_not_closed,
  subadditivity_violated,
  invariant_violation,
  numerical_failure,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::not_hermitian: return "not-hermitian";
    case ErrorCode::not_psd: return "not-psd";
    case ErrorCode::trace_mismatch: return "trace-mismatch";
    case ErrorCode::invalid_layout: return "invalid-layout";
    case ErrorCode::invalid_channel: return "invalid-channel";
    case ErrorCode::budget_exceeded: return "budget-exceeded";
    case ErrorCode::rank_deficient: return "rank-deficient";
    case ErrorCode::representation_unsupported: return "representation-unsupported";
    case ErrorCode::permutation_closure: return "permutation-closure";
    case ErrorCode::group_not_closed: return "group-not-closed";
    case ErrorCode::subadditivity_violated: return "subadditivity-violated";
    case ErrorCode::invariant_violation: return "invariant-violation";
    case ErrorCode::numerical_failure: return "numerical-failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Every numerical threshold used by the library. Absolute unless noted.
struct Tolerances {
  double hermiticity = 1e-12;     // relative to max |entry|
  double psd_slack = 1e-10;       // smallest admissible eigenvalue is -psd_slack
  double trace_slack = 1e-10;
  double cluster_rel = 1e-9;      // eigenvalue clustering, relative to spectral radius
  double support_cut = 1e-12;     // eigenvalues below support_cut * radius are zero
  double support_mass = 1e-10;    // rho-mass outside supp(sigma) that forces +inf
  double channel_marginal = 1e-9;
  double projector = 1e-10;
};

struct Budget {
  std::size_t max_dim = 4096;
  std::size_t max_perm_sites = 8;        // explicit n! sums
  std::size_t sdp_max_sq_dim = 200000;   // sum over blocks of dim^2
  std::size_t sdp_max_constraints = 2600;
};

struct Config {
  Tolerances tol{};
  Budget budget{};
};

inline const Config& default_config() {
  static const Config c{};
  return c;
}

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) throw Error(code, msg);
}

}  // namespace qstein
