#pragma once

#include <cmath>
#include <limits>

#include "qstein/qcore.hpp"

namespace qstein {

// A divergence value in nats; infinite when the support condition fails.
struct DivergenceValue {
  double nats = 0.0;
  bool infinite = false;

  static DivergenceValue inf() { return {std::numeric_limits<double>::infinity(), true}; }
  double bits() const { return infinite ? nats : nats / std::log(2.0); }
  double value() const { return nats; }
};

namespace detail {

struct Support {
  Eigh e;
  double cut = 0.0;
  bool in_support(int i) const { return e.values(i) > cut; }
};

inline Support support_of(const Mat& sigma, const Config& cfg) {
  Support s{eigh(sigma), 0.0};
  s.cut = cfg.tol.support_cut * std::max(spectral_radius(s.e.values), 1e-300);
  return s;
}

// Tr[rho Pi_ker(sigma)].
inline double kernel_mass(const Mat& rho, const Support& s) {
  double m = 0;
  for (int i = 0; i < s.e.values.size(); ++i)
    if (!s.in_support(i)) m += (s.e.vectors.col(i).adjoint() * rho * s.e.vectors.col(i))(0, 0).real();
  return m;
}

inline Mat support_power(const Support& s, double p) {
  RVec w(s.e.values.size());
  for (int i = 0; i < w.size(); ++i) w(i) = s.in_support(i) ? std::pow(s.e.values(i), p) : 0.0;
  return s.e.vectors * w.asDiagonal() * s.e.vectors.adjoint();
}

inline void check_alpha(double alpha) {
  require(std::isfinite(alpha) && alpha > 0.0, ErrorCode::invalid_argument, "order alpha must be positive and finite");
}

inline void check_pair(const Mat& rho, const Mat& sigma) {
  require(rho.rows() == sigma.rows() && rho.cols() == sigma.cols(), ErrorCode::shape_mismatch,
          "states act on different spaces");
}

}  // namespace detail

inline double von_neumann_entropy(const Mat& rho) {
  const RVec w = eigvalsh(rho);
  double s = 0;
  for (int i = 0; i < w.size(); ++i)
    if (w(i) > 0) s -= w(i) * std::log(w(i));
  return s;
}

inline double von_neumann_entropy(const DensityOperator& rho) { return von_neumann_entropy(rho.matrix()); }

// D(rho||sigma) = Tr rho (log rho - log sigma); 0 log 0 = 0.
inline DivergenceValue relative_entropy(const Mat& rho, const Mat& sigma, const Config& cfg = default_config()) {
  detail::check_pair(rho, sigma);
  const auto s = detail::support_of(sigma, cfg);
  if (detail::kernel_mass(rho, s) > cfg.tol.support_mass) return DivergenceValue::inf();
  double cross = 0;
  for (int i = 0; i < s.e.values.size(); ++i) {
    if (!s.in_support(i)) continue;
    const double w = (s.e.vectors.col(i).adjoint() * rho * s.e.vectors.col(i))(0, 0).real();
    cross += w * std::log(s.e.values(i));
  }
  return {-von_neumann_entropy(rho) - cross, false};
}

inline DivergenceValue relative_entropy(const DensityOperator& rho, const DensityOperator& sigma,
                                        const Config& cfg = default_config()) {
  return relative_entropy(rho.matrix(), sigma.matrix(), cfg);
}

// (1/(alpha-1)) log Tr[(sigma^g rho sigma^g)^alpha], g = (1-alpha)/(2 alpha).
inline DivergenceValue sandwiched_renyi(const Mat& rho, const Mat& sigma, double alpha,
                                        const Config& cfg = default_config()) {
  detail::check_alpha(alpha);
  detail::check_pair(rho, sigma);
  if (alpha == 1.0) return relative_entropy(rho, sigma, cfg);
  const auto s = detail::support_of(sigma, cfg);
  if (alpha > 1.0 && detail::kernel_mass(rho, s) > cfg.tol.support_mass) return DivergenceValue::inf();
  const Mat sg = detail::support_power(s, (1.0 - alpha) / (2.0 * alpha));
  const RVec w = eigvalsh(sg * rho * sg);
  const double cut = cfg.tol.support_cut * std::max(spectral_radius(w), 1e-300);
  double q = 0;
  for (int i = 0; i < w.size(); ++i)
    if (w(i) > cut) q += std::pow(w(i), alpha);
  if (q <= 0) return DivergenceValue::inf();
  return {std::log(q) / (alpha - 1.0), false};
}

inline DivergenceValue sandwiched_renyi(const DensityOperator& rho, const DensityOperator& sigma, double alpha,
                                        const Config& cfg = default_config()) {
  return sandwiched_renyi(rho.matrix(), sigma.matrix(), alpha, cfg);
}

// (1/(alpha-1)) log Tr[rho^alpha sigma^(1-alpha)].
inline DivergenceValue petz_renyi(const Mat& rho, const Mat& sigma, double alpha, const Config& cfg = default_config()) {
  detail::check_alpha(alpha);
  detail::check_pair(rho, sigma);
  if (alpha == 1.0) return relative_entropy(rho, sigma, cfg);
  const auto s = detail::support_of(sigma, cfg);
  if (alpha > 1.0 && detail::kernel_mass(rho, s) > cfg.tol.support_mass) return DivergenceValue::inf();
  const Eigh er = eigh(rho);
  const double cut = cfg.tol.support_cut * std::max(spectral_radius(er.values), 1e-300);
  const Mat ra = apply_spectral(er, [alpha, cut](double x) { return x > cut ? std::pow(x, alpha) : 0.0; });
  const double q = inner(ra, detail::support_power(s, 1.0 - alpha));
  if (q <= 0) return DivergenceValue::inf();
  return {std::log(q) / (alpha - 1.0), false};
}

inline DivergenceValue petz_renyi(const DensityOperator& rho, const DensityOperator& sigma, double alpha,
                                  const Config& cfg = default_config()) {
  return petz_renyi(rho.matrix(), sigma.matrix(), alpha, cfg);
}

inline double nats_to_bits(double nats) { return nats / std::log(2.0); }

}  // namespace qstein
