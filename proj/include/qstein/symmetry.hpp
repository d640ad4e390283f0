#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "qstein/divergences.hpp"
#include "qstein/qcore.hpp"

namespace qstein {

// All permutations of {0..n-1} in lexicographic order.
inline std::vector<std::vector<int>> all_permutations(int n) {
  std::vector<int> g(static_cast<std::size_t>(n));
  std::iota(g.begin(), g.end(), 0);
  std::vector<std::vector<int>> out;
  do out.push_back(g);
  while (std::next_permutation(g.begin(), g.end()));
  return out;
}

// (1/n!) sum_g U(g) X U(g)^dagger over n sites of dimension site_dim.
inline Mat twirl(const Mat& x, int site_dim, int n, const Config& cfg = default_config()) {
  require(n >= 1, ErrorCode::invalid_argument, "twirl needs at least one site");
  require(static_cast<std::size_t>(n) <= cfg.budget.max_perm_sites, ErrorCode::budget_exceeded,
          "too many sites for an explicit permutation sum");
  const DimLayout l = DimLayout::uniform(site_dim, n, cfg);
  require(x.rows() == l.total() && x.cols() == l.total(), ErrorCode::shape_mismatch, "matrix does not match sites");
  const int d = l.total();
  Mat acc = Mat::Zero(d, d);
  const auto perms = all_permutations(n);
  for (const auto& g : perms) {
    const auto map = permutation_index_map(l, g);
    for (int b = 0; b < d; ++b)
      for (int a = 0; a < d; ++a) acc(map[static_cast<std::size_t>(a)], map[static_cast<std::size_t>(b)]) += x(a, b);
  }
  return hermitize(acc / static_cast<double>(perms.size()));
}

inline DensityOperator twirl(const DensityOperator& rho, int site_dim, int n, const Config& cfg = default_config()) {
  return DensityOperator(twirl(rho.matrix(), site_dim, n, cfg), rho.layout(), cfg);
}

// Invariance under the generators (0 1) and the n-cycle.
inline bool is_permutation_invariant(const Mat& x, int site_dim, int n, double tol = 1e-10) {
  if (n <= 1) return true;
  const DimLayout l = DimLayout::uniform(site_dim, n);
  std::vector<int> swap01(static_cast<std::size_t>(n)), cycle(static_cast<std::size_t>(n));
  std::iota(swap01.begin(), swap01.end(), 0);
  std::swap(swap01[0], swap01[1]);
  for (int j = 0; j < n; ++j) cycle[static_cast<std::size_t>(j)] = (j + 1) % n;
  const double scale = std::max(1.0, max_abs(x));
  return max_abs(permute_factors(x, l, swap01) - x) <= tol * scale &&
         max_abs(permute_factors(x, l, cycle) - x) <= tol * scale;
}

// Pinching with respect to the eigenprojections of a Hermitian operator.
class PinchingMap {
 public:
  explicit PinchingMap(const Mat& sigma, const Config& cfg = default_config()) : e_(eigh(sigma)) {
    const auto groups = cluster_eigenvalues(e_.values, cfg.tol.cluster_rel);
    label_.assign(static_cast<std::size_t>(e_.values.size()), 0);
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (int i : groups[g]) label_[static_cast<std::size_t>(i)] = static_cast<int>(g);
    blocks_ = static_cast<int>(groups.size());
  }

  int num_blocks() const { return blocks_; }
  int dim() const { return static_cast<int>(e_.values.size()); }
  const RVec& eigenvalues() const { return e_.values; }

  Mat apply(const Mat& x) const {
    require(x.rows() == dim(), ErrorCode::shape_mismatch, "operator does not match pinching dimension");
    Mat y = e_.vectors.adjoint() * x * e_.vectors;
    for (int j = 0; j < dim(); ++j)
      for (int i = 0; i < dim(); ++i)
        if (label_[static_cast<std::size_t>(i)] != label_[static_cast<std::size_t>(j)]) y(i, j) = 0;
    return hermitize(e_.vectors * y * e_.vectors.adjoint());
  }

  DensityOperator apply(const DensityOperator& rho) const { return DensityOperator(apply(rho.matrix()), rho.layout()); }

  // Eigenprojections in ascending eigenvalue order.
  std::vector<Mat> projections() const {
    std::vector<Mat> ps(static_cast<std::size_t>(blocks_), Mat::Zero(dim(), dim()));
    for (int i = 0; i < dim(); ++i)
      ps[static_cast<std::size_t>(label_[static_cast<std::size_t>(i)])] += e_.vectors.col(i) * e_.vectors.col(i).adjoint();
    return ps;
  }

  // True when x is block diagonal with respect to the projections.
  bool commutes_with(const Mat& x, double tol = 1e-9) const {
    const Mat y = e_.vectors.adjoint() * x * e_.vectors;
    const double scale = std::max(1.0, max_abs(x));
    for (int j = 0; j < dim(); ++j)
      for (int i = 0; i < dim(); ++i)
        if (label_[static_cast<std::size_t>(i)] != label_[static_cast<std::size_t>(j)] && std::abs(y(i, j)) > tol * scale)
          return false;
    return true;
  }

 private:
  Eigh e_;
  std::vector<int> label_;
  int blocks_ = 0;
};

inline int distinct_eigenvalue_count(const Mat& sigma, const Config& cfg = default_config()) {
  return PinchingMap(sigma, cfg).num_blocks();
}

// (n+1)^((d+2)(d-1)/2), a bound on distinct eigenvalues of permutation-invariant states on (C^d)^n.
inline std::uint64_t eigenvalue_count_bound(int n, int d) {
  require(n >= 1 && d >= 1, ErrorCode::invalid_argument, "n and d must be positive");
  const std::uint64_t expo = static_cast<std::uint64_t>(d + 2) * static_cast<std::uint64_t>(d - 1) / 2;
  std::uint64_t r = 1;
  const std::uint64_t base = static_cast<std::uint64_t>(n) + 1;
  for (std::uint64_t i = 0; i < expo; ++i) {
    require(r <= UINT64_MAX / base, ErrorCode::budget_exceeded, "eigenvalue bound overflows 64 bits");
    r *= base;
  }
  return r;
}

struct PinchingAudit {
  double d_rho_pinched = 0;   // D(rho || E(rho))
  double entropy_drop = 0;    // D(rho||sigma) - D(E(rho)||sigma)
  double log_blocks = 0;
  int blocks = 0;
  double identity_residual = 0;
  bool identity_ok = false;
  bool bound_ok = false;
};

// Pinching identity D(rho||E rho) = D(rho||sigma) - D(E rho||sigma) and the log(#blocks) bound.
inline PinchingAudit pinching_entropy_identity_audit(const Mat& rho, const Mat& sigma, const Config& cfg = default_config()) {
  const PinchingMap e(sigma, cfg);
  const Mat er = e.apply(rho);
  const auto a = relative_entropy(rho, er, cfg);
  const auto b = relative_entropy(rho, sigma, cfg);
  const auto c = relative_entropy(er, sigma, cfg);
  require(!b.infinite && !c.infinite, ErrorCode::invalid_argument, "reference state must dominate rho");
  PinchingAudit out;
  out.d_rho_pinched = a.nats;
  out.entropy_drop = b.nats - c.nats;
  out.blocks = e.num_blocks();
  out.log_blocks = std::log(static_cast<double>(out.blocks));
  out.identity_residual = std::abs(out.d_rho_pinched - out.entropy_drop);
  out.identity_ok = !a.infinite && out.identity_residual <= 1e-7;
  out.bound_ok = !a.infinite && out.d_rho_pinched <= out.log_blocks + 1e-9;
  return out;
}

inline PinchingAudit pinching_entropy_identity_audit(const DensityOperator& rho, const DensityOperator& sigma,
                                                     const Config& cfg = default_config()) {
  return pinching_entropy_identity_audit(rho.matrix(), sigma.matrix(), cfg);
}

}  // namespace qstein
