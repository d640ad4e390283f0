#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qstein/divergences.hpp"
#include "qstein/qcore.hpp"
#include "qstein/sdp.hpp"
#include "qstein/symmetry.hpp"

namespace qstein {

// conv{vertices}; every vertex is a density matrix on layout.
struct VertexPolytope {
  std::vector<Mat> vertices;
  DimLayout layout;
};

// conv{U_g sigma0 U_g^dagger : g in G}.
struct GroupOrbitHull {
  Mat seed;
  std::vector<Mat> unitaries;
  DimLayout layout;
};

// States whose partial transpose on b_factors is PSD. With symmetric set, the
// set is intersected with the permutation-invariant states over `sites` sites.
// With choi_in_factors non-empty, members are Choi states: the marginal on those factors is I/d_in.
struct PptSet {
  DimLayout layout;
  std::vector<int> b_factors;
  int sites = 1;
  bool symmetric = false;
  std::vector<int> choi_in_factors;
};

class ConvexStateSet {
 public:
  using Rep = std::variant<VertexPolytope, GroupOrbitHull, PptSet>;

  explicit ConvexStateSet(Rep r) : rep_(std::move(r)) { validate(); }

  static ConvexStateSet polytope(std::vector<Mat> vertices, DimLayout layout) {
    return ConvexStateSet(VertexPolytope{std::move(vertices), std::move(layout)});
  }
  static ConvexStateSet orbit(Mat seed, std::vector<Mat> unitaries, DimLayout layout) {
    return ConvexStateSet(GroupOrbitHull{std::move(seed), std::move(unitaries), std::move(layout)});
  }
  // PPT states on n sites (A_1 B_1 ... A_n B_n), transposing every B factor.
  static ConvexStateSet ppt_pairs(int da, int db, int n, bool symmetric = false) {
    std::vector<int> dims, bf;
    for (int i = 0; i < n; ++i) {
      dims.push_back(da);
      dims.push_back(db);
      bf.push_back(2 * i + 1);
    }
    return ConvexStateSet(PptSet{DimLayout(dims), bf, n, symmetric, {}});
  }
  // Choi states of PPT channels in per-copy order (in_1 out_1 ... in_n out_n).
  static ConvexStateSet ppt_channels(int din, int dout, int n, bool symmetric = false) {
    auto s = std::get<PptSet>(ppt_pairs(din, dout, n, symmetric).rep());
    for (int i = 0; i < n; ++i) s.choi_in_factors.push_back(2 * i);
    return ConvexStateSet(s);
  }

  const Rep& rep() const { return rep_; }
  bool is_polytope() const { return std::holds_alternative<VertexPolytope>(rep_); }
  bool is_orbit() const { return std::holds_alternative<GroupOrbitHull>(rep_); }
  bool is_ppt() const { return std::holds_alternative<PptSet>(rep_); }
  bool has_vertices() const { return !is_ppt(); }

  const DimLayout& layout() const {
    return std::visit([](const auto& r) -> const DimLayout& { return r.layout; }, rep_);
  }
  int dim() const { return layout().total(); }

  // Extreme points (distinct orbit elements for an orbit hull).
  std::vector<Mat> vertices() const {
    if (const auto* p = std::get_if<VertexPolytope>(&rep_)) return p->vertices;
    if (const auto* o = std::get_if<GroupOrbitHull>(&rep_)) {
      std::vector<Mat> out;
      for (const Mat& u : o->unitaries) {
        const Mat v = hermitize(u * o->seed * u.adjoint());
        bool dup = false;
        for (const Mat& w : out)
          if (max_abs(w - v) <= 1e-12) dup = true;
        if (!dup) out.push_back(v);
      }
      return out;
    }
    throw Error(ErrorCode::representation_unsupported, "PPT sets have no finite vertex list");
  }

  ConvexStateSet as_polytope() const { return polytope(vertices(), layout()); }

 private:
  Rep rep_;

  void validate() const {
    const int d = layout().total();
    if (const auto* p = std::get_if<VertexPolytope>(&rep_)) {
      require(!p->vertices.empty(), ErrorCode::invalid_argument, "polytope needs at least one vertex");
      for (const Mat& v : p->vertices) DensityOperator(v, p->layout);
    } else if (const auto* o = std::get_if<GroupOrbitHull>(&rep_)) {
      require(!o->unitaries.empty(), ErrorCode::invalid_argument, "orbit needs at least one group element");
      DensityOperator(o->seed, o->layout);
      for (const Mat& u : o->unitaries) {
        require(u.rows() == d && u.cols() == d, ErrorCode::shape_mismatch, "unitary shape");
        require(max_abs(u * u.adjoint() - identity(d)) <= 1e-10, ErrorCode::invalid_argument, "matrix is not unitary");
      }
    } else {
      const auto& s = std::get<PptSet>(rep_);
      for (int f : s.b_factors)
        require(f >= 0 && f < s.layout.factors(), ErrorCode::invalid_layout, "transposed factor out of range");
      if (s.symmetric) require(s.sites >= 1 && s.layout.factors() % s.sites == 0, ErrorCode::invalid_layout, "sites");
      for (int f : s.choi_in_factors)
        require(f >= 0 && f < s.layout.factors(), ErrorCode::invalid_layout, "Choi input factor out of range");
    }
  }
};

// ---------- group averaging ----------

// Closure of a finite unitary group up to global phases.
inline bool is_closed_group(const std::vector<Mat>& us, double tol = 1e-9) {
  if (us.empty()) return false;
  const int d = static_cast<int>(us.front().rows());
  auto find = [&](const Mat& w) {
    for (const Mat& v : us)
      if (std::abs(std::abs((v.adjoint() * w).trace()) - d) <= tol * d) return true;
    return false;
  };
  for (const Mat& a : us)
    for (const Mat& b : us)
      if (!find(a * b)) return false;
  return true;
}

// (1/|G|) sum_g U_g sigma U_g^dagger.
inline Mat averaged_state(const Mat& sigma, const std::vector<Mat>& unitaries) {
  require(is_closed_group(unitaries), ErrorCode::group_not_closed, "unitaries do not form a group");
  Mat acc = Mat::Zero(sigma.rows(), sigma.cols());
  for (const Mat& u : unitaries) acc += u * sigma * u.adjoint();
  return hermitize(acc / static_cast<double>(unitaries.size()));
}

inline DensityOperator averaged_state(const DensityOperator& sigma, const std::vector<Mat>& unitaries) {
  return DensityOperator(averaged_state(sigma.matrix(), unitaries), sigma.layout());
}

inline std::vector<Mat> tensor_power_group(const std::vector<Mat>& us, int n) {
  std::vector<Mat> out;
  for (const Mat& u : us) out.push_back(tensor_power(u, n));
  return out;
}

// ---------- SDP building blocks for PPT sets ----------

namespace detail {

inline std::function<Mat(const Mat&)> pt_map(const PptSet& s, double a = 1.0) {
  return [s, a](const Mat& h) { return Mat(partial_transpose(h, s.layout, s.b_factors) * a); };
}

// H on the kept factors -> H (x) I on the rest, in the original factor order.
inline Mat embed_factors(const Mat& h, const DimLayout& l, const std::vector<int>& keep) {
  const auto rest = complement(l.factors(), keep);
  std::vector<int> order = keep, dims;
  order.insert(order.end(), rest.begin(), rest.end());
  int drest = 1;
  for (int f : rest) drest *= l.dim(f);
  for (int f : order) dims.push_back(l.dim(f));
  return permute_factors(kron(h, identity(drest)), DimLayout(dims), order);
}

// Choi marginal Tr_out[sigma] - Tr[sigma] I/d_in, as an adjoint map for matrix equalities.
inline std::function<Mat(const Mat&)> marginal_map(const PptSet& s) {
  return [s](const Mat& h) {
    int din = 1;
    for (int f : s.choi_in_factors) din *= s.layout.dim(f);
    return Mat(embed_factors(h, s.layout, s.choi_in_factors) - (re_trace(h) / din) * identity(s.layout.total()));
  };
}

inline double marginal_residual(const PptSet& s, const Mat& sigma) {
  if (s.choi_in_factors.empty()) return 0.0;
  const Mat m = partial_trace(sigma, s.layout, s.choi_in_factors);
  return max_abs(m - re_trace(sigma) * identity(static_cast<int>(m.rows())) / static_cast<double>(m.rows()));
}

// Adds sigma >= 0 with sigma^Gamma = Z >= 0 (and the Choi marginal when declared). Returns the block of sigma.
inline int add_ppt_variable(SdpProblem& p, const PptSet& s) {
  const int d = s.layout.total();
  const int sig = p.add_block(d), z = p.add_block(d);
  add_matrix_equality(p, d, {{sig, pt_map(s)}, {z, scaled_map(-1.0)}}, Mat::Zero(d, d));
  if (!s.choi_in_factors.empty()) {
    int din = 1;
    for (int f : s.choi_in_factors) din *= s.layout.dim(f);
    add_matrix_equality(p, din, {{sig, marginal_map(s)}}, Mat::Zero(din, din));
  }
  return sig;
}

inline int site_dim(const PptSet& s) { return s.layout.total() == 1 ? 1 : static_cast<int>(std::lround(std::pow(s.layout.total(), 1.0 / s.sites))); }

}  // namespace detail

// argmin_{sigma in S} Tr[G sigma].
inline Mat linear_minimizer(const ConvexStateSet& set, const Mat& g, const SdpOptions& opt = {}) {
  if (set.has_vertices()) {
    const auto vs = set.vertices();
    std::size_t best = 0;
    double bv = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < vs.size(); ++k) {
      const double v = inner(g, vs[k]);
      if (v < bv) {
        bv = v;
        best = k;
      }
    }
    return vs[best];
  }
  const auto& s = std::get<PptSet>(set.rep());
  const int d = s.layout.total();
  const Mat gg = s.symmetric ? twirl(g, detail::site_dim(s), s.sites) : g;
  SdpProblem p;
  const int sig = detail::add_ppt_variable(p, s);
  p.set_objective(sig, gg);
  p.add_constraint({{{sig, identity(d)}}, Sense::eq, 1.0});
  const auto sol = solve_sdp(p, opt);
  require(sol.ok(), ErrorCode::numerical_failure, "PPT linear minimisation did not converge: " + sol.message);
  Mat x = sol.primal[static_cast<std::size_t>(sig)];
  if (s.symmetric) x = twirl(x, detail::site_dim(s), s.sites);
  return hermitize(x / re_trace(x));
}

// ---------- membership and distance ----------

struct MembershipResult {
  bool member = false;
  double residual = 0;             // L1 residual (polytope) or -lambda_min of the partial transpose (PPT)
  std::vector<double> weights;     // convex weights certifying membership (finite sets)
};

inline MembershipResult membership(const ConvexStateSet& set, const Mat& sigma, double tol = 1e-7,
                                   const SdpOptions& opt = {}) {
  require(sigma.rows() == set.dim(), ErrorCode::shape_mismatch, "state does not match set dimension");
  MembershipResult r;
  if (set.is_ppt()) {
    const auto& s = std::get<PptSet>(set.rep());
    const double a = lambda_min(sigma), b = lambda_min(partial_transpose(sigma, s.layout, s.b_factors));
    r.residual = std::max({0.0, -a, -b, std::abs(re_trace(sigma) - 1.0), detail::marginal_residual(s, sigma)});
    if (s.symmetric && !is_permutation_invariant(sigma, detail::site_dim(s), s.sites, tol))
      r.residual = std::max(r.residual, 1.0);
    r.member = r.residual <= tol;
    return r;
  }
  // min sum(u + v) s.t. sum_k w_k c(V_k) + u - v = c(sigma), sum w = 1 over Hermitian coordinates
  const auto vs = set.vertices();
  const int d = set.dim(), k = static_cast<int>(vs.size()), n = d * d;
  std::vector<RVec> coords;
  for (const Mat& v : vs) coords.push_back(hermitian_coords(v));
  const RVec target = hermitian_coords(hermitize(sigma));
  SdpProblem p;
  const int w = p.add_block(k, BlockKind::diagonal), uv = p.add_block(2 * n, BlockKind::diagonal);
  p.set_objective(uv, Mat::Ones(2 * n, 1));
  for (int i = 0; i < n; ++i) {
    Mat cw(k, 1), cu = Mat::Zero(2 * n, 1);
    for (int j = 0; j < k; ++j) cw(j, 0) = coords[static_cast<std::size_t>(j)](i);
    cu(i, 0) = 1.0;
    cu(n + i, 0) = -1.0;
    p.add_constraint({{{w, cw}, {uv, cu}}, Sense::eq, target(i)});
  }
  p.add_constraint({{{w, Mat::Ones(k, 1)}}, Sense::eq, 1.0});
  const auto sol = solve_sdp(p, opt);
  require(sol.ok(), ErrorCode::numerical_failure, "membership LP failed: " + sol.message);
  r.residual = std::max(0.0, sol.primal_obj);
  for (int j = 0; j < k; ++j) r.weights.push_back(std::max(0.0, sol.primal[0](j, 0).real()));
  r.member = r.residual <= tol;
  return r;
}

struct DistanceResult {
  double distance = 0;  // min ||sigma - tau||_1 over tau in S
  Mat nearest;
};

inline DistanceResult trace_distance_to_set(const ConvexStateSet& set, const Mat& sigma, const SdpOptions& opt = {}) {
  const int d = set.dim();
  require(sigma.rows() == d, ErrorCode::shape_mismatch, "state does not match set dimension");
  SdpProblem p;
  const int pp = p.add_block(d), nn = p.add_block(d);
  p.set_objective(pp, identity(d));
  p.set_objective(nn, identity(d));
  int tau = -1, w = -1;
  std::vector<Mat> vs;
  if (set.is_ppt()) {
    const auto& s = std::get<PptSet>(set.rep());
    require(!s.symmetric, ErrorCode::representation_unsupported, "distance to the symmetric PPT subset");
    tau = detail::add_ppt_variable(p, s);
    add_matrix_equality(p, d, {{pp, identity_map()}, {nn, scaled_map(-1.0)}, {tau, identity_map()}}, sigma);
    p.add_constraint({{{tau, identity(d)}}, Sense::eq, 1.0});
  } else {
    vs = set.vertices();
    w = p.add_block(static_cast<int>(vs.size()), BlockKind::diagonal);
    add_matrix_equality(p, d, {{pp, identity_map()}, {nn, scaled_map(-1.0)}, {w, weighted_sum(vs)}}, sigma);
    p.add_constraint({{{w, Mat::Ones(static_cast<int>(vs.size()), 1)}}, Sense::eq, 1.0});
  }
  const auto sol = solve_sdp(p, opt);
  require(sol.ok(), ErrorCode::numerical_failure, "distance SDP failed: " + sol.message);
  DistanceResult r;
  r.distance = std::max(0.0, sol.primal_obj);
  if (tau >= 0) {
    r.nearest = sol.primal[static_cast<std::size_t>(tau)];
  } else {
    r.nearest = Mat::Zero(d, d);
    for (std::size_t k = 0; k < vs.size(); ++k) r.nearest += sol.primal[static_cast<std::size_t>(w)](static_cast<int>(k), 0).real() * vs[k];
  }
  return r;
}

// ---------- symmetrised subset ----------

// Checks that the vertex set of a finite set is closed under site permutations.
inline bool vertex_permutation_closed(const std::vector<Mat>& vs, int site_dim, int n, double tol = 1e-10) {
  if (n <= 1) return true;
  const DimLayout l = DimLayout::uniform(site_dim, n);
  std::vector<int> swap01(static_cast<std::size_t>(n)), cycle(static_cast<std::size_t>(n));
  std::iota(swap01.begin(), swap01.end(), 0);
  std::swap(swap01[0], swap01[1]);
  for (int j = 0; j < n; ++j) cycle[static_cast<std::size_t>(j)] = (j + 1) % n;
  for (const Mat& v : vs)
    for (const auto& g : {swap01, cycle}) {
      const Mat pv = permute_factors(v, l, g);
      bool found = false;
      for (const Mat& w : vs)
        if (max_abs(w - pv) <= tol) {
          found = true;
          break;
        }
      if (!found) return false;
    }
  return true;
}

// S intersected with the permutation-invariant states over n sites of size site_dim.
inline ConvexStateSet symmetrized_subset(const ConvexStateSet& set, int site_dim, int n) {
  require(set.dim() == static_cast<int>(std::lround(std::pow(site_dim, n))), ErrorCode::shape_mismatch,
          "set dimension does not match sites");
  if (set.is_ppt()) {
    auto s = std::get<PptSet>(set.rep());
    require(s.sites == n, ErrorCode::invalid_layout, "PPT set sites differ from n");
    s.symmetric = true;
    return ConvexStateSet(s);
  }
  const auto vs = set.vertices();
  require(vertex_permutation_closed(vs, site_dim, n), ErrorCode::permutation_closure,
          "set is not closed under site permutations");
  std::vector<Mat> out;
  for (const Mat& v : vs) {
    const Mat t = twirl(v, site_dim, n);
    bool dup = false;
    for (const Mat& w : out)
      if (max_abs(w - t) <= 1e-12) dup = true;
    if (!dup) out.push_back(t);
  }
  return ConvexStateSet::polytope(out, set.layout());
}

// ---------- relative entropy minimisation ----------

struct FwOptions {
  double gap_tol = 1e-9;
  int max_iterations = 10000;
  int max_lmo_calls = 200;        // SDP-backed sets
  int inner_iterations = 300;     // hull iterations between two SDP oracle calls
  double line_search_tol = 1e-14;
  SdpOptions sdp{};
};

struct RelEntropyResult {
  double value = 0;    // D(rho || argmin), nats
  bool infinite = false;
  Mat argmin;
  double gap = 0;      // Frank-Wolfe certificate: value - gap <= true minimum
  int iterations = 0;
  bool converged = false;
  std::vector<Mat> atoms;
  std::vector<double> weights;
};

namespace detail {

// f(sigma) = -Tr rho log sigma; +inf outside the support condition.
inline double cross_entropy(const Mat& rho, const Mat& sigma) {
  const Eigh e = eigh(sigma);
  const double cut = 1e-14 * std::max(1e-300, spectral_radius(e.values));
  const Mat r = e.vectors.adjoint() * rho * e.vectors;
  double f = 0;
  for (int i = 0; i < e.values.size(); ++i) {
    const double w = r(i, i).real();
    if (e.values(i) <= cut) {
      if (w > 1e-12) return std::numeric_limits<double>::infinity();
      continue;
    }
    f -= w * std::log(e.values(i));
  }
  return f;
}

// -Dlog[sigma](rho) via the Daleckii-Krein divided differences.
inline Mat cross_entropy_gradient(const Mat& rho, const Mat& sigma) {
  const Eigh e = eigh(sigma);
  const int d = static_cast<int>(e.values.size());
  const double cut = 1e-14 * std::max(1e-300, spectral_radius(e.values));
  Mat r = e.vectors.adjoint() * rho * e.vectors;
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) {
      const double qi = e.values(i), qj = e.values(j);
      double gamma;
      if (qi <= cut || qj <= cut) {
        gamma = 0.0;
      } else if (std::abs(qi - qj) <= 1e-10 * std::max(qi, qj)) {
        gamma = 2.0 / (qi + qj);
      } else {
        gamma = (std::log(qi) - std::log(qj)) / (qi - qj);
      }
      r(i, j) *= -gamma;
    }
  return hermitize(e.vectors * r * e.vectors.adjoint());
}

// Exact line search for the convex phi(g) = f(base + g dir) on [0, gmax]: bisection on phi'.
inline double line_search(const Mat& rho, const Mat& base, const Mat& dir, double gmax, double tol) {
  auto dphi = [&](double g) {
    const Mat x = base + g * dir;
    if (!std::isfinite(cross_entropy(rho, x))) return std::numeric_limits<double>::infinity();
    return inner(cross_entropy_gradient(rho, x), dir);
  };
  if (dphi(gmax) <= 0) return gmax;
  double lo = 0, hi = gmax;
  while (hi - lo > tol * gmax) {
    const double mid = 0.5 * (lo + hi);
    const double d = dphi(mid);
    if (d == 0) return mid;
    (d < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Away-step Frank-Wolfe over conv(atoms) for f = cross_entropy(rho, .). Mutates weights.
struct HullState {
  std::vector<Mat> atoms;
  std::vector<double> w;
  Mat sigma;
  double f = 0;
  double gap = 0;
  int iterations = 0;
};

inline void hull_refresh(HullState& s) {
  s.sigma = Mat::Zero(s.atoms.front().rows(), s.atoms.front().cols());
  for (std::size_t k = 0; k < s.atoms.size(); ++k)
    if (s.w[k] > 0) s.sigma += s.w[k] * s.atoms[k];
  s.sigma = hermitize(s.sigma);
}

inline void afw_over_hull(const Mat& rho, HullState& s, double gap_tol, int max_iter, double ls_tol) {
  hull_refresh(s);
  s.f = cross_entropy(rho, s.sigma);
  for (int it = 0; it < max_iter; ++it) {
    ++s.iterations;
    const Mat g = cross_entropy_gradient(rho, s.sigma);
    const double gs = inner(g, s.sigma);
    std::size_t fw = 0, aw = 0;
    double cfw = std::numeric_limits<double>::infinity(), caw = -std::numeric_limits<double>::infinity();
    std::vector<double> scores(s.atoms.size());
    for (std::size_t k = 0; k < s.atoms.size(); ++k) {
      scores[k] = inner(g, s.atoms[k]);
      if (scores[k] < cfw) {
        cfw = scores[k];
        fw = k;
      }
      if (s.w[k] > 0 && scores[k] > caw) {
        caw = scores[k];
        aw = k;
      }
    }
    const double gfw = gs - cfw, gaw = caw - gs;
    s.gap = std::max(0.0, gfw);
    if (gfw <= gap_tol) return;
    Mat dir;
    double gmax;
    bool away = false;
    if (gfw >= gaw || s.w[aw] >= 1.0) {
      dir = s.atoms[fw] - s.sigma;
      gmax = 1.0;
    } else {
      dir = s.sigma - s.atoms[aw];
      gmax = s.w[aw] / (1.0 - s.w[aw]);
      away = true;
    }
    const Mat base = s.sigma;
    auto phi = [&](double gam) { return cross_entropy(rho, base + gam * dir); };
    const double gam = line_search(rho, base, dir, gmax, ls_tol);
    const double fnew = phi(gam);
    if (!(fnew < s.f) || gam <= 0) return;  // no descent possible at this precision
    if (away) {
      for (auto& x : s.w) x *= (1.0 + gam);
      s.w[aw] -= gam;
      if (gam >= gmax * (1 - 1e-12)) s.w[aw] = 0.0;
    } else {
      for (auto& x : s.w) x *= (1.0 - gam);
      s.w[fw] += gam;
    }
    double tot = 0;
    for (auto& x : s.w) {
      x = std::max(0.0, x);
      tot += x;
    }
    for (auto& x : s.w) x /= tot;
    hull_refresh(s);
    s.f = cross_entropy(rho, s.sigma);
  }
}

}  // namespace detail

// min_{sigma in S} D(rho || sigma) with a Frank-Wolfe gap certificate.
// seeds: optional warm-start atoms for SDP-backed sets; seeds that fail membership are dropped.
inline RelEntropyResult min_relative_entropy(const Mat& rho, const ConvexStateSet& set, const FwOptions& opt = {},
                                             const std::vector<Mat>& seeds = {}) {
  require(rho.rows() == set.dim(), ErrorCode::shape_mismatch, "state does not match set dimension");
  const double ent = von_neumann_entropy(rho);
  RelEntropyResult r;
  detail::HullState s;
  if (set.has_vertices()) {
    s.atoms = set.vertices();
    s.w.assign(s.atoms.size(), 1.0 / static_cast<double>(s.atoms.size()));
    detail::afw_over_hull(rho, s, opt.gap_tol, opt.max_iterations, opt.line_search_tol);
    r.converged = s.gap <= opt.gap_tol;
  } else {
    // fully corrective: optimise over the collected atoms, then query the SDP oracle
    const int d = set.dim();
    s.atoms = {identity(d) / static_cast<double>(d)};
    s.w = {1.0};
    double best = detail::cross_entropy(rho, s.atoms.front());
    for (const Mat& x : seeds) {
      if (x.rows() != d || !membership(set, x, 1e-8, opt.sdp).member) continue;
      const double fx = detail::cross_entropy(rho, x);
      s.atoms.push_back(x);
      s.w.push_back(0.0);
      if (fx < best) {
        best = fx;
        std::fill(s.w.begin(), s.w.end(), 0.0);
        s.w.back() = 1.0;
      }
    }
    for (int call = 0; call < opt.max_lmo_calls; ++call) {
      detail::afw_over_hull(rho, s, opt.gap_tol * 0.1, std::min(opt.max_iterations, opt.inner_iterations),
                            opt.line_search_tol);
      const Mat g = detail::cross_entropy_gradient(rho, s.sigma);
      const Mat v = linear_minimizer(set, g, opt.sdp);
      s.gap = std::max(0.0, inner(g, s.sigma) - inner(g, v));
      if (s.gap <= opt.gap_tol) {
        r.converged = true;
        break;
      }
      s.atoms.push_back(v);
      s.w.push_back(0.0);
    }
  }
  r.argmin = s.sigma;
  r.iterations = s.iterations;
  r.gap = s.gap;
  r.atoms = s.atoms;
  r.weights = s.w;
  const double f = detail::cross_entropy(rho, s.sigma);
  r.infinite = !std::isfinite(f);
  r.value = r.infinite ? std::numeric_limits<double>::infinity() : f - ent;
  return r;
}

inline RelEntropyResult min_relative_entropy(const DensityOperator& rho, const ConvexStateSet& set,
                                             const FwOptions& opt = {}) {
  return min_relative_entropy(rho.matrix(), set, opt);
}

// ---------- free families ----------

enum class FamilyKind { product_polytope, orbit_diagonal, ppt_pairs };

// A sequence S_1, S_2, ... of free sets on (site)^n.
class FreeFamily {
 public:
  // S_n = conv{v_1 (x) ... (x) v_n : v_i in base}. A single vertex gives the iid family {sigma^(x)n}.
  static FreeFamily product_polytope(std::vector<Mat> base, DimLayout site) {
    FreeFamily f;
    f.kind_ = FamilyKind::product_polytope;
    f.base_ = std::move(base);
    f.site_ = std::move(site);
    ConvexStateSet::polytope(f.base_, f.site_);
    Mat bary = Mat::Zero(f.site_.total(), f.site_.total());
    for (const Mat& v : f.base_) bary += v;
    f.full_ = hermitize(bary / static_cast<double>(f.base_.size()));
    return f;
  }
  // S_n = conv{(U sigma0 U^dagger)^(x)n : U in G}.
  static FreeFamily orbit_diagonal(Mat seed, std::vector<Mat> group, DimLayout site) {
    FreeFamily f;
    f.kind_ = FamilyKind::orbit_diagonal;
    require(is_closed_group(group), ErrorCode::group_not_closed, "unitaries do not form a group");
    f.base_ = {seed};
    f.group_ = std::move(group);
    f.site_ = std::move(site);
    f.full_ = seed;
    return f;
  }
  // PPT states across A_1..A_n | B_1..B_n; with choi set, Choi states of PPT channels A -> B.
  static FreeFamily ppt_pairs(int da, int db, bool choi = false) {
    FreeFamily f;
    f.choi_ = choi;
    f.kind_ = FamilyKind::ppt_pairs;
    f.da_ = da;
    f.db_ = db;
    f.site_ = DimLayout({da, db});
    f.full_ = identity(da * db) / static_cast<double>(da * db);
    return f;
  }

  FamilyKind kind() const { return kind_; }
  const DimLayout& site() const { return site_; }
  int site_dim() const { return site_.total(); }
  const std::vector<Mat>& base() const { return base_; }
  const std::vector<Mat>& group() const { return group_; }

  // Full-rank member whose tensor powers lie in every S_n.
  const Mat& sigma_full() const { return full_; }
  Mat sigma_full(int n) const { return tensor_power(full_, n); }
  // -log lambda_min(sigma_full); +inf when sigma_full is singular.
  double lambda() const {
    const double m = lambda_min(full_);
    return m > 1e-14 ? -std::log(m) : std::numeric_limits<double>::infinity();
  }

  ConvexStateSet level(int n, const Config& cfg = default_config()) const {
    require(n >= 1, ErrorCode::invalid_argument, "level needs n >= 1");
    const DimLayout l = site_.power(n, cfg);
    switch (kind_) {
      case FamilyKind::product_polytope: {
        std::vector<Mat> vs = base_;
        for (int k = 1; k < n; ++k) {
          std::vector<Mat> next;
          for (const Mat& a : vs)
            for (const Mat& b : base_) next.push_back(kron(a, b));
          vs.swap(next);
        }
        return ConvexStateSet::polytope(vs, l);
      }
      case FamilyKind::orbit_diagonal:
        return ConvexStateSet::orbit(tensor_power(base_.front(), n, cfg), tensor_power_group(group_, n), l);
      case FamilyKind::ppt_pairs:
        return choi_ ? ConvexStateSet::ppt_channels(da_, db_, n) : ConvexStateSet::ppt_pairs(da_, db_, n);
    }
    throw Error(ErrorCode::invalid_argument, "unknown family");
  }

 private:
  FamilyKind kind_ = FamilyKind::product_polytope;
  std::vector<Mat> base_;
  std::vector<Mat> group_;
  DimLayout site_{};
  Mat full_;
  int da_ = 1, db_ = 1;
  bool choi_ = false;
};

struct FamilyConditionReport {
  bool convex_closed = true;       // structural
  bool permutation_closed = false;
  bool tensor_closed = false;
  bool full_rank_member = false;
  std::string detail;
  bool all() const { return convex_closed && permutation_closed && tensor_closed && full_rank_member; }
};

// Spot checks of the structural family conditions up to level n_max.
inline FamilyConditionReport check_family_conditions(const FreeFamily& fam, int n_max) {
  FamilyConditionReport r;
  r.permutation_closed = true;
  r.tensor_closed = true;
  r.full_rank_member = std::isfinite(fam.lambda());
  for (int n = 1; n <= n_max; ++n) {
    const auto s = fam.level(n);
    if (fam.kind() != FamilyKind::ppt_pairs) {
      if (!vertex_permutation_closed(s.vertices(), fam.site_dim(), n)) r.permutation_closed = false;
    }
    if (r.full_rank_member && !membership(s, fam.sigma_full(n)).member) r.full_rank_member = false;
    for (int m = 1; n + m <= n_max; ++m) {
      const auto sm = fam.level(m);
      const auto snm = fam.level(n + m);
      Mat a, b;
      if (s.has_vertices()) {
        a = s.vertices().front();
        b = sm.vertices().back();
      } else {
        a = fam.sigma_full(n);
        b = fam.sigma_full(m);
      }
      if (!membership(snm, kron(a, b)).member) r.tensor_closed = false;
    }
  }
  if (!r.full_rank_member) r.detail = "no full-rank member sigma_full^(x)n";
  return r;
}

struct RegularizedEstimate {
  std::vector<double> f;        // f(n) = min D(rho^(x)n || S_n), n = 1..n_max
  std::vector<double> per_copy; // f(n)/n
  double estimate = 0;          // min_n f(n)/n
  double worst_subadditivity = 0;  // max f(n+m) - f(n) - f(m)
};

// Fekete estimate of the regularised relative entropy; throws on a subadditivity violation beyond tol.
inline RegularizedEstimate regularized_entropy_estimate(const Mat& rho, const FreeFamily& fam, int n_max,
                                                        const FwOptions& opt = {}, double tol = 1e-6) {
  require(n_max >= 1, ErrorCode::invalid_argument, "n_max must be positive");
  require(rho.rows() == fam.site_dim(), ErrorCode::shape_mismatch, "state does not match family site");
  RegularizedEstimate r;
  std::vector<Mat> argmins;
  for (int n = 1; n <= n_max; ++n) {
    // products of lower-level minimisers keep f subadditive when the oracle stops early
    std::vector<Mat> seeds;
    for (int m = 1; 2 * m <= n; ++m)
      seeds.push_back(kron(argmins[static_cast<std::size_t>(m - 1)], argmins[static_cast<std::size_t>(n - m - 1)]));
    const auto res = min_relative_entropy(tensor_power(rho, n), fam.level(n), opt, seeds);
    argmins.push_back(res.argmin);
    r.f.push_back(res.value);
    r.per_copy.push_back(res.value / n);
  }
  r.estimate = *std::min_element(r.per_copy.begin(), r.per_copy.end());
  r.worst_subadditivity = -std::numeric_limits<double>::infinity();
  for (int n = 1; n <= n_max; ++n)
    for (int m = 1; n + m <= n_max; ++m)
      r.worst_subadditivity = std::max(r.worst_subadditivity, r.f[static_cast<std::size_t>(n + m - 1)] -
                                                                   r.f[static_cast<std::size_t>(n - 1)] -
                                                                   r.f[static_cast<std::size_t>(m - 1)]);
  require(!(r.worst_subadditivity > tol), ErrorCode::subadditivity_violated,
          "f(n+m) exceeds f(n) + f(m) by " + std::to_string(r.worst_subadditivity));
  return r;
}

}  // namespace qstein
