#pragma once

// beta_eps(rho || sigma) = min { Tr[T sigma] : 0 <= T <= I, Tr[(I - T) rho] <= eps },
// and its composite version with a max over sigma in a convex set.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "qstein/divergences.hpp"
#include "qstein/freesets.hpp"
#include "qstein/qcore.hpp"
#include "qstein/sdp.hpp"

namespace qstein {

struct BetaResult {
  double value = 0;
  Mat test;
  double type1 = 0;                 // Tr[(I - T) rho]
  std::optional<Mat> dual_state;    // worst-case sigma* (composite)
  double dual_b = 0;                // minimiser b in the scalar dual (likelihood threshold for beta_simple)
  double dual_value = 0;            // min_b Tr[(rho - b sigma*)_+] + b * value
  double primal_power = 0;          // max { Tr[T rho] : max_sigma Tr[T sigma] <= value }
  std::vector<double> weights;      // convex weights of sigma* over the vertices, when finite
};

namespace detail {

inline void check_eps(double eps) {
  require(eps >= 0.0 && eps < 1.0, ErrorCode::invalid_argument, "eps must lie in [0, 1)");
}

inline double positive_trace(const Mat& a) {
  const RVec w = eigvalsh(a);
  double s = 0;
  for (int i = 0; i < w.size(); ++i)
    if (w(i) > 0) s += w(i);
  return s;
}

// Tr[P_{>0}(b rho - sigma) rho].
inline double accepted_mass(const Mat& rho, const Mat& sigma, double b) {
  const Eigh e = eigh(b * rho - sigma);
  const double tau = 1e-14 * std::max(1e-300, spectral_radius(e.values));
  double m = 0;
  for (int i = 0; i < e.values.size(); ++i)
    if (e.values(i) > tau) m += (e.vectors.col(i).adjoint() * rho * e.vectors.col(i))(0, 0).real();
  return m;
}

}  // namespace detail

// Neyman-Pearson construction: T = {b rho > sigma} + gamma {b rho = sigma}.
inline BetaResult beta_simple(const Mat& rho, const Mat& sigma, double eps, const Config& cfg = default_config()) {
  detail::check_eps(eps);
  require(rho.rows() == sigma.rows(), ErrorCode::shape_mismatch, "states act on different spaces");
  const int d = static_cast<int>(rho.rows());
  BetaResult r;
  if (eps == 0.0) {
    r.test = support_projector(rho, cfg);
  } else {
    const double target = 1.0 - eps;
    double lo = 0.0, hi = 1.0;
    int guard = 0;
    while (detail::accepted_mass(rho, sigma, hi) < target && guard++ < 200) {
      lo = hi;
      hi *= 2.0;
    }
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (detail::accepted_mass(rho, sigma, mid) < target ? lo : hi) = mid;
    }
    const double b = hi;
    const Eigh e = eigh(b * rho - sigma);
    const double tau = 1e-11 * std::max(1.0, spectral_radius(e.values));
    Mat pplus = Mat::Zero(d, d), pzero = Mat::Zero(d, d);
    for (int i = 0; i < e.values.size(); ++i) {
      const Mat proj = e.vectors.col(i) * e.vectors.col(i).adjoint();
      if (e.values(i) > tau)
        pplus += proj;
      else if (e.values(i) >= -tau)
        pzero += proj;
    }
    const double mp = inner(pplus, rho), m0 = inner(pzero, rho);
    const double gamma = m0 > 1e-300 ? std::clamp((target - mp) / m0, 0.0, 1.0) : 0.0;
    r.test = hermitize(pplus + gamma * pzero);
    r.dual_b = b;
  }
  r.value = std::clamp(inner(r.test, sigma), 0.0, 1.0);
  r.type1 = 1.0 - inner(r.test, rho);
  return r;
}

inline BetaResult beta_simple(const DensityOperator& rho, const DensityOperator& sigma, double eps) {
  require(rho.layout() == sigma.layout(), ErrorCode::shape_mismatch, "states have different layouts");
  return beta_simple(rho.matrix(), sigma.matrix(), eps);
}

namespace detail {

// T = fixed + V X V^dagger with 0 <= X <= I. For eps > 0, V = I and Tr[T rho] >= 1 - eps is a
// constraint. For eps = 0 every feasible T is the identity on supp(rho), so X lives on the
// kernel; this keeps the SDP strictly feasible.
struct TestVariable {
  int block = -1;  // -1 when the kernel is trivial and T = I
  Mat v;
  Mat fixed;

  Mat restrict(const Mat& c) const { return v.adjoint() * c * v; }
  Mat embed(const SdpSolution& s) const {
    Mat t = fixed;
    if (block >= 0) t += v * s.primal[static_cast<std::size_t>(block)] * v.adjoint();
    return hermitize(t);
  }
};

inline TestVariable add_test_variable(SdpProblem& p, const Mat& rho, double eps, const Config& cfg) {
  const int d = static_cast<int>(rho.rows());
  TestVariable tv;
  if (eps > 0.0) {
    tv.v = identity(d);
    tv.fixed = Mat::Zero(d, d);
    tv.block = p.add_block(d);
    p.add_constraint({{{tv.block, rho}}, Sense::geq, 1.0 - eps});
  } else {
    const Eigh e = eigh(rho);
    const double cut = cfg.tol.support_cut * std::max(spectral_radius(e.values), 1e-300);
    std::vector<int> ker;
    for (int i = 0; i < e.values.size(); ++i)
      if (e.values(i) <= cut) ker.push_back(i);
    tv.v = Mat(d, static_cast<int>(ker.size()));
    for (std::size_t j = 0; j < ker.size(); ++j) tv.v.col(static_cast<int>(j)) = e.vectors.col(ker[j]);
    tv.fixed = identity(d) - tv.v * tv.v.adjoint();
    if (ker.empty()) return tv;
    tv.block = p.add_block(static_cast<int>(ker.size()));
  }
  const int k = static_cast<int>(tv.v.cols());
  const int q = p.add_block(k);
  add_matrix_equality(p, k, {{tv.block, identity_map()}, {q, identity_map()}}, identity(k));
  return tv;
}

}  // namespace detail

// The same optimum as one SDP: min Tr[T sigma], Tr[T rho] >= 1 - eps, 0 <= T <= I.
inline BetaResult beta_simple_sdp(const Mat& rho, const Mat& sigma, double eps, const SdpOptions& opt = {},
                                  const Config& cfg = default_config()) {
  detail::check_eps(eps);
  require(rho.rows() == sigma.rows(), ErrorCode::shape_mismatch, "states act on different spaces");
  SdpProblem p;
  const auto tv = detail::add_test_variable(p, rho, eps, cfg);
  BetaResult r;
  if (tv.block >= 0) {
    p.set_objective(tv.block, tv.restrict(sigma));
    const auto s = solve_sdp(p, opt, cfg);
    require(s.ok(), ErrorCode::numerical_failure, "beta SDP failed: " + s.message);
    r.test = tv.embed(s);
    r.value = std::clamp(s.primal_obj + inner(tv.fixed, sigma), 0.0, 1.0);
  } else {
    r.test = tv.fixed;
    r.value = std::clamp(inner(tv.fixed, sigma), 0.0, 1.0);
  }
  r.type1 = 1.0 - inner(r.test, rho);
  return r;
}

namespace detail {

// min_b Tr[(rho - b sigma)_+] + b beta over [0, b_max] by golden section.
inline std::pair<double, double> scalar_dual(const Mat& rho, const Mat& sigma, double beta) {
  const RVec ws = eigvalsh(sigma);
  double smin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < ws.size(); ++i)
    if (ws(i) > 1e-12) smin = std::min(smin, ws(i));
  const double bmax = spectral_radius(eigvalsh(rho)) / smin + 1.0;
  auto f = [&](double b) { return positive_trace(rho - b * sigma) + b * beta; };
  const double b = golden_section_min(f, 0.0, bmax, 1e-9);
  return {b, f(b)};
}

// Linear functional data for sigma in S: either finitely many vertices or a PPT cone.
struct SetConstraint {
  std::vector<Mat> vertices;
  const PptSet* ppt = nullptr;
};

// max { Tr[T rho] : 0 <= T <= I, Tr[T sigma] <= beta for all sigma in S }.
inline double max_power(const Mat& rho, const ConvexStateSet& set, double beta, const SdpOptions& opt) {
  const int d = static_cast<int>(rho.rows());
  SdpProblem p;
  const int t = p.add_block(d), q = p.add_block(d);
  p.set_objective(t, -rho);
  add_matrix_equality(p, d, {{t, identity_map()}, {q, identity_map()}}, identity(d));
  if (set.is_ppt()) {
    const auto& s = std::get<PptSet>(set.rep());
    const int y = p.add_block(d), z = p.add_block(d);
    auto tw = [s](const Mat& h) { return s.symmetric ? twirl(h, site_dim(s), s.sites) : h; };
    // beta I - T' = Y + Z^Gamma, T' the (twirled) test
    add_matrix_equality(p, d, {{t, [tw](const Mat& h) { return Mat(tw(h)); }}, {y, identity_map()}, {z, pt_map(s)}},
                        beta * identity(d));
  } else {
    for (const Mat& v : set.vertices()) p.add_constraint({{{t, v}}, Sense::leq, beta});
  }
  const auto sol = solve_sdp(p, opt);
  require(sol.ok(), ErrorCode::numerical_failure, "power SDP failed: " + sol.message);
  return -sol.primal_obj;
}

}  // namespace detail

// min_T max_{sigma in S} Tr[T sigma] subject to Tr[(I-T) rho] <= eps, with a dual witness.
inline BetaResult beta_composite(const Mat& rho, const ConvexStateSet& set, double eps, const SdpOptions& opt = {}) {
  detail::check_eps(eps);
  const int d = set.dim();
  require(rho.rows() == d, ErrorCode::shape_mismatch, "state does not match set dimension");
  BetaResult r;
  if (const auto* o = std::get_if<GroupOrbitHull>(&set.rep())) {
    bool invariant = true;
    for (const Mat& u : o->unitaries)
      if (max_abs(u * rho * u.adjoint() - rho) > 1e-10) invariant = false;
    if (invariant) {
      // a G-invariant rho sees the orbit hull through the group average
      const Mat avg = averaged_state(o->seed, o->unitaries);
      r = beta_simple(rho, avg, eps);
      r.dual_state = avg;
      const auto [b, dv] = detail::scalar_dual(rho, avg, r.value);
      r.dual_b = b;
      r.dual_value = dv;
      r.primal_power = detail::max_power(rho, set, r.value, opt);
      return r;
    }
  }
  SdpProblem p;
  const auto tv = detail::add_test_variable(p, rho, eps, default_config());
  const int t = tv.block, tb = p.add_block(1);
  p.set_objective(tb, Mat::Ones(1, 1));
  std::vector<int> rows;
  std::vector<Mat> vs;
  std::vector<int> mult;
  const PptSet* ppt = std::get_if<PptSet>(&set.rep());
  if (ppt) {
    const PptSet s = *ppt;
    const int y = p.add_block(d), z = p.add_block(d);
    auto tw = [s](const Mat& h) { return Mat(s.symmetric ? twirl(h, detail::site_dim(s), s.sites) : h); };
    // t I - T' - Y - Z^Gamma = 0 with T' the (twirled) test
    std::vector<MapTerm> terms = {{tb, scalar_times(identity(d))}, {y, scaled_map(-1.0)}, {z, detail::pt_map(s, -1.0)}};
    if (t >= 0) terms.push_back({t, [tw, tv](const Mat& h) { return Mat(-tv.restrict(tw(h))); }});
    mult = add_matrix_equality(p, d, terms, tw(tv.fixed));
  } else {
    vs = set.vertices();
    for (const Mat& v : vs) {
      Constraint c{{{tb, Mat::Ones(1, 1)}}, Sense::geq, inner(tv.fixed, v)};
      if (t >= 0) c.terms.push_back({t, -tv.restrict(v)});
      rows.push_back(p.add_constraint(c));
    }
  }
  const auto sol = solve_sdp(p, opt);
  require(sol.ok(), ErrorCode::numerical_failure, "composite beta SDP failed: " + sol.message);
  r.test = tv.embed(sol);
  r.type1 = 1.0 - inner(r.test, rho);
  Mat star;
  if (ppt) {
    star = matrix_multiplier(sol, mult, d);
    if (ppt->symmetric) star = twirl(star, detail::site_dim(*ppt), ppt->sites);
    star = hermitize(star / re_trace(star));
    r.value = std::clamp(sol.primal_obj, 0.0, 1.0);
  } else {
    double tot = 0;
    std::vector<double> w;
    for (int i : rows) {
      w.push_back(std::max(0.0, sol.dual(i)));
      tot += w.back();
    }
    star = Mat::Zero(d, d);
    for (std::size_t k = 0; k < vs.size(); ++k) {
      w[k] /= tot;
      star += w[k] * vs[k];
    }
    r.weights = w;
    double worst = 0;
    for (const Mat& v : vs) worst = std::max(worst, inner(r.test, v));
    r.value = std::clamp(worst, 0.0, 1.0);
  }
  r.dual_state = hermitize(star);
  const auto [b, dv] = detail::scalar_dual(rho, *r.dual_state, r.value);
  r.dual_b = b;
  r.dual_value = dv;
  r.primal_power = detail::max_power(rho, set, r.value, opt);
  return r;
}

inline BetaResult beta_composite(const DensityOperator& rho, const ConvexStateSet& set, double eps,
                                 const SdpOptions& opt = {}) {
  return beta_composite(rho.matrix(), set, eps, opt);
}

struct PointwiseResult {
  double value = 0;      // max over sigma of beta_eps(rho || sigma), best lower bound found
  double upper = 0;      // cutting-plane upper bound (equals value for finite orbits)
  Mat argmax;
  int iterations = 0;
};

// max_{sigma in S} beta_eps(rho || sigma). Orbit sets are treated as the finite
// (non-convex) orbit; polytopes and PPT sets are maximised over the hull by cutting planes.
inline PointwiseResult beta_worstcase_pointwise(const Mat& rho, const ConvexStateSet& set, double eps,
                                                double tol = 1e-8, int max_iter = 500, const SdpOptions& opt = {}) {
  detail::check_eps(eps);
  PointwiseResult r;
  if (set.is_orbit()) {
    r.value = -1;
    for (const Mat& v : set.vertices()) {
      const double b = beta_simple(rho, v, eps).value;
      if (b > r.value) {
        r.value = b;
        r.argmax = v;
      }
    }
    r.upper = r.value;
    return r;
  }
  const int d = set.dim();
  std::vector<Mat> tests;
  std::vector<Mat> vs;
  const PptSet* ppt = std::get_if<PptSet>(&set.rep());
  auto evaluate = [&](const Mat& sigma) {
    const auto b = beta_simple(rho, sigma, eps);
    tests.push_back(b.test);
    if (b.value > r.value) {
      r.value = b.value;
      r.argmax = sigma;
    }
  };
  r.value = -1;
  if (ppt) {
    evaluate(identity(d) / static_cast<double>(d));
  } else {
    vs = set.vertices();
    Mat bary = Mat::Zero(d, d);
    for (const Mat& v : vs) {
      evaluate(v);
      bary += v / static_cast<double>(vs.size());
    }
    evaluate(bary);
  }
  r.upper = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    ++r.iterations;
    // master: max t s.t. t <= Tr[T_j sigma] for every collected test, sigma in S
    SdpProblem p;
    const int tb = p.add_block(1);
    p.set_objective(tb, -Mat::Ones(1, 1));
    int sig = -1, w = -1;
    if (ppt) {
      PptSet s = *ppt;
      sig = detail::add_ppt_variable(p, s);
      p.add_constraint({{{sig, identity(d)}}, Sense::eq, 1.0});
      for (const Mat& t : tests) {
        const Mat tt = s.symmetric ? twirl(t, detail::site_dim(s), s.sites) : t;
        p.add_constraint({{{sig, tt}, {tb, -Mat::Ones(1, 1)}}, Sense::geq, 0.0});
      }
    } else {
      const int k = static_cast<int>(vs.size());
      w = p.add_block(k, BlockKind::diagonal);
      p.add_constraint({{{w, Mat::Ones(k, 1)}}, Sense::eq, 1.0});
      for (const Mat& t : tests) {
        Mat c(k, 1);
        for (int j = 0; j < k; ++j) c(j, 0) = inner(t, vs[static_cast<std::size_t>(j)]);
        p.add_constraint({{{w, c}, {tb, -Mat::Ones(1, 1)}}, Sense::geq, 0.0});
      }
    }
    const auto sol = solve_sdp(p, opt);
    require(sol.ok(), ErrorCode::numerical_failure, "cutting-plane master failed: " + sol.message);
    r.upper = std::min(r.upper, -sol.primal_obj);
    Mat sigma;
    if (ppt) {
      sigma = sol.primal[static_cast<std::size_t>(sig)];
      if (ppt->symmetric) sigma = twirl(sigma, detail::site_dim(*ppt), ppt->sites);
    } else {
      sigma = Mat::Zero(d, d);
      for (std::size_t j = 0; j < vs.size(); ++j)
        sigma += std::max(0.0, sol.primal[static_cast<std::size_t>(w)](static_cast<int>(j), 0).real()) * vs[j];
    }
    sigma = hermitize(sigma / re_trace(sigma));
    evaluate(sigma);
    if (r.upper - r.value <= tol) break;
  }
  return r;
}

inline PointwiseResult beta_worstcase_pointwise(const DensityOperator& rho, const ConvexStateSet& set, double eps) {
  return beta_worstcase_pointwise(rho.matrix(), set, eps);
}

struct DataProcessingReport {
  double before = 0;  // beta_eps(rho || sigma)
  double after = 0;   // beta_eps(N(rho) || N(sigma))
  bool holds = false;
};

// beta_eps(N(rho) || N(sigma)) >= beta_eps(rho || sigma) - 1e-7 for a positive trace-preserving map N.
inline DataProcessingReport beta_data_processing_check(const Mat& rho, const Mat& sigma,
                                                       const std::function<Mat(const Mat&)>& channel, double eps) {
  DataProcessingReport r;
  r.before = beta_simple(rho, sigma, eps).value;
  r.after = beta_simple(hermitize(channel(rho)), hermitize(channel(sigma)), eps).value;
  r.holds = r.after >= r.before - 1e-7;
  return r;
}

inline DataProcessingReport beta_data_processing_check(const DensityOperator& rho, const DensityOperator& sigma,
                                                       const QuantumChannel& n, double eps) {
  return beta_data_processing_check(rho.matrix(), sigma.matrix(), [&n](const Mat& x) { return apply_channel_matrix(n, x); },
                                    eps);
}

struct MixtureReport {
  double mixture = 0;               // beta_eps(rho || mean of components)
  std::vector<double> components;   // beta_eps(rho || sigma_j)
  bool holds = false;
};

// With sigma = (1/k) sum_j sigma_j >= sigma_j / k: beta(rho||sigma) >= beta(rho||sigma_j)/k - 1e-7.
inline MixtureReport mixture_component_bound_check(const Mat& rho, const std::vector<Mat>& comps, double eps) {
  require(!comps.empty(), ErrorCode::invalid_argument, "need at least one component");
  const double k = static_cast<double>(comps.size());
  Mat mix = Mat::Zero(rho.rows(), rho.cols());
  for (const Mat& c : comps) mix += c / k;
  MixtureReport r;
  r.mixture = beta_simple(rho, hermitize(mix), eps).value;
  r.holds = true;
  for (const Mat& c : comps) {
    r.components.push_back(beta_simple(rho, c, eps).value);
    if (r.mixture < r.components.back() / k - 1e-7) r.holds = false;
  }
  return r;
}

struct StrongConverseReport {
  double lhs = 0;  // -(1/n) log beta_eps(rho^n || sigma~)
  double rhs = 0;  // (1/n) D~_alpha(rho^n || sigma~) + (1/n) alpha/(alpha-1) log 1/(1-eps)
  bool holds = false;
};

// sigma~ = sigma_m^(x)k (x) sigma_full^(x)(n-km), k = floor(n/m); sigma_m acts on m copies.
inline StrongConverseReport strong_converse_bound(const Mat& rho, const Mat& sigma_m, int m, int n, double eps,
                                                  double alpha, const std::optional<Mat>& sigma_full = std::nullopt,
                                                  const Config& cfg = default_config()) {
  detail::check_eps(eps);
  require(alpha > 1.0, ErrorCode::invalid_argument, "alpha must exceed 1");
  require(m >= 1 && n >= 1, ErrorCode::invalid_argument, "m and n must be positive");
  const int k = n / m, rest = n - k * m;
  require(rest == 0 || sigma_full.has_value(), ErrorCode::invalid_argument, "sigma_full needed when m does not divide n");
  Mat st = k > 0 ? tensor_power(sigma_m, k, cfg) : Mat::Ones(1, 1);
  if (rest > 0) st = kron(st, tensor_power(*sigma_full, rest, cfg));
  const Mat rn = tensor_power(rho, n, cfg);
  require(rn.rows() == st.rows(), ErrorCode::shape_mismatch, "sigma_m does not act on m copies of rho");
  StrongConverseReport r;
  const double beta = beta_simple(rn, st, eps).value;
  r.lhs = beta > 0 ? -std::log(beta) / n : std::numeric_limits<double>::infinity();
  const auto dv = sandwiched_renyi(rn, st, alpha);
  r.rhs = dv.infinite ? std::numeric_limits<double>::infinity()
                      : dv.nats / n + alpha / (alpha - 1.0) * std::log(1.0 / (1.0 - eps)) / n;
  r.holds = r.lhs <= r.rhs + 1e-7;
  return r;
}

}  // namespace qstein
