#pragma once

// Resource measures for states and channels, and the constructions used by the second law for channels.
// Channel objects on n copies are handled through their Choi states in per-copy factor order
// (in_1 out_1 in_2 out_2 ...), which matches the levels of free families.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qstein/freesets.hpp"
#include "qstein/hyptest.hpp"
#include "qstein/qcore.hpp"
#include "qstein/sdp.hpp"
#include "qstein/symmetry.hpp"

namespace qstein {

// ---------- Choi factor orders ----------

// Slot of each per-copy factor in the grouped order (all inputs, then all outputs).
inline std::vector<int> per_copy_to_grouped(int copies, int fi, int fo) {
  std::vector<int> g;
  for (int c = 0; c < copies; ++c) {
    for (int j = 0; j < fi; ++j) g.push_back(c * fi + j);
    for (int j = 0; j < fo; ++j) g.push_back(copies * fi + c * fo + j);
  }
  return g;
}

// Choi state of a channel on `copies` identical blocks, reordered per copy.
inline Mat per_copy_choi(const QuantumChannel& n, int copies = 1) {
  const int fi = n.in().factors(), fo = n.out().factors();
  require(copies >= 1 && fi % copies == 0 && fo % copies == 0, ErrorCode::invalid_layout,
          "channel factors are not divisible into copies");
  if (copies == 1) return n.choi();
  const DimLayout grouped = n.in().concat(n.out());
  return permute_factors(n.choi(), grouped, inverse_perm(per_copy_to_grouped(copies, fi / copies, fo / copies)));
}

inline DimLayout per_copy_layout(const QuantumChannel& n, int copies = 1) {
  const DimLayout grouped = n.in().concat(n.out());
  const int fi = n.in().factors(), fo = n.out().factors();
  return permute_layout(grouped, inverse_perm(per_copy_to_grouped(copies, fi / copies, fo / copies)));
}

inline std::vector<int> per_copy_in_factors(const QuantumChannel& n, int copies = 1) {
  const int fi = n.in().factors() / copies, fo = n.out().factors() / copies;
  std::vector<int> f;
  for (int c = 0; c < copies; ++c)
    for (int j = 0; j < fi; ++j) f.push_back(c * (fi + fo) + j);
  return f;
}

// Channel from a per-copy Choi state with per-copy input/output layouts.
inline QuantumChannel channel_from_per_copy(const Mat& choi, const DimLayout& in, const DimLayout& out, int copies,
                                            const Config& cfg = default_config()) {
  const DimLayout site = in.concat(out, cfg);
  const DimLayout l = site.power(copies, cfg);
  const Mat grouped = permute_factors(choi, l, per_copy_to_grouped(copies, in.factors(), out.factors()));
  return QuantumChannel(grouped, in.power(copies, cfg), out.power(copies, cfg), cfg);
}

// Channel from an approximate Choi state (grouped order): the congruence J -> (M^{-1/2} (x) I) J (M^{-1/2} (x) I),
// M = d_in Tr_out J, keeps J >= 0 and makes the input marginal exactly I/d_in.
inline QuantumChannel channel_from_approx_choi(const Mat& j, const DimLayout& in, const DimLayout& out,
                                               const Config& cfg = default_config()) {
  const DimLayout l = in.concat(out, cfg);
  std::vector<int> in_f(static_cast<std::size_t>(in.factors()));
  std::iota(in_f.begin(), in_f.end(), 0);
  const Mat h = hermitize(j) / re_trace(j);
  const Mat m = hermitize(partial_trace(h, l, in_f) * static_cast<double>(in.total()));
  require(lambda_min(m) > 1e-8, ErrorCode::invalid_channel, "Choi marginal is singular");
  const Mat c = kron(matfun(m, [](double x) { return 1.0 / std::sqrt(x); }), identity(out.total()));
  return QuantumChannel(hermitize(c * h * c.adjoint()), in, out, cfg);
}

// ---------- generalized robustness ----------

struct RobustnessResult {
  double value = 0;     // s = R_G; +inf when no free state dominates a multiple of the object
  bool infinite = false;
  Mat partner;          // valid state (Choi state for channels) mixed in with weight s
  Mat free_witness;     // (obj + s partner) / (1 + s)
  std::vector<double> weights;  // convex weights of the witness over the vertices, when finite
};

namespace detail {

inline void check_choi_vertices(const std::vector<Mat>& vs, const DimLayout& l, const std::vector<int>& in_factors) {
  for (const Mat& v : vs) {
    const Mat m = partial_trace(v, l, in_factors);
    require(max_abs(m - identity(static_cast<int>(m.rows())) / static_cast<double>(m.rows())) <= 1e-9,
            ErrorCode::invalid_channel, "free set vertex is not a Choi state");
  }
}

}  // namespace detail

// R_G(obj) = min { s : (obj + s tau)/(1+s) in S }, solved as min Tr X - 1 over X in cone(S), X >= obj.
// choi_in_factors marks obj as a Choi state; the partner is then a Choi state as well.
inline RobustnessResult generalized_robustness(const Mat& obj, const ConvexStateSet& set,
                                               const std::vector<int>& choi_in_factors = {},
                                               const SdpOptions& opt = {}) {
  const int d = set.dim();
  require(obj.rows() == d, ErrorCode::shape_mismatch, "object does not match set dimension");
  SdpProblem p;
  const int w = p.add_block(d);  // W = X - obj
  int x = -1, wts = -1;
  std::vector<Mat> vs;
  std::function<Mat(const Mat&)> tw = identity_map();
  if (const auto* ps = std::get_if<PptSet>(&set.rep())) {
    PptSet s = *ps;
    if (!choi_in_factors.empty()) {
      require(s.choi_in_factors.empty() || s.choi_in_factors == choi_in_factors, ErrorCode::invalid_layout,
              "Choi input factors differ from the set's");
      s.choi_in_factors = choi_in_factors;
    }
    if (s.symmetric) tw = [s](const Mat& h) { return twirl(h, detail::site_dim(s), s.sites); };
    x = detail::add_ppt_variable(p, s);
    p.set_objective(x, identity(d));
    // tw(X) - W = obj
    add_matrix_equality(p, d, {{x, tw}, {w, scaled_map(-1.0)}}, obj);
  } else {
    vs = set.vertices();
    if (!choi_in_factors.empty()) detail::check_choi_vertices(vs, set.layout(), choi_in_factors);
    const int k = static_cast<int>(vs.size());
    wts = p.add_block(k, BlockKind::diagonal);
    p.set_objective(wts, Mat::Ones(k, 1));
    add_matrix_equality(p, d, {{wts, weighted_sum(vs)}, {w, scaled_map(-1.0)}}, obj);
  }
  const auto sol = solve_sdp(p, opt);
  RobustnessResult r;
  if (sol.status == SdpStatus::infeasible) {
    r.value = std::numeric_limits<double>::infinity();
    r.infinite = true;
    return r;
  }
  require(sol.ok(), ErrorCode::numerical_failure, "robustness SDP failed: " + sol.message);
  Mat xm;
  if (x >= 0) {
    xm = tw(sol.primal[static_cast<std::size_t>(x)]);
  } else {
    xm = Mat::Zero(d, d);
    double tot = 0;
    for (std::size_t k = 0; k < vs.size(); ++k) {
      const double c = std::max(0.0, sol.primal[static_cast<std::size_t>(wts)](static_cast<int>(k), 0).real());
      r.weights.push_back(c);
      tot += c;
      xm += c * vs[k];
    }
    for (double& c : r.weights) c /= tot;
  }
  xm = hermitize(xm);
  const double tr = re_trace(xm);
  r.value = std::max(0.0, tr - 1.0);
  r.free_witness = hermitize(xm / tr);
  r.partner = r.value > 1e-12 ? hermitize((xm - obj) / r.value) : r.free_witness;
  return r;
}

inline RobustnessResult generalized_robustness(const DensityOperator& rho, const ConvexStateSet& set,
                                               const SdpOptions& opt = {}) {
  return generalized_robustness(rho.matrix(), set, {}, opt);
}

inline RobustnessResult generalized_robustness(const QuantumChannel& n, const ConvexStateSet& set, int copies = 1,
                                               const SdpOptions& opt = {}) {
  return generalized_robustness(per_copy_choi(n, copies), set, per_copy_in_factors(n, copies), opt);
}

// R_R = min_{sigma in S} D(obj || sigma), in nats.
inline RelEntropyResult relative_entropy_of_resource(const Mat& obj, const ConvexStateSet& set,
                                                     const FwOptions& opt = {}) {
  return min_relative_entropy(obj, set, opt);
}

inline RelEntropyResult relative_entropy_of_resource(const QuantumChannel& n, const ConvexStateSet& set, int copies = 1,
                                                     const FwOptions& opt = {}) {
  const Mat j = per_copy_choi(n, copies);
  const auto in = per_copy_in_factors(n, copies);
  if (const auto* ps = std::get_if<PptSet>(&set.rep()))
    require(ps->choi_in_factors == in, ErrorCode::representation_unsupported,
            "PPT set without the matching Choi marginal constraint");
  else
    detail::check_choi_vertices(set.vertices(), set.layout(), in);
  return min_relative_entropy(j, set, opt);
}

struct TensorBoundReport {
  double ra = 0, rb = 0, rab = 0;
  double bound = 0;  // ra rb + ra + rb
  bool holds = false;
};

// R_G(A (x) B) <= R_G(A) R_G(B) + R_G(A) + R_G(B).
inline TensorBoundReport robustness_tensor_bound_check(const Mat& a, const Mat& b, const ConvexStateSet& sa,
                                                       const ConvexStateSet& sb, const ConvexStateSet& sab,
                                                       const SdpOptions& opt = {}) {
  TensorBoundReport r;
  r.ra = generalized_robustness(a, sa, {}, opt).value;
  r.rb = generalized_robustness(b, sb, {}, opt).value;
  r.rab = generalized_robustness(kron(a, b), sab, {}, opt).value;
  r.bound = r.ra * r.rb + r.ra + r.rb;
  r.holds = r.rab <= r.bound + 1e-6;
  return r;
}

struct RobustnessRow {
  int n = 0;
  double rr_per_copy = 0;      // (1/n) R_R(rho^(x)n)
  double rr_gap_per_copy = 0;  // Frank-Wolfe gap: rr_per_copy - rr_gap_per_copy is a certified lower bound
  double log_rg_per_copy = 0;  // (1/n) log(1 + R_G(rho^(x)n))
  bool holds = false;
};

// D <= log(1 + R_G) at every level: the free witness dominates rho / (1 + R_G).
inline std::vector<RobustnessRow> log_robustness_vs_relative_entropy(const Mat& rho, const FreeFamily& fam, int n_max,
                                                                     const FwOptions& opt = {},
                                                                     const Config& cfg = default_config()) {
  require(n_max >= 1, ErrorCode::invalid_argument, "n_max must be positive");
  std::vector<RobustnessRow> rows;
  Mat first;
  for (int n = 1; n <= n_max; ++n) {
    const Mat rn = tensor_power(rho, n, cfg);
    const auto set = fam.level(n, cfg);
    RobustnessRow row;
    row.n = n;
    const auto rg = generalized_robustness(rn, set, {}, opt.sdp);
    // warm starts: the robustness witness and the tensor power of the single-copy minimiser
    std::vector<Mat> seeds;
    if (!rg.infinite) seeds.push_back(rg.free_witness);
    if (first.size() > 0) seeds.push_back(tensor_power(first, n, cfg));
    const auto rr = min_relative_entropy(rn, set, opt, seeds);
    if (n == 1 && !rr.infinite) first = rr.argmin;
    row.rr_per_copy = rr.value / n;
    row.rr_gap_per_copy = rr.gap / n;
    row.log_rg_per_copy = rg.infinite ? std::numeric_limits<double>::infinity() : std::log1p(rg.value) / n;
    row.holds = row.rr_per_copy <= row.log_rg_per_copy + 1e-6;
    rows.push_back(row);
  }
  return rows;
}

// ---------- truncated channel ----------

struct TruncatedChannel {
  Mat choi;                             // rho_{k,m}, per-copy order
  std::optional<QuantumChannel> channel;  // present when rho_{k,m} is a valid Choi state
  bool valid = false;                   // rho_{k,m} >= 0 within psd_slack
  double min_eigenvalue = 0;
  double free_mass = 0;                 // Tr[P J(N_free^(m))^(x)k]
  double free_mass_bound = 0;           // e^{-kmR}
  bool bound_ok = false;
  double cut_mass = 0;                  // Tr[P J(N)^(x)km]
  bool captures_all = false;            // P removes (numerically) all of J(N)^(x)km
  double trace_distance = 0;            // (1/2) ||rho_{k,m} - J(N)^(x)km||_1
  int blocks = 0;                       // distinct eigenvalues of the pinching reference
  double operator_residual = 0;         // lambda_min((1 + d e^{kmR}) sigma_mix - rho_{k,m})
  Mat free_mixture;                     // (d e^{kmR} J_free + J_full)/(d e^{kmR} + 1)
  double robustness_bound = 0;          // d e^{kmR}
};

// Builds rho_{k,m} from the pinched projection P = {E(J(N)^(x)km) >= e^{kmR} J(N_free^(m))^(x)k}:
// rho = (1-P)J(1-P) + (I/d^{km} - Tr_out[(1-P)J(1-P)]) (x) rho_full^(x)km.
// free_m acts on m copies with grouped Choi order; rho_full defaults to I/d_out.
inline TruncatedChannel truncated_channel(const QuantumChannel& n, const QuantumChannel& free_m, int m, int k, double r,
                                          const std::optional<Mat>& rho_full = std::nullopt,
                                          const Config& cfg = default_config()) {
  require(m >= 1 && k >= 1, ErrorCode::invalid_argument, "m and k must be positive");
  require(r > 0, ErrorCode::invalid_argument, "R must be positive");
  const int km = k * m;
  const DimLayout site = n.in().concat(n.out(), cfg);
  const DimLayout l = site.power(km, cfg);
  require(free_m.in() == n.in().power(m, cfg) && free_m.out() == n.out().power(m, cfg), ErrorCode::shape_mismatch,
          "free channel does not act on m copies");
  const Mat j = tensor_power(n.choi(), km, cfg);
  const Mat jf = tensor_power(per_copy_choi(free_m, m), k, cfg);
  const Mat full_out = rho_full ? *rho_full : identity(n.d_out()) / static_cast<double>(n.d_out());
  require(full_out.rows() == n.d_out(), ErrorCode::shape_mismatch, "rho_full dimension");

  TruncatedChannel t;
  const PinchingMap pin(jf, cfg);
  t.blocks = pin.num_blocks();
  const Mat ej = pin.apply(j);
  const double scale = std::exp(km * r);
  const Mat diff = hermitize(ej - scale * jf);
  const Mat proj = spectral_projection_leq(Mat::Zero(diff.rows(), diff.cols()), diff, cfg.tol.support_cut);
  const int dd = l.total();
  const Mat keep = identity(dd) - proj;
  const Mat kept = hermitize(keep * j * keep);
  t.free_mass = inner(proj, jf);
  t.free_mass_bound = std::exp(-km * r);
  t.bound_ok = t.free_mass <= t.free_mass_bound + 1e-9;
  t.cut_mass = inner(proj, j);
  t.captures_all = re_trace(kept) <= 1e-12;

  std::vector<int> in_f, out_f;
  const int fi = n.in().factors(), fo = n.out().factors();
  for (int c = 0; c < km; ++c) {
    for (int q = 0; q < fi; ++q) in_f.push_back(c * (fi + fo) + q);
    for (int q = 0; q < fo; ++q) out_f.push_back(c * (fi + fo) + fi + q);
  }
  const int din = n.in().power(km, cfg).total();
  const Mat deficit = identity(din) / static_cast<double>(din) - partial_trace(kept, l, in_f);
  // deficit (x) rho_full^(x)km is in grouped order; move it to per-copy order
  const Mat grouped = kron(deficit, tensor_power(full_out, km, cfg));
  const DimLayout gl = n.in().power(km, cfg).concat(n.out().power(km, cfg), cfg);
  const Mat refill = permute_factors(grouped, gl, inverse_perm(per_copy_to_grouped(km, fi, fo)));
  t.choi = hermitize(kept + refill);
  t.min_eigenvalue = lambda_min(t.choi);
  t.valid = t.min_eigenvalue >= -cfg.tol.psd_slack;
  if (t.valid) t.channel = channel_from_per_copy(t.choi, n.in(), n.out(), km, cfg);
  t.trace_distance = 0.5 * trace_norm(t.choi - j);

  const double c = t.blocks * scale;
  t.robustness_bound = c;
  const Mat jfull = tensor_power(kron(identity(n.d_in()) / static_cast<double>(n.d_in()), full_out), km, cfg);
  t.free_mixture = hermitize((c * jf + jfull) / (c + 1.0));
  t.operator_residual = lambda_min((1.0 + c) * t.free_mixture - t.choi);
  return t;
}

// ---------- conversion super channel ----------

// Theta(N) = Tr[T J(N)] hit + Tr[(I - T) J(N)] miss.
struct SuperChannelMP {
  Mat test;           // on the Choi space of the input channel (grouped order)
  QuantumChannel hit;
  QuantumChannel miss;
  DimLayout in_choi;  // layout of the input channel's Choi state

  QuantumChannel apply(const QuantumChannel& n) const {
    require(n.choi().rows() == test.rows(), ErrorCode::shape_mismatch, "input channel does not match the test");
    return QuantumChannel(apply_choi(n.choi()), hit.in(), hit.out());
  }
  // Linear map on Choi operators.
  Mat apply_choi(const Mat& x) const {
    const double a = inner(test, x), b = re_trace(x) - a;
    return hermitize(a * hit.choi() + b * miss.choi());
  }
  // Normalised Choi operator of the Choi-space map on (in1 out1 in2 out2).
  Mat choi_of_map() const {
    const int dd = static_cast<int>(test.rows());
    const Mat tt = test.transpose();
    return hermitize((kron(tt, hit.choi()) + kron(identity(dd) - tt, miss.choi())) / static_cast<double>(dd));
  }
  DimLayout map_layout() const { return in_choi.concat(hit.in()).concat(hit.out()); }
};

inline SuperChannelMP theta_protocol(const Mat& test, const DimLayout& in_choi, const QuantumChannel& hit,
                                     const QuantumChannel& miss) {
  BinaryTest(test, in_choi);
  require(hit.in() == miss.in() && hit.out() == miss.out(), ErrorCode::shape_mismatch,
          "prepared channels act on different spaces");
  return SuperChannelMP{test, hit, miss, in_choi};
}

struct CombValidation {
  bool valid = false;
  double min_eigenvalue = 0;
  double comb_residual = 0;      // Tr_out2 J2 - I_out1/d_out1 (x) J1
  double marginal_residual = 0;  // Tr_in1 J1 - I_in2/d_in2
  double j1_min_eigenvalue = 0;
};

// One-slot comb conditions for J2 on (in1, out1, in2, out2), each factor a single space.
inline CombValidation super_channel_choi_validate(const Mat& j2, int din1, int dout1, int din2, int dout2,
                                                  double tol = 1e-8) {
  const DimLayout l({din1, dout1, din2, dout2});
  require(j2.rows() == l.total() && j2.cols() == l.total(), ErrorCode::shape_mismatch, "J2 does not match the dims");
  CombValidation v;
  v.min_eigenvalue = lambda_min(j2);
  const DimLayout l3({din1, dout1, din2});
  const Mat m = partial_trace(j2, l, {0, 1, 2});
  const Mat j1 = partial_trace(m, l3, {0, 2});
  // I_out1/d_out1 inserted between in1 and in2
  const Mat rebuilt = permute_factors(kron(j1, identity(dout1) / static_cast<double>(dout1)),
                                      DimLayout({din1, din2, dout1}), {0, 2, 1});
  v.comb_residual = max_abs(m - rebuilt);
  v.j1_min_eigenvalue = lambda_min(j1);
  const Mat marg = partial_trace(j1, DimLayout({din1, din2}), {1});
  v.marginal_residual = max_abs(marg - identity(din2) / static_cast<double>(din2));
  v.valid = v.min_eigenvalue >= -tol && v.j1_min_eigenvalue >= -tol && v.comb_residual <= tol &&
            v.marginal_residual <= tol;
  return v;
}

struct NonGenerationEntry {
  double t = 0;          // Tr[T J(N_free)]
  double measured = 0;   // R_G(Theta(N_free))
  double bound = 0;      // (1/(1+s) - t) / (s/(1+s))
  bool precondition = false;  // 1/(1+s) >= t
  bool pass = true;
};

struct NonGenerationReport {
  double s = 0;          // R_G(hit)
  double worst_t = 0;
  std::vector<NonGenerationEntry> entries;
  bool holds = true;
};

// Measures R_G(Theta(N_free)) for each free input against out_set (free Choi states of the output space).
// The bound applies when miss is the robustness partner of hit.
inline NonGenerationReport resource_non_generation_audit(const SuperChannelMP& theta,
                                                         const std::vector<QuantumChannel>& free_inputs,
                                                         const ConvexStateSet& out_set, const SdpOptions& opt = {}) {
  NonGenerationReport r;
  const auto in_f = per_copy_in_factors(theta.hit, 1);
  r.s = generalized_robustness(theta.hit.choi(), out_set, in_f, opt).value;
  for (const auto& f : free_inputs) {
    NonGenerationEntry e;
    e.t = inner(theta.test, f.choi());
    r.worst_t = std::max(r.worst_t, e.t);
    e.measured = generalized_robustness(theta.apply_choi(f.choi()), out_set, in_f, opt).value;
    e.precondition = 1.0 / (1.0 + r.s) >= e.t;
    if (r.s > 0) e.bound = (1.0 / (1.0 + r.s) - e.t) / (r.s / (1.0 + r.s));
    else e.bound = e.precondition ? 0.0 : std::numeric_limits<double>::infinity();
    if (e.precondition) e.pass = e.measured <= e.bound + 1e-6;
    r.holds = r.holds && e.pass;
    r.entries.push_back(e);
  }
  return r;
}

// ---------- asymptotic monotonicity (reported, not asserted) ----------

struct ThetaStage {
  std::function<QuantumChannel(const QuantumChannel&)> map;  // acts on N^(x)n (grouped order)
  ConvexStateSet out_set;                                     // free Choi states of the output (per-copy order)
  int out_copies = 1;
};

struct MonotonicityRow {
  int n = 0;
  double input_rate = 0;   // (1/n) R_R(N^(x)n)
  double output_rate = 0;  // (1/n) R_R(Theta_n(N^(x)n))
};

inline std::vector<MonotonicityRow> asymptotic_monotonicity_audit(const QuantumChannel& n, const FreeFamily& in_family,
                                                                  const std::vector<ThetaStage>& stages,
                                                                  const FwOptions& opt = {}) {
  std::vector<MonotonicityRow> rows;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const int copies = static_cast<int>(i) + 1;
    const QuantumChannel nn = tensor_power(n, copies);
    MonotonicityRow row;
    row.n = copies;
    row.input_rate = relative_entropy_of_resource(nn, in_family.level(copies), copies, opt).value / copies;
    const QuantumChannel out = stages[i].map(nn);
    row.output_rate = relative_entropy_of_resource(out, stages[i].out_set, stages[i].out_copies, opt).value / copies;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace qstein
