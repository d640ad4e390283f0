#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "qstein/qrt.hpp"
#include "qstein/random.hpp"

using namespace qstein;
using Catch::Matchers::WithinAbs;

namespace {

const DimLayout qubit = DimLayout::single(2);

// min_t max_i p_i / (t q1_i + (1-t) q2_i) - 1 by ternary search; the objective is convex in t.
double classical_robustness_two(const std::vector<double>& p, const std::vector<double>& q1, const std::vector<double>& q2) {
  auto f = [&](double t) {
    double m = 0;
    for (std::size_t i = 0; i < p.size(); ++i) m = std::max(m, p[i] / (t * q1[i] + (1 - t) * q2[i]));
    return m;
  };
  double lo = 0, hi = 1;
  for (int it = 0; it < 300; ++it) {
    const double a = lo + (hi - lo) / 3, b = hi - (hi - lo) / 3;
    (f(a) <= f(b) ? hi : lo) = (f(a) <= f(b) ? b : a);
  }
  return std::min({f(0.5 * (lo + hi)), f(0.0), f(1.0)}) - 1;
}

// Dmax form for a single full-rank vertex: lambda_max(sigma^-1/2 rho sigma^-1/2) - 1.
double single_vertex_robustness(const Mat& rho, const Mat& sigma) {
  const Mat is = oracle::herm_fun(sigma, [](double x) { return 1 / std::sqrt(x); });
  return lambda_max(is * rho * is) - 1;
}

void check_certificate(const RobustnessResult& r, const Mat& obj, const ConvexStateSet& set) {
  REQUIRE_FALSE(r.infinite);
  REQUIRE(lambda_min((1 + r.value) * r.free_witness - obj) >= -1e-8);
  REQUIRE(membership(set, r.free_witness, 1e-7).member);
  if (r.value < 1e-6) return;  // the partner is undetermined for free objects
  REQUIRE(lambda_min(r.partner) >= -1e-7);
  REQUIRE_THAT(re_trace(r.partner), WithinAbs(1.0, 1e-7));
  REQUIRE(max_abs((obj + r.value * r.partner) / (1 + r.value) - r.free_witness) <= 1e-7);
}

QuantumChannel replacer(const Mat& state) { return QuantumChannel::replacer(qubit, DensityOperator(state, qubit)); }

Mat ket_state(double theta, double phase) {
  CVec v(2);
  v << std::cos(theta), std::exp(cd(0, phase)) * std::sin(theta);
  return v * v.adjoint();
}

}  // namespace

TEST_CASE("robustness of free states vanishes and membership agrees") {
  const auto ppt = ConvexStateSet::ppt_pairs(2, 2, 1);
  const Mat sep = kron(ket_state(0.3, 0.1), ket_state(1.1, 0.7));
  const auto r = generalized_robustness(sep, ppt);
  REQUIRE_THAT(r.value, WithinAbs(0.0, 1e-7));
  check_certificate(r, sep, ppt);
  Rng rng(1);
  const auto poly = ConvexStateSet::polytope({random_state(3, rng).matrix(), random_state(3, rng).matrix()},
                                             DimLayout::single(3));
  const Mat inside = 0.3 * poly.vertices()[0] + 0.7 * poly.vertices()[1];
  REQUIRE_THAT(generalized_robustness(inside, poly).value, WithinAbs(0.0, 1e-7));
  REQUIRE(membership(poly, inside).member);
  const Mat outside = random_state(3, rng).matrix();
  REQUIRE(generalized_robustness(outside, poly).value > 1e-4);
  REQUIRE_FALSE(membership(poly, outside).member);
}

TEST_CASE("pure-state robustness against PPT matches the Schmidt formula") {
  const auto phi = max_entangled(2).matrix();
  const auto ppt = ConvexStateSet::ppt_pairs(2, 2, 1);
  const auto r = generalized_robustness(phi, ppt);
  REQUIRE_THAT(r.value, WithinAbs(oracle::robustness_pure(max_entangled_vector(2), 2, 2), 1e-6));
  REQUIRE_THAT(r.value, WithinAbs(1.0, 1e-6));
  check_certificate(r, phi, ppt);
  Rng rng(2);
  for (int db : {2, 3}) {
    const auto set = ConvexStateSet::ppt_pairs(2, db, 1);
    for (int trial = 0; trial < 3; ++trial) {
      const CVec psi = random_unitary(2 * db, rng).col(0);
      const Mat rho = psi * psi.adjoint();
      const auto rr = generalized_robustness(rho, set);
      REQUIRE_THAT(rr.value, WithinAbs(oracle::robustness_pure(psi, 2, db), 1e-6));
      check_certificate(rr, rho, set);
    }
  }
}

TEST_CASE("polytope robustness agrees with classical and single-vertex oracles") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_simplex(3, rng), q1 = random_simplex(3, rng), q2 = random_simplex(3, rng);
    const auto set = ConvexStateSet::polytope({oracle::diag(q1), oracle::diag(q2)}, DimLayout::single(3));
    const auto r = generalized_robustness(oracle::diag(p), set);
    REQUIRE_THAT(r.value, WithinAbs(classical_robustness_two(p, q1, q2), 1e-6));
    check_certificate(r, oracle::diag(p), set);
  }
  for (int trial = 0; trial < 5; ++trial) {
    const Mat rho = random_state(3, rng).matrix(), sigma = random_state(3, rng).matrix();
    const auto set = ConvexStateSet::polytope({sigma}, DimLayout::single(3));
    REQUIRE_THAT(generalized_robustness(rho, set).value, WithinAbs(single_vertex_robustness(rho, sigma), 1e-6));
  }
}

TEST_CASE("robustness is convex and infinite outside the cone span") {
  Rng rng(4);
  const auto ppt = ConvexStateSet::ppt_pairs(2, 2, 1);
  for (int trial = 0; trial < 4; ++trial) {
    const Mat a = random_state(4, rng, 1).matrix(), b = random_state(4, rng, 2).matrix();
    const double p = 0.35;
    const double ra = generalized_robustness(a, ppt).value, rb = generalized_robustness(b, ppt).value;
    const double rm = generalized_robustness(Mat(p * a + (1 - p) * b), ppt).value;
    REQUIRE(rm <= p * ra + (1 - p) * rb + 1e-7);
  }
  const auto pure_set = ConvexStateSet::polytope({oracle::diag({1, 0})}, qubit);
  const auto r = generalized_robustness(oracle::diag({0.5, 0.5}), pure_set);
  REQUIRE(r.infinite);
  REQUIRE(std::isinf(r.value));
}

TEST_CASE("tensor bound on robustness") {
  const auto s1 = ConvexStateSet::ppt_pairs(2, 2, 1);
  const auto s2 = ConvexStateSet::ppt_pairs(2, 2, 2);
  const Mat phi = max_entangled(2).matrix();
  const auto two = robustness_tensor_bound_check(phi, phi, s1, s1, s2);
  REQUIRE(two.holds);
  REQUIRE(two.rab <= 3 + 1e-6);
  REQUIRE(two.rab >= 1 - 1e-6);

  Rng rng(5);
  const Mat free_b = kron(random_state(2, rng).matrix(), random_state(2, rng).matrix());
  const auto fb = robustness_tensor_bound_check(phi, free_b, s1, s1, s2);
  REQUIRE_THAT(fb.rb, WithinAbs(0.0, 1e-7));
  REQUIRE(fb.rab <= fb.ra + 1e-6);

  std::vector<Mat> base = {random_state(2, rng).matrix(), random_state(2, rng).matrix()};
  const auto fam = FreeFamily::product_polytope(base, qubit);
  const Mat a = random_state(2, rng).matrix(), b = random_state(2, rng).matrix();
  REQUIRE(robustness_tensor_bound_check(a, b, fam.level(1), fam.level(1), fam.level(2)).holds);
}

TEST_CASE("relative entropy of resource is bounded by log-robustness") {
  const auto fam = FreeFamily::ppt_pairs(2, 2);
  const Mat phi = max_entangled(2).matrix();
  FwOptions o;
  o.gap_tol = 1e-8;
  const auto rows = log_robustness_vs_relative_entropy(phi, fam, 1, o);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].holds);
  REQUIRE_THAT(rows[0].rr_per_copy, WithinAbs(std::log(2.0), 1e-6));
  REQUIRE_THAT(rows[0].log_rg_per_copy, WithinAbs(std::log(2.0), 1e-6));

  const Mat sep = kron(ket_state(0.2, 0), ket_state(0.9, 0.4));
  const auto free_rows = log_robustness_vs_relative_entropy(sep, fam, 1, o);
  REQUIRE_THAT(free_rows[0].rr_per_copy, WithinAbs(0.0, 1e-7));
  REQUIRE_THAT(free_rows[0].log_rg_per_copy, WithinAbs(0.0, 1e-7));

  Rng rng(6);
  const Mat rho = random_state(4, rng, 2).matrix();
  o.max_lmo_calls = 20;
  for (const auto& row : log_robustness_vs_relative_entropy(rho, fam, 2, o)) {
    REQUIRE(row.holds);
    REQUIRE(row.rr_gap_per_copy >= 0);
  }
}

TEST_CASE("channel robustness and the PPT channel set") {
  const auto id = QuantumChannel::identity_channel(qubit);
  const auto pptc = ConvexStateSet::ppt_channels(2, 2, 1);
  const auto r = generalized_robustness(id, pptc);
  REQUIRE_THAT(r.value, WithinAbs(1.0, 1e-6));
  const DimLayout cl({2, 2});
  // the partner and witness are Choi states
  QuantumChannel(r.partner, qubit, qubit);
  QuantumChannel(r.free_witness, qubit, qubit);
  REQUIRE(membership(pptc, r.free_witness).member);
  REQUIRE_FALSE(membership(pptc, kron(oracle::diag({1, 0}), oracle::diag({1, 0}))).member);

  // replacer channels: a convex set of Choi states
  std::vector<Mat> vs = {replacer(oracle::diag({1, 0})).choi(), replacer(oracle::diag({0, 1})).choi(),
                         replacer(ket_state(M_PI / 4, 0)).choi()};
  const auto rep = ConvexStateSet::polytope(vs, cl);
  const auto rr = generalized_robustness(id, rep);
  REQUIRE(std::isfinite(rr.value));
  QuantumChannel(rr.partner, qubit, qubit);
  REQUIRE(lambda_min((1 + rr.value) * rr.free_witness - id.choi()) >= -1e-8);
  // a set whose vertices are not Choi states is rejected for channel objects
  const auto bad = ConvexStateSet::polytope({kron(oracle::diag({1, 0}), oracle::diag({1, 0}))}, cl);
  REQUIRE_THROWS_AS(generalized_robustness(id, bad), Error);
  // relative entropy of resource for channels against PPT channels
  FwOptions o;
  o.gap_tol = 1e-8;
  REQUIRE_THAT(relative_entropy_of_resource(id, pptc, 1, o).value, WithinAbs(std::log(2.0), 1e-6));
  REQUIRE_THROWS_AS(relative_entropy_of_resource(id, ConvexStateSet::ppt_pairs(2, 2, 1), 1, o), Error);
}

TEST_CASE("per-copy Choi order matches the free family levels") {
  Rng rng(7);
  const auto a = random_channel(qubit, qubit, rng), b = random_channel(qubit, qubit, rng);
  const auto ab = tensor_channels(a, b);
  REQUIRE(max_abs(per_copy_choi(ab, 2) - kron(a.choi(), b.choi())) < 1e-14);
  const Mat x = random_state(4, rng).matrix();
  // (a (x) b)(x) equals the Kraus oracle on each factor
  const auto ka = oracle::kraus_from_choi(a.choi(), 2, 2), kb = oracle::kraus_from_choi(b.choi(), 2, 2);
  std::vector<Mat> kab;
  for (const Mat& p : ka)
    for (const Mat& q : kb) kab.push_back(kron(p, q));
  REQUIRE(max_abs(apply_channel_matrix(ab, x) - oracle::apply_kraus(kab, x)) < 1e-12);
  const auto back = channel_from_per_copy(per_copy_choi(ab, 2), qubit, qubit, 2);
  REQUIRE(max_abs(back.choi() - ab.choi()) < 1e-14);
}

TEST_CASE("truncated channel construction") {
  Rng rng(8);
  const auto n = random_channel(qubit, qubit, rng, 2);
  const auto free_ch = replacer(Mat::Identity(2, 2) / 2.0);
  // R above every log ratio: nothing is cut
  const auto big = truncated_channel(n, free_ch, 1, 1, 20.0);
  REQUIRE(big.valid);
  REQUIRE_THAT(big.cut_mass, WithinAbs(0.0, 1e-12));
  REQUIRE(max_abs(big.choi - n.choi()) < 1e-12);
  REQUIRE(big.bound_ok);
  REQUIRE(big.channel.has_value());

  for (int trial = 0; trial < 5; ++trial) {
    const auto ch = random_channel(qubit, qubit, rng, 1 + trial % 2);
    const auto fr = replacer(random_state(2, rng).matrix());
    double prev = std::numeric_limits<double>::infinity();
    for (double r : {0.2, 0.6, 1.2}) {
      const auto t = truncated_channel(ch, fr, 1, 1, r);
      REQUIRE(t.bound_ok);
      REQUIRE(t.free_mass <= std::exp(-r) + 1e-9);
      // gentle measurement on the kept part plus the refilled mass
      REQUIRE(t.trace_distance <= std::sqrt(t.cut_mass) + 0.5 * t.cut_mass + 1e-9);
      REQUIRE(t.trace_distance <= prev + 1e-12);
      prev = t.trace_distance;
      REQUIRE_THAT(re_trace(t.choi), WithinAbs(1.0, 1e-12));
      if (t.valid) {
        REQUIRE(t.operator_residual >= -1e-8);
        const auto set = ConvexStateSet::polytope({tensor_power(fr.choi(), 1),
                                                   kron(Mat(Mat::Identity(2, 2) / 2.0), Mat(Mat::Identity(2, 2) / 2.0))},
                                                  DimLayout({2, 2}));
        const auto rg = generalized_robustness(t.choi, set, {0});
        REQUIRE(rg.value <= t.robustness_bound + 1e-6);
      }
    }
  }
  // k = 2, m = 1 stays within the bound as well
  const auto t2 = truncated_channel(n, free_ch, 1, 2, 0.3);
  REQUIRE(t2.bound_ok);
  REQUIRE(t2.blocks >= 1);
}

TEST_CASE("theta protocol outputs valid channels and its Choi map is a comb") {
  Rng rng(9);
  const DimLayout cl({2, 2});
  const auto hit = random_channel(qubit, qubit, rng), miss = random_channel(qubit, qubit, rng);
  const auto one = theta_protocol(Mat::Identity(4, 4), cl, hit, miss);
  const auto zero = theta_protocol(Mat::Zero(4, 4), cl, hit, miss);
  const auto in = random_channel(qubit, qubit, rng);
  REQUIRE(max_abs(one.apply(in).choi() - hit.choi()) < 1e-14);
  REQUIRE(max_abs(zero.apply(in).choi() - miss.choi()) < 1e-14);

  const Mat e = random_state(4, rng).matrix();
  const Mat test = e / lambda_max(e);
  const auto theta = theta_protocol(test, cl, hit, miss);
  const auto a = random_channel(qubit, qubit, rng), b = random_channel(qubit, qubit, rng);
  const double p = 0.3;
  const Mat mix = p * a.choi() + (1 - p) * b.choi();
  REQUIRE(max_abs(theta.apply_choi(mix) - (p * theta.apply(a).choi() + (1 - p) * theta.apply(b).choi())) < 1e-14);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = random_channel(qubit, qubit, rng, 1 + trial % 3);
    REQUIRE_NOTHROW(theta.apply(c));
  }
  // the normalised Choi operator reproduces the map: Theta~(X) = D Tr_12[(X^T (x) I) J2]
  const Mat j2 = theta.choi_of_map();
  REQUIRE(super_channel_choi_validate(j2, 2, 2, 2, 2).valid);
  const Mat x = random_state(4, rng).matrix();
  const Mat applied = 4.0 * partial_trace(kron(x.transpose(), identity(4)) * j2, DimLayout({4, 4}), {1});
  REQUIRE(max_abs(applied - theta.apply_choi(x)) < 1e-12);
}

TEST_CASE("comb validation accepts the wire and rejects generic states") {
  const Mat wire = max_entangled(4).matrix();
  REQUIRE(super_channel_choi_validate(wire, 2, 2, 2, 2).valid);
  Rng rng(10);
  int rejected = 0;
  for (int trial = 0; trial < 100; ++trial)
    if (!super_channel_choi_validate(random_state(16, rng).matrix(), 2, 2, 2, 2).valid) ++rejected;
  REQUIRE(rejected == 100);
}

TEST_CASE("resource non-generation audit") {
  const DimLayout cl({2, 2});
  const auto id = QuantumChannel::identity_channel(qubit);
  std::vector<Mat> vs;
  for (const Mat& s : {oracle::diag({1, 0}), oracle::diag({0, 1}), ket_state(M_PI / 4, 0), ket_state(M_PI / 4, M_PI / 2)})
    vs.push_back(replacer(s).choi());
  const auto out_set = ConvexStateSet::polytope(vs, cl);
  const auto rob = generalized_robustness(id, out_set);
  REQUIRE(std::isfinite(rob.value));
  const QuantumChannel partner(rob.partner, qubit, qubit);

  Rng rng(11);
  std::vector<QuantumChannel> free_inputs;
  for (int k = 0; k < 4; ++k) free_inputs.push_back(replacer(random_state(2, rng).matrix()));
  for (double scale : {0.0, 0.05, 0.15}) {
    const Mat e = random_state(4, rng).matrix();
    const auto theta = theta_protocol(scale * e / lambda_max(e), cl, id, partner);
    const auto rep = resource_non_generation_audit(theta, free_inputs, out_set);
    REQUIRE_THAT(rep.s, WithinAbs(rob.value, 1e-6));
    REQUIRE(rep.holds);
    for (const auto& en : rep.entries) {
      if (scale == 0.0) REQUIRE_THAT(en.bound, WithinAbs(1 / rep.s, 1e-9));
      if (en.precondition) REQUIRE(en.measured <= en.bound + 1e-6);
    }
  }
}

TEST_CASE("asymptotic monotonicity audit reports both columns") {
  Rng rng(12);
  const DimLayout cl({2, 2});
  std::vector<Mat> base = {replacer(oracle::diag({1, 0})).choi(), replacer(oracle::diag({0, 1})).choi(),
                           replacer(Mat(Mat::Identity(2, 2) / 2.0)).choi()};
  const auto fam = FreeFamily::product_polytope(base, cl);
  const auto n = random_channel(qubit, qubit, rng);
  std::vector<ThetaStage> ident, repl;
  const auto free_out = replacer(oracle::diag({1, 0}));
  for (int k = 1; k <= 2; ++k) {
    ident.push_back({[](const QuantumChannel& c) { return c; }, fam.level(k), k});
    repl.push_back({[free_out](const QuantumChannel&) { return free_out; }, fam.level(1), 1});
  }
  for (const auto& row : asymptotic_monotonicity_audit(n, fam, ident))
    REQUIRE_THAT(row.output_rate, WithinAbs(row.input_rate, 1e-9));
  for (const auto& row : asymptotic_monotonicity_audit(n, fam, repl)) REQUIRE_THAT(row.output_rate, WithinAbs(0.0, 1e-9));
}

TEST_CASE("approximate Choi states are repaired to an exact input marginal") {
  Rng rng(12);
  const auto n = random_channel(qubit, DimLayout::single(3), rng, 2);
  // perturb the input marginal by ~1e-6 while staying positive
  Mat skew = kron(oracle::diag({1 + 1e-6, 1 - 1e-6}), identity(3));
  const Mat j = skew * n.choi() * skew;
  const auto fixed = channel_from_approx_choi(j, qubit, DimLayout::single(3));
  const Mat marg = partial_trace(fixed.choi(), DimLayout({2, 3}), {0});
  REQUIRE(max_abs(marg - identity(2) / 2.0) < 1e-14);
  REQUIRE(max_abs(fixed.choi() - n.choi()) < 1e-5);
  REQUIRE(lambda_min(fixed.choi()) >= -1e-12);
  // an exact Choi state is left unchanged
  REQUIRE(max_abs(channel_from_approx_choi(n.choi(), qubit, DimLayout::single(3)).choi() - n.choi()) < 1e-13);
}
