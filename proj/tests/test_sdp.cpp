#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "qstein/random.hpp"
#include "qstein/sdp.hpp"

using namespace qstein;
using Catch::Matchers::WithinAbs;

namespace {

Mat one(double v) { return Mat::Constant(1, 1, cd(v, 0)); }

Mat col(std::initializer_list<double> v) {
  Mat c(static_cast<int>(v.size()), 1);
  int i = 0;
  for (double x : v) c(i++, 0) = x;
  return c;
}

// lambda_max(A) = max Tr[A X], Tr X = 1, X >= 0.
SdpProblem max_eig_problem(const Mat& a) {
  SdpProblem p;
  const int x = p.add_block(static_cast<int>(a.rows()));
  p.set_objective(x, -a);
  p.add_constraint({{{x, Mat::Identity(a.rows(), a.cols())}}, Sense::eq, 1.0});
  return p;
}

// ||A||_1 = min Tr(P + N), P - N = A.
SdpProblem trace_norm_problem(const Mat& a) {
  SdpProblem p;
  const int d = static_cast<int>(a.rows());
  const int pp = p.add_block(d), nn = p.add_block(d);
  p.set_objective(pp, Mat::Identity(d, d));
  p.set_objective(nn, Mat::Identity(d, d));
  add_matrix_equality(p, d, {{pp, identity_map()}, {nn, scaled_map(-1.0)}}, a);
  return p;
}

double kkt_residual(const SdpProblem& p, const SdpSolution& s) {
  // complementarity <X_j, S_j> and min eigenvalues of X_j, S_j
  double worst = 0;
  for (std::size_t j = 0; j < p.blocks.size(); ++j) {
    if (p.blocks[j].kind == BlockKind::hermitian) {
      worst = std::max(worst, std::abs(inner(s.primal[j], s.dual_slack[j])));
      worst = std::max(worst, -lambda_min(s.primal[j]));
      worst = std::max(worst, -lambda_min(s.dual_slack[j]));
    } else {
      worst = std::max(worst, std::abs(s.primal[j].real().col(0).dot(s.dual_slack[j].real().col(0))));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("linear program on a diagonal block") {
  SdpProblem p;
  const int x = p.add_block(3, BlockKind::diagonal);
  p.set_objective(x, col({1.0, 2.0, 0.5}));
  p.add_constraint({{{x, col({1, 1, 1})}}, Sense::eq, 1.0});
  p.add_constraint({{{x, col({0, 0, 1})}}, Sense::leq, 0.25});
  const auto s = solve_sdp(p);
  REQUIRE(s.ok());
  REQUIRE_THAT(s.primal_obj, WithinAbs(0.25 * 0.5 + 0.75, 1e-8));
  REQUIRE_THAT(s.primal[0](2, 0).real(), WithinAbs(0.25, 1e-7));
}

TEST_CASE("largest eigenvalue and trace norm match eigen decompositions") {
  Rng rng(101);
  for (int d : {2, 4, 7}) {
    const Mat a = random_state(d, rng).matrix() - random_state(d, rng).matrix() * 0.7;
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    const auto p = max_eig_problem(a);
    const auto s = solve_sdp(p);
    REQUIRE(s.ok());
    REQUIRE_THAT(-s.primal_obj, WithinAbs(es.eigenvalues().maxCoeff(), 1e-7));
    REQUIRE(std::abs(s.primal_obj - s.dual_obj) <= 1e-7 * (1 + std::abs(s.primal_obj)));
    REQUIRE(kkt_residual(p, s) < 1e-7);

    const auto q = trace_norm_problem(a);
    const auto t = solve_sdp(q);
    REQUIRE(t.ok());
    REQUIRE_THAT(t.primal_obj, WithinAbs(es.eigenvalues().cwiseAbs().sum(), 1e-7));
    REQUIRE(kkt_residual(q, t) < 1e-7);
  }
}

TEST_CASE("matrix multipliers reconstruct the dual operator") {
  Rng rng(5);
  const Mat a = random_state(3, rng).matrix() - random_state(3, rng).matrix();
  SdpProblem p;
  const int pp = p.add_block(3), nn = p.add_block(3);
  p.set_objective(pp, Mat::Identity(3, 3));
  p.set_objective(nn, Mat::Identity(3, 3));
  const auto idx = add_matrix_equality(p, 3, {{pp, identity_map()}, {nn, scaled_map(-1.0)}}, a);
  const auto s = solve_sdp(p);
  REQUIRE(s.ok());
  // optimal dual multiplier Y has -I <= Y <= I and <Y, A> = ||A||_1
  const Mat y = matrix_multiplier(s, idx, 3);
  REQUIRE(lambda_max(y) < 1 + 1e-7);
  REQUIRE(lambda_min(y) > -1 - 1e-7);
  REQUIRE_THAT(inner(y, a), WithinAbs(trace_norm(a), 1e-7));
}

TEST_CASE("infeasible problems return a Farkas certificate") {
  SdpProblem p;
  const int x = p.add_block(2);
  p.set_objective(x, Mat::Identity(2, 2));
  p.add_constraint({{{x, Mat::Identity(2, 2)}}, Sense::leq, -1.0});
  const auto s = solve_sdp(p);
  REQUIRE(s.status == SdpStatus::infeasible);
  REQUIRE(s.farkas_ray.has_value());
  const RVec& y = *s.farkas_ray;
  // b^T y = 1 and y_1 * I (+ slack) <= 0
  REQUIRE_THAT(-1.0 * y(0), WithinAbs(1.0, 1e-12));
  REQUIRE(y(0) <= 1e-8);

  SdpProblem q;
  const int z = q.add_block(2);
  Mat e00 = Mat::Zero(2, 2), e11 = Mat::Zero(2, 2);
  e00(0, 0) = 1;
  e11(1, 1) = 1;
  q.add_constraint({{{z, e00}}, Sense::eq, 1.0});
  q.add_constraint({{{z, e00}}, Sense::leq, 0.5});
  q.add_constraint({{{z, e11}}, Sense::geq, 0.0});
  REQUIRE(solve_sdp(q).status == SdpStatus::infeasible);
}

TEST_CASE("unbounded problems return a primal ray") {
  SdpProblem p;
  const int x = p.add_block(2, BlockKind::diagonal);
  p.set_objective(x, col({-1.0, 0.0}));
  p.add_constraint({{{x, col({1.0, -1.0})}}, Sense::eq, 0.0});
  const auto s = solve_sdp(p);
  REQUIRE(s.status == SdpStatus::unbounded);
  REQUIRE(s.primal_ray.has_value());
}

TEST_CASE("objective is invariant under unitary reparameterisation") {
  Rng rng(17);
  const Mat a = random_state(4, rng).matrix() - random_state(4, rng).matrix();
  const Mat u = random_unitary(4, rng);
  const auto s1 = solve_sdp(trace_norm_problem(a));
  SdpProblem p;
  const int pp = p.add_block(4), nn = p.add_block(4);
  p.set_objective(pp, Mat::Identity(4, 4));
  p.set_objective(nn, Mat::Identity(4, 4));
  add_matrix_equality(p, 4, {{pp, identity_map()}, {nn, scaled_map(-1.0)}}, u * a * u.adjoint());
  const auto s2 = solve_sdp(p);
  REQUIRE(s1.ok());
  REQUIRE(s2.ok());
  REQUIRE_THAT(s1.primal_obj, WithinAbs(s2.primal_obj, 1e-7));
}

TEST_CASE("weak duality holds on feasible iterates and runs are deterministic") {
  Rng rng(23);
  const Mat a = random_state(5, rng).matrix() - random_state(5, rng).matrix();
  SdpOptions o;
  o.record_history = true;
  const auto p = trace_norm_problem(a);
  const auto s = solve_sdp(p, o);
  REQUIRE(s.ok());
  int feasible = 0;
  for (const auto& it : s.history) {
    if (it.primal_infeas > 1e-9 || it.dual_infeas > 1e-9) continue;
    ++feasible;
    REQUIRE(it.dual_obj <= it.primal_obj + 1e-9);
  }
  REQUIRE(feasible >= 1);
  const auto s2 = solve_sdp(p, o);
  REQUIRE(s2.primal_obj == s.primal_obj);
  REQUIRE(s2.dual == s.dual);
}

TEST_CASE("budget and shape errors") {
  Config cfg;
  cfg.budget.sdp_max_sq_dim = 10;
  const auto p = max_eig_problem(Mat::Identity(4, 4));
  try {
    solve_sdp(p, {}, cfg);
    FAIL("expected budget error");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::budget_exceeded);
  }
  SdpProblem q;
  const int x = q.add_block(2);
  q.add_constraint({{{x, Mat::Identity(3, 3)}}, Sense::eq, 1.0});
  REQUIRE_THROWS_AS(solve_sdp(q), Error);
}

TEST_CASE("mixed hermitian and diagonal blocks") {
  // min t s.t. t >= <X, A_k> for k = 1..3 written with a 1x1 block and diagonal slacks
  Rng rng(29);
  std::vector<Mat> as;
  for (int k = 0; k < 3; ++k) as.push_back(random_state(3, rng).matrix());
  SdpProblem p;
  const int x = p.add_block(3), t = p.add_block(1);
  p.set_objective(t, one(1.0));
  p.add_constraint({{{x, Mat::Identity(3, 3)}}, Sense::eq, 1.0});
  for (const auto& a : as) p.add_constraint({{{t, one(1.0)}, {x, -a}}, Sense::geq, 0.0});
  const auto s = solve_sdp(p);
  REQUIRE(s.ok());
  double worst = 0;
  for (const auto& a : as) worst = std::max(worst, inner(a, s.primal[0]));
  REQUIRE_THAT(s.primal_obj, WithinAbs(worst, 1e-7));
  // the minimum over unit-trace X of max_k <A_k, X> is at most min_k lambda_min(A_k) over the hull
  for (const auto& a : as) REQUIRE(s.primal_obj >= lambda_min(a) - 1e-7);
}
