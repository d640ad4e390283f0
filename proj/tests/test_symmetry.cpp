#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "qstein/random.hpp"
#include "qstein/symmetry.hpp"

using namespace qstein;
using Catch::Matchers::WithinAbs;

TEST_CASE("twirl matches an explicit unitary average") {
  Rng rng(31);
  const auto x = random_state(DimLayout::uniform(2, 3), rng);
  Mat want = Mat::Zero(8, 8);
  for (const auto& g : all_permutations(3)) {
    const Mat u = oracle::permutation_unitary(g, 2);
    want += u * x.matrix() * u.adjoint();
  }
  want /= 6.0;
  const Mat t = twirl(x.matrix(), 2, 3);
  REQUIRE(max_abs(t - want) < 1e-14);
  REQUIRE(is_permutation_invariant(t, 2, 3));
  REQUIRE_FALSE(is_permutation_invariant(x.matrix(), 2, 3));
  // idempotent, trace preserving, fixes symmetric inputs
  REQUIRE(max_abs(twirl(t, 2, 3) - t) < 1e-14);
  REQUIRE_THAT(re_trace(t), WithinAbs(1.0, 1e-14));
  const Mat iid = tensor_power(random_state(2, rng).matrix(), 3);
  REQUIRE(max_abs(twirl(iid, 2, 3) - iid) < 1e-14);
}

TEST_CASE("twirl respects its budget") {
  Config cfg;
  cfg.budget.max_perm_sites = 3;
  const Mat x = Mat::Identity(16, 16) / 16.0;
  try {
    twirl(x, 2, 4, cfg);
    FAIL("expected budget error");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::budget_exceeded);
  }
}

TEST_CASE("pinching is a conditional expectation onto the commutant") {
  Rng rng(37);
  const Mat sigma = twirl(random_state(DimLayout::uniform(2, 3), rng).matrix(), 2, 3);
  const PinchingMap e(sigma);
  const Mat rho = random_state(8, rng).matrix();
  const Mat er = e.apply(rho);
  REQUIRE(max_abs(er * sigma - sigma * er) < 1e-12);
  REQUIRE(max_abs(e.apply(er) - er) < 1e-13);
  REQUIRE_THAT(re_trace(er), WithinAbs(1.0, 1e-13));
  Mat sum = Mat::Zero(8, 8);
  Mat via = Mat::Zero(8, 8);
  for (const Mat& p : e.projections()) {
    sum += p;
    via += p * rho * p;
  }
  REQUIRE(max_abs(sum - Mat::Identity(8, 8)) < 1e-13);
  REQUIRE(max_abs(via - er) < 1e-13);
  REQUIRE(e.commutes_with(er));
  // generic symmetric 3-qubit state: 4 + 2 distinct eigenvalues
  REQUIRE(e.num_blocks() == 6);
}

TEST_CASE("pinching identity and block bound") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat sigma = twirl(random_state(DimLayout::uniform(2, 2), rng).matrix(), 2, 2);
    const Mat rho = random_state(4, rng).matrix();
    const auto a = pinching_entropy_identity_audit(rho, sigma);
    REQUIRE(a.identity_ok);
    REQUIRE(a.bound_ok);
    REQUIRE(a.identity_residual < 1e-10);
  }
}

TEST_CASE("eigenvalue count bound") {
  REQUIRE(eigenvalue_count_bound(1, 2) == 4);
  REQUIRE(eigenvalue_count_bound(3, 2) == 16);
  REQUIRE(eigenvalue_count_bound(2, 3) == 243);
  REQUIRE_THROWS_AS(eigenvalue_count_bound(1000, 20), Error);
  Rng rng(43);
  for (int n = 1; n <= 4; ++n) {
    const Mat s = twirl(random_state(DimLayout::uniform(2, n), rng).matrix(), 2, n);
    REQUIRE(static_cast<std::uint64_t>(distinct_eigenvalue_count(s)) <= eigenvalue_count_bound(n, 2));
  }
}
