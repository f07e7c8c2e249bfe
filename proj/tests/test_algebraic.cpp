// Algebraic subsystem: chord/Newton solves and implicit-function tangents.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "hybridae/algebraic.hpp"
#include "hybridae/rng.hpp"
#include "models_for_tests.hpp"

using namespace hybridae;
using hytest::CubicDaeModel;
using hytest::SingularDaeModel;

// z^3 + z = x + p0 has one real root; at x = 2, p0 = 0 it is exactly z = 1
// with g_z = 3 z^2 + 1 = 4, hence dz/dx = dz/dp0 = 1/4.

TEST_CASE("chord solve finds the cubic root from the model guess") {
  CubicDaeModel m;
  const VecX p = m.layout().p_fixed;
  VecX x(1);
  x << 2.0;
  const VecX z = solve_algebraic(m, 0.0, x, p, m.z0_guess());
  REQUIRE(z.size() == 1);
  CHECK(z(0) == Catch::Approx(1.0).margin(1e-9));
  CHECK(std::abs(eval_g(m, 0.0, x, z, p)(0)) <= 1e-10);
}

TEST_CASE("consistent guesses return without iteration changes") {
  CubicDaeModel m;
  const VecX p = m.layout().p_fixed;
  VecX x(1), z0(1);
  x << 2.0;
  z0 << 1.0;
  const VecX z = solve_algebraic(m, 0.0, x, p, z0);
  CHECK(z(0) == 1.0);  // bitwise: the guess is already consistent
}

TEST_CASE("g_z and implicit tangents at the cubic root") {
  CubicDaeModel m;
  const VecX p = m.layout().p_fixed;
  VecX x(1), z(1);
  x << 2.0;
  z << 1.0;

  const MatX gz = g_z_matrix(m, 0.0, x, z, p);
  REQUIRE(gz.rows() == 1);
  CHECK(gz(0, 0) == Catch::Approx(4.0));

  CHECK(algebraic_dz_dx(m, 0.0, x, z, p)(0, 0) == Catch::Approx(0.25));

  TangentSeeds s = TangentSeeds::zero(1, 1, 2, 1);
  s.dp(0, 0) = 1.0;  // d/dp0
  CHECK(algebraic_tangent(m, 0.0, x, z, p, s)(0, 0) == Catch::Approx(0.25));
}

TEST_CASE("implicit tangents match finite differences of the solve") {
  CubicDaeModel m;
  SplitMix64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    VecX x(1), p(2);
    x << rng.uniform(-3.0, 3.0);
    p << rng.uniform(-1.0, 1.0), 1.0;
    // the monotone cubic admits a globally convergent fresh-Jacobian solve
    const VecX z = newton_algebraic(m, 0.0, x, p, VecX::Zero(1));

    TangentSeeds s = TangentSeeds::zero(1, 1, 2, 2);
    s.dx(0, 0) = 1.0;
    s.dp(0, 1) = 1.0;
    const MatX dz = algebraic_tangent(m, 0.0, x, z, p, s);

    const double eps = 1e-6;
    auto solved = [&](const VecX& xx, const VecX& pp) {
      return solve_algebraic(m, 0.0, xx, pp, z)(0);
    };
    VecX xp = x, xm = x;
    xp(0) += eps;
    xm(0) -= eps;
    const double fd_x = (solved(xp, p) - solved(xm, p)) / (2.0 * eps);
    VecX pp = p, pm = p;
    pp(0) += eps;
    pm(0) -= eps;
    const double fd_p = (solved(x, pp) - solved(x, pm)) / (2.0 * eps);

    CHECK(dz(0, 0) == Catch::Approx(fd_x).margin(1e-6));
    CHECK(dz(0, 1) == Catch::Approx(fd_p).margin(1e-6));
  }
}

TEST_CASE("newton solve reaches near machine precision") {
  CubicDaeModel m;
  const VecX p = m.layout().p_fixed;
  VecX x(1);
  x << 2.0;
  const VecX z = newton_algebraic(m, 0.0, x, p, 3.0 * VecX::Ones(1));
  CHECK(std::abs(z(0) - 1.0) <= 1e-12);
  CHECK(std::abs(eval_g(m, 0.0, x, z, p)(0)) <= 1e-13);
}

TEST_CASE("structurally singular systems fail loudly") {
  SingularDaeModel m;
  const VecX p = m.layout().p_fixed;
  VecX x(1);
  x << 1.0;  // residual x cannot be reduced by moving z
  CHECK_THROWS_AS(solve_algebraic(m, 0.0, x, p, VecX::Zero(1)),
                  AlgebraicFailure);
  CHECK_THROWS_AS(newton_algebraic(m, 0.0, x, p, VecX::Zero(1)),
                  SingularJacobian);
}

TEST_CASE("empty algebraic systems return empty vectors") {
  hytest::DropModel m;
  const VecX p = m.layout().p_fixed;
  const VecX z = solve_algebraic(m, 0.0, m.x0(), p, VecX());
  CHECK(z.size() == 0);
}
