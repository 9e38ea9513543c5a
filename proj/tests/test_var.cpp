#include <catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"

using namespace rfavar;

TEST_CASE("ma_coefficients examples", "[var]") {
  Matrix phi(2, 2);
  phi << 0.5, 0.1, 0.0, 0.4;
  const auto ma = ma_coefficients(std::vector<Matrix>{phi}, 10);
  REQUIRE(ma.psi.size() == 11);
  CHECK((ma.psi[0].array() == Matrix::Identity(2, 2).array()).all());
  Matrix psi2(2, 2);
  psi2 << 0.25, 0.09, 0.0, 0.16;
  CHECK(testing::max_abs(ma.psi[2] - psi2) < 1e-15);
  Matrix power = Matrix::Identity(2, 2);
  for (int h = 1; h <= 10; ++h) {
    power = power * phi;
    CHECK(testing::max_abs(ma.psi[static_cast<std::size_t>(h)] - power) < 1e-12);
  }

  CHECK(ma_coefficients(std::vector<Matrix>{phi}, 0).psi.size() == 1);

  const Matrix a = testing::random_matrix(3, 3, 1) * 0.3;
  const Matrix b = testing::random_matrix(3, 3, 2) * 0.3;
  const auto two = ma_coefficients(std::vector<Matrix>{a, b}, 2);
  CHECK(testing::max_abs(two.psi[1] - a) == 0.0);
  CHECK(testing::max_abs(two.psi[2] - (a * a + b)) < 1e-15);
}

TEST_CASE("MA coefficients invert the lag polynomial", "[var]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto phi = draw_stable_var(3, 2, rng);
    const double radius = check_stability(phi).radius;
    // scaling Phi_j by s^j scales every companion root by s
    if (radius > 0.9) {
      for (std::size_t j = 0; j < phi.size(); ++j) phi[j] *= std::pow(0.9 / radius, static_cast<double>(j + 1));
    }
    REQUIRE(check_stability(phi).radius <= 0.9 + 1e-12);
    const int h_max = 50;
    const auto ma = ma_coefficients(phi, h_max);
    // coefficient k of Psi(z) (I - sum_j Phi_j z^j)
    for (int k = 1; k <= h_max; ++k) {
      Matrix coef = ma.psi[static_cast<std::size_t>(k)];
      for (int j = 1; j <= std::min<int>(k, 2); ++j)
        coef -= ma.psi[static_cast<std::size_t>(k - j)] * phi[static_cast<std::size_t>(j - 1)];
      CHECK(testing::max_abs(coef) <= 1e-6);
    }
  }
}

TEST_CASE("check_stability examples", "[var]") {
  const auto half = check_stability(std::vector<Matrix>{0.5 * Matrix::Identity(3, 3)});
  CHECK(half.stable);
  CHECK(std::abs(half.radius - 0.5) < 1e-12);
  const auto unit = check_stability(std::vector<Matrix>{Matrix::Identity(2, 2)});
  CHECK_FALSE(unit.stable);
  CHECK(std::abs(unit.radius - 1.0) < 1e-12);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    CHECK(check_stability(draw_stable_var(4, 3, rng)).radius < 0.95);
  }
}

TEST_CASE("fit_var recovers a noiseless VAR(1)", "[var]") {
  Matrix phi(2, 2);
  const double th = 0.3;
  phi << 0.99 * std::cos(th), -0.99 * std::sin(th), 0.99 * std::sin(th), 0.99 * std::cos(th);
  Matrix h(200, 2);
  h.row(0) << 1.0, 0.5;
  for (Index t = 1; t < 200; ++t) h.row(t) = (phi * h.row(t - 1).transpose()).transpose();
  for (bool intercept : {true, false}) {
    const auto m = fit_var(h, 1, intercept);
    CHECK(testing::max_abs(m.phi[0] - phi) <= 1e-8);
    CHECK(testing::max_abs(m.omega) <= 1e-12);
    CHECK(std::abs(m.companion_radius - 0.99) < 1e-8);
  }
}

TEST_CASE("fit_var on iid noise has small coefficients", "[var]") {
  const Matrix h = testing::random_matrix(5000, 3, 11);
  const auto m = fit_var(h, 1);
  CHECK(m.phi[0].cwiseAbs().maxCoeff() <= 3.0 * std::sqrt(1.0 / 5000.0));
  CHECK(m.residuals.rows() == 4999);
  CHECK(m.residuals.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit_var residual covariance is symmetric PSD", "[var]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DgpConfig c;
    c.n_series = 10;
    c.n_periods = 150;
    c.r1 = 2;
    c.r2 = 1;
    c.p = 2;
    c.seed = seed;
    const Matrix h = simulate(c).h();
    const auto m = fit_var(h, 3);
    CHECK((m.omega - m.omega.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(linalg::min_eigenvalue(m.omega) >= -1e-10);
    CHECK(m.omega.rows() == 3);
  }
}

TEST_CASE("fit_var is permutation equivariant", "[var]") {
  DgpConfig c;
  c.n_series = 10;
  c.n_periods = 300;
  c.r1 = 2;
  c.r2 = 1;
  c.p = 2;
  c.seed = 7;
  const Matrix h = simulate(c).h();
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(3);
  perm.indices() << 2, 0, 1;
  const Matrix hp = h * perm;
  const auto a = fit_var(h, 2);
  const auto b = fit_var(hp, 2);
  for (std::size_t j = 0; j < 2; ++j) {
    const Matrix back = perm * b.phi[j] * perm.transpose();
    CHECK(testing::max_abs(back - a.phi[j]) == 0.0);
  }
  CHECK(testing::max_abs(perm * b.omega * perm.transpose() - a.omega) == 0.0);
}

TEST_CASE("fit_var errors", "[var]") {
  CHECK_THROWS_AS(fit_var(testing::random_matrix(10, 3, 1), 3), Error);
  Matrix collinear = testing::random_matrix(100, 2, 2);
  collinear.col(1) = 2.0 * collinear.col(0);
  try {
    fit_var(collinear, 1);
    FAIL("expected SingularRegressors");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularRegressors);
  }
  try {
    fit_var(testing::random_matrix(10, 3, 1), 3);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientObservations);
  }
  Matrix bad = testing::random_matrix(50, 2, 3);
  bad(4, 1) = std::nan("");
  CHECK_THROWS_AS(fit_var(bad, 1), Error);
  CHECK_THROWS_AS(fit_var(testing::random_matrix(50, 2, 4), 0), Error);
}
