#include <catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"

using namespace rfavar;
using Catch::Approx;

namespace {

BoolMatrix offdiag_zeros(const Matrix& m) {
  BoolMatrix z(m.rows(), m.cols());
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) z(i, j) = i != j && m(i, j) == 0.0;
  return z;
}

bool subset(const BoolMatrix& a, const BoolMatrix& b) {
  return (a.array() <= b.array()).all();
}

Matrix random_cov(Index n, std::uint64_t seed) {
  const Matrix e = testing::random_matrix(n, 40, seed);
  return e * e.transpose() / 40.0;
}

}  // namespace

TEST_CASE("poet_tau at N=126, T=384", "[poet]") {
  const long double oracle = 1.0L / std::sqrt(126.0L) + std::sqrt(std::log(126.0L) / 384.0L);
  CHECK(poet_tau(126, 384) == Approx(static_cast<double>(oracle)).epsilon(1e-14));
  CHECK(std::abs(poet_tau(126, 384) - 0.20132) < 1e-4);
  CHECK(poet_threshold(Matrix::Identity(3, 3), 126, 384).tau == poet_tau(126, 384));
}

TEST_CASE("residual_cov examples", "[poet]") {
  // residuals [[1,-1],[2,0]] with divisor 2
  Matrix x(2, 2);
  x << 1, -1, 2, 0;
  const Matrix s = residual_cov(x, Matrix::Zero(2, 1), Matrix::Ones(2, 1));
  Matrix want(2, 2);
  want << 1, 1, 1, 2;
  CHECK(testing::max_abs(s - want) == 0.0);

  const Matrix y = testing::random_matrix(6, 30, 1);
  CHECK(testing::max_abs(residual_cov(y, Matrix::Zero(6, 2), testing::random_matrix(30, 2, 2)) -
                         y * y.transpose() / 30.0) < 1e-14);

  const Matrix lam = testing::random_matrix(6, 2, 3);
  const Matrix h = testing::random_matrix(30, 2, 4);
  CHECK(testing::max_abs(residual_cov(lam * h.transpose(), lam, h)) < 1e-12);

  CHECK_THROWS_AS(residual_cov(y, Matrix::Zero(5, 2), h), Error);
  CHECK_THROWS_AS(residual_cov(y, Matrix::Zero(6, 2), Matrix::Zero(29, 2)), Error);
}

TEST_CASE("poet_threshold keeps diagonal inputs", "[poet]") {
  const Matrix d = Vector::LinSpaced(5, 0.5, 2.5).asDiagonal();
  const auto out = poet_threshold(d, 126, 384);
  CHECK((out.matrix.array() == d.array()).all());
  CHECK_FALSE(out.pd_repaired);
  CHECK(out.nonzeros_per_row_max == 0);
  CHECK(out.zero_fraction() == 1.0);
}

TEST_CASE("poet_threshold with full shrinkage is diagonal", "[poet]") {
  Matrix s(3, 3);
  s << 1.0, 0.1, -0.2, 0.1, 2.0, 0.05, -0.2, 0.05, 1.5;
  const auto out = threshold_offdiag(s, 0.2);
  CHECK(out.matrix.isDiagonal(0.0));
  CHECK((out.matrix.diagonal().array() == s.diagonal().array()).all());
}

TEST_CASE("poet_threshold soft-thresholds off-diagonals and keeps the diagonal", "[poet]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix s = random_cov(12, 100 + seed);
    const auto out = threshold_offdiag(s, 0.15, false);
    CHECK((out.matrix.diagonal().array() == s.diagonal().array()).all());
    CHECK((out.matrix.array() == out.matrix.transpose().array()).all());
    for (Index j = 0; j < 12; ++j)
      for (Index i = 0; i < 12; ++i)
        if (i != j) CHECK(out.matrix(i, j) == soft_threshold(s(std::min(i, j), std::max(i, j)), 0.15));

    const auto rep = threshold_offdiag(s, 0.15, true);
    CHECK((rep.matrix.array() == rep.matrix.transpose().array()).all());
    CHECK(linalg::min_eigenvalue(rep.matrix) >= 1e-8 * (1.0 - 1e-6));
    if (!rep.pd_repaired) CHECK((rep.matrix.diagonal().array() == s.diagonal().array()).all());
  }
}

TEST_CASE("zero sets grow with tau and under repeated thresholding", "[poet]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix s = random_cov(10, 200 + seed);
    BoolMatrix prev = offdiag_zeros(threshold_offdiag(s, 0.0, false).matrix);
    for (double tau : {0.05, 0.1, 0.2, 0.4}) {
      const auto out = threshold_offdiag(s, tau, false);
      const BoolMatrix z = offdiag_zeros(out.matrix);
      CHECK(subset(prev, z));
      prev = z;

      const auto again = threshold_offdiag(out.matrix, tau, false);
      CHECK(subset(z, offdiag_zeros(again.matrix)));
      for (Index j = 0; j < 10; ++j)
        for (Index i = 0; i < 10; ++i)
          if (i != j && out.matrix(i, j) != 0.0) CHECK(again.matrix(i, j) == soft_threshold(out.matrix(i, j), tau));
    }
  }
}

TEST_CASE("poet_threshold lifts an indefinite result", "[poet]") {
  Matrix s(3, 3);
  s << 1.0, 1.5, 1.5, 1.5, 1.0, 1.5, 1.5, 1.5, 1.0;
  const auto out = threshold_offdiag(s, 0.1);
  CHECK(out.pd_repaired);
  CHECK(linalg::min_eigenvalue(out.matrix) >= 1e-8 * (1.0 - 1e-6));
  CHECK((out.matrix.array() == out.matrix.transpose().array()).all());
  CHECK(out.nonzeros_per_row_max == 2);
}

TEST_CASE("poet_threshold rejects non-square input", "[poet]") {
  CHECK_THROWS_AS(poet_threshold(Matrix::Zero(2, 3), 2, 10), Error);
}
