#include <catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"

using namespace rfavar;
using Catch::Approx;

namespace {

// Classic factor-analysis EM (unit-variance factors, diagonal noise) run to convergence.
struct FaSolution {
  Matrix lambda;
  Vector phi;
};

FaSolution factor_analysis_em(const Matrix& s, Matrix lambda, Vector phi, int iters) {
  const Index r = lambda.cols();
  for (int k = 0; k < iters; ++k) {
    const Matrix sigma = lambda * lambda.transpose() + Matrix(phi.asDiagonal());
    const Matrix beta = Eigen::LLT<Matrix>(sigma).solve(lambda).transpose();  // r x N
    const Matrix ezz = Matrix::Identity(r, r) - beta * lambda + beta * s * beta.transpose();
    const Matrix next = s * beta.transpose() * ezz.inverse();
    phi = (s - next * beta * s).diagonal().cwiseMax(1e-8);
    lambda = next;
  }
  return {lambda, phi};
}

Matrix strict_panel(Index n, Index t, Index r1, std::uint64_t seed, double idio_scale = 1.0) {
  DgpConfig c;
  c.n_series = n;
  c.n_periods = t;
  c.r1 = r1;
  c.r2 = 0;
  c.zero_fraction = 0.0;
  c.idio_rho = 0.0;
  c.idio_scale = idio_scale;
  c.seed = seed;
  return simulate(c).x;
}

}  // namespace

TEST_CASE("ic_multiplier at N=126, T=384", "[estimator]") {
  const long double n = 126.0L, t = 384.0L;
  const long double oracle = std::sqrt(std::log(2.0L * n) / n + std::log(n) / (n * t));
  CHECK(ic_multiplier(126, 384) == Approx(static_cast<double>(oracle)).epsilon(1e-15));
  CHECK(std::abs(ic_multiplier(126, 384) - 0.2097) < 5e-5);
}

TEST_CASE("unpenalized fit stays at the initializer's fixed point", "[estimator]") {
  const Matrix x = standardize(strict_panel(15, 200, 2, 41)).panel;
  const Matrix g(200, 0);
  InitOptions io;
  io.tol = 1e-12;
  io.max_iter = 400000;
  io.c = 0.05;
  const auto init = init_unpenalized(x, g, 2, io);
  REQUIRE(init.converged);
  FitOptions fo;
  fo.init = io;
  fo.tol = 1e-12;
  fo.max_iter = 400000;
  fo.c = 0.05;
  const auto f = fit_from(x, g, start_from_init(init), PenaltyPair{}, fo);
  CHECK((f.loadings.latent - init.lambda_f).norm() <= 1e-6);

  // independent oracle: the textbook factor-analysis EM, compared through rotation-free quantities
  const Matrix s = sample_covariance(x);
  const auto fa = factor_analysis_em(s, init.lambda_f + 0.05 * testing::random_matrix(15, 2, 3),
                                     Vector::Constant(15, 0.5), 200000);
  const Matrix a = f.loadings.latent * f.loadings.latent.transpose();
  const Matrix b = fa.lambda * fa.lambda.transpose();
  CHECK((a - b).norm() <= 1e-6);
  CHECK((f.phi_e - fa.phi).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("unpenalized fit on near-noiseless strict factor data", "[estimator]") {
  DgpConfig c;
  c.n_series = 30;
  c.n_periods = 200;
  c.r1 = 2;
  c.r2 = 0;
  c.zero_fraction = 0.0;
  c.idio_rho = 0.0;
  c.idio_scale = 1e-8;
  c.seed = 43;
  const auto t = simulate(c);
  const auto f = fit(t.x, Matrix(200, 0), 2, PenaltyPair{});
  const Matrix common = f.loadings.latent * f.factors_f.transpose();
  const Matrix truth = t.loadings.full() * t.h().transpose();
  CHECK((common - truth).norm() / truth.norm() <= 1e-3);
}

TEST_CASE("fit traces, zero discipline and variance floor", "[estimator]") {
  DgpConfig c;
  c.n_series = 40;
  c.n_periods = 150;
  c.r1 = 2;
  c.r2 = 1;
  c.zero_fraction = 0.6;
  c.seed = 44;
  const auto t = simulate(c);
  const Matrix x = standardize(t.x).panel;
  const auto f = fit(x, t.g, 2, PenaltyPair{0.2, 0.1});
  REQUIRE(f.objective_trace.size() >= 2);
  for (std::size_t k = 1; k < f.objective_trace.size(); ++k)
    CHECK(f.objective_trace[k] <= f.objective_trace[k - 1] + 1e-8);
  REQUIRE(f.surrogate_before.size() == f.surrogate_after.size());
  for (std::size_t k = 0; k < f.surrogate_after.size(); ++k) CHECK(f.surrogate_after[k] <= f.surrogate_before[k] + 1e-10);
  CHECK(f.phi_e.minCoeff() >= 1e-8);
  const Matrix full = f.loadings.full();
  const auto& mask = f.loadings.zero_mask;
  for (Index j = 0; j < full.cols(); ++j)
    for (Index i = 0; i < full.rows(); ++i) CHECK(mask(i, j) == (full(i, j) == 0.0));
  CHECK(f.factors_f.rows() == 150);
  CHECK(f.factors_f.cols() == 2);
}

TEST_CASE("fit rejects invalid settings", "[estimator]") {
  const Matrix x = standardize(strict_panel(10, 60, 1, 45)).panel;
  CHECK_THROWS_AS(fit(x, Matrix(60, 0), 1, PenaltyPair{-0.1, 0.0}), Error);
  FitOptions bad;
  bad.c = 0.0;
  CHECK_THROWS_AS(fit(x, Matrix(60, 0), 1, PenaltyPair{}, bad), Error);
  CHECK_THROWS_AS(fit(x, Matrix(59, 1), 1, PenaltyPair{}), Error);
}

TEST_CASE("singleton grid selects zero penalties", "[estimator]") {
  DgpConfig c;
  c.n_series = 30;
  c.n_periods = 100;
  c.seed = 46;
  const auto t = simulate(c);
  const Matrix x = standardize(t.x).panel;
  const auto sel = select_penalties(x, t.g, c.r1, {0.0}, {0.0});
  CHECK(sel.selected.mu1 == 0.0);
  CHECK(sel.selected.mu2 == 0.0);
  REQUIRE(sel.surface.size() == 1);
  CHECK(std::isfinite(sel.surface[0].ic));
  CHECK(sel.best_fit.has_value());
}

TEST_CASE("select_penalties validates grids", "[estimator]") {
  const Matrix x = standardize(strict_panel(10, 60, 1, 47)).panel;
  const Matrix g(60, 0);
  auto code_of = [&](std::vector<double> g1, std::vector<double> g2) {
    try {
      select_penalties(x, g, 1, g1, g2);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::NoConvergence;
  };
  CHECK(code_of({}, {0.0}) == ErrorCode::EmptyGrid);
  CHECK(code_of({0.0}, {}) == ErrorCode::EmptyGrid);
  CHECK(code_of({0.1, 0.0}, {0.0}) == ErrorCode::ConfigInvalid);
  CHECK(code_of({-0.1, 0.0}, {0.0}) == ErrorCode::ConfigInvalid);
}

TEST_CASE("IC tie-break prefers larger penalties", "[estimator]") {
  IcCell a, b;
  a.ic = b.ic = 1.0;
  a.mu1 = 0.1;
  b.mu1 = 0.2;
  CHECK(detail::better_cell(b, a));
  CHECK_FALSE(detail::better_cell(a, b));
  b.mu1 = 0.1;
  b.mu2 = 0.3;
  CHECK(detail::better_cell(b, a));
  b.ic = 1.5;
  CHECK(detail::better_cell(a, b));
}

TEST_CASE("grid search results do not depend on warm starts or threads", "[estimator]") {
  const Matrix x = standardize(strict_panel(20, 150, 1, 48)).panel;
  const Matrix g(150, 0);
  SelectOptions cold;
  cold.fit.tol = 1e-11;
  cold.fit.max_iter = 200000;
  cold.fit.c = 0.05;
  cold.fit.init.tol = 1e-11;
  cold.fit.init.max_iter = 200000;
  cold.fit.init.c = 0.05;
  SelectOptions warm = cold;
  warm.warm_start = true;
  const std::vector<double> grid{0.0, 0.05, 0.1, 0.15};
  const auto a = select_penalties(x, g, 1, grid, {0.0}, cold);
  const auto b = select_penalties(x, g, 1, grid, {0.0}, warm);
  REQUIRE(a.surface.size() == b.surface.size());
  for (std::size_t k = 0; k < a.surface.size(); ++k) CHECK(std::abs(a.surface[k].ic - b.surface[k].ic) <= 1e-6);
  REQUIRE(a.best_fit.has_value());
  REQUIRE(b.best_fit.has_value());
  CHECK((a.best_fit->loadings.full() - b.best_fit->loadings.full()).norm() <= 1e-6);

  DgpConfig c;
  c.n_series = 25;
  c.n_periods = 100;
  c.seed = 49;
  const auto t = simulate(c);
  const Matrix y = standardize(t.x).panel;
  SelectOptions one, many;
  one.threads = 1;
  many.threads = 3;
  const auto p = select_penalties(y, t.g, c.r1, {0.0, 0.05, 0.1}, {0.0, 0.1}, one);
  const auto q = select_penalties(y, t.g, c.r1, {0.0, 0.05, 0.1}, {0.0, 0.1}, many);
  for (std::size_t k = 0; k < p.surface.size(); ++k) CHECK(p.surface[k].ic == q.surface[k].ic);
  CHECK(p.selected.mu1 == q.selected.mu1);
  CHECK(p.selected.mu2 == q.selected.mu2);
}

TEST_CASE("adaptive grid cap excludes the all-zero block", "[estimator]") {
  DgpConfig c;
  c.n_series = 20;
  c.n_periods = 80;
  c.seed = 50;
  const auto t = simulate(c);
  const Matrix x = standardize(t.x).panel;
  SelectOptions so;
  so.adaptive_max = true;
  const auto sel = select_penalties(x, t.g, c.r1, {0.0, 0.1, 1e4, 2e4}, {0.0}, so);
  CHECK(sel.selected.mu1 < 1e4);
  for (const auto& cell : sel.surface)
    if (cell.mu1 >= 1e4) CHECK((cell.all_zero || cell.flagged));
}

TEST_CASE("dense truth keeps the smallest latent penalty", "[estimator][mc]") {
  int hits = 0;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    DgpConfig c;
    c.n_series = 100;
    c.n_periods = 200;
    c.r1 = 2;
    c.r2 = 1;
    c.zero_fraction = 0.0;
    c.seed = stream_seed(99, rep);
    const auto t = simulate(c);
    const Matrix x = standardize(t.x).panel;
    SelectOptions so;
    so.warm_start = true;
    const auto sel = select_penalties(x, t.g, 2, {0.0, 0.05, 0.1, 0.15}, {0.0, 0.1}, so);
    hits += sel.selected.mu1 == 0.0 ? 1 : 0;
  }
  CHECK(hits >= 14);
}
