#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "rfavar/linalg.hpp"
#include "rfavar/random.hpp"
#include "rfavar/types.hpp"
#include "rfavar/var.hpp"

namespace rfavar {

struct DgpConfig {
  Index n_series = 100;
  Index n_periods = 200;
  Index r1 = 2;
  Index r2 = 1;
  int p = 1;
  double beta = 1.0;           // column squared norms grow like N^beta
  double zero_fraction = 0.0;  // share of zero loadings per column
  Index idio_band = 1;         // nonzeros per row of Sigma_e
  double idio_rho = 0.0;
  double idio_scale = 1.0;     // idiosyncratic variance (diagonal of Sigma_e)
  std::uint64_t seed = 1;
  int burn_in = 200;
  bool normalize_factors = true;   // rescale (Phi, Omega) so the stationary factor covariance is I
  bool orthogonalize_latent = false;  // make F exactly orthogonal to G in sample
  bool zero_loadings = false;      // test hook: Lambda = 0

  Index r() const { return r1 + r2; }

  // Empty when valid; otherwise the name of the offending field and the allowed range.
  std::string validate() const {
    if (r1 < 0 || r2 < 0 || r1 + r2 < 1) return "r1/r2: need r1 + r2 >= 1";
    if (n_series < r1 + r2) return "n_series: must be >= r1 + r2";
    if (p < 1) return "p: must be >= 1";
    if (n_periods <= static_cast<Index>(p) * (r1 + r2)) return "n_periods: must exceed p * (r1 + r2)";
    if (!(beta >= 0.5 && beta <= 1.0)) return "beta: must lie in [0.5, 1]";
    if (!(zero_fraction >= 0.0 && zero_fraction < 1.0)) return "zero_fraction: must lie in [0, 1)";
    if (n_series - zero_count() < r1 + r2) return "zero_fraction: leaves fewer than r1 + r2 nonzeros per column";
    if (idio_band < 1) return "idio_band: must be >= 1";
    if (!(idio_rho > -1.0 && idio_rho < 1.0)) return "idio_rho: must lie in (-1, 1)";
    if (!(idio_scale > 0.0)) return "idio_scale: must be > 0";
    if (burn_in < 0) return "burn_in: must be >= 0";
    return {};
  }

  Index zero_count() const {
    return static_cast<Index>(std::llround(zero_fraction * static_cast<double>(n_series)));
  }
};

struct DgpTruth {
  Matrix x;  // N x T
  Matrix f;  // T x r1
  Matrix g;  // T x r2
  LoadingsMatrix loadings;
  Matrix sigma_e;
  std::vector<Matrix> phi;
  Matrix omega;

  Matrix h() const {
    Matrix out(f.rows(), f.cols() + g.cols());
    out << f, g;
    return out;
  }
};

// Random VAR coefficients whose companion matrix has spectral radius below 0.95.
inline std::vector<Matrix> draw_stable_var(Index r, int p, Rng& rng) {
  if (r < 1 || p < 1) throw Error(ErrorCode::ConfigInvalid, "draw_stable_var needs r >= 1 and p >= 1");
  std::vector<Matrix> phi;
  const double scale = 0.6 / std::sqrt(static_cast<double>(r * p));
  for (int j = 0; j < p; ++j) phi.push_back(scale * rng.normal_matrix(r, r));
  // Multiplying Phi_j by s^j scales every companion eigenvalue by s.
  for (double radius = check_stability(phi).radius; radius >= 0.95; radius = check_stability(phi).radius) {
    const double s = 0.9 / radius;
    double sj = 1.0;
    for (auto& m : phi) {
      sj *= s;
      m *= sj;
    }
  }
  return phi;
}

namespace detail {

inline Matrix random_orthogonal(Index r, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(r, r));
  Matrix q = qr.householderQ();
  Matrix rr = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < r; ++j)
    if (rr(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

// Covariance with eigenvalues in [0.2, 1], so condition number <= 5.
inline Matrix random_well_conditioned(Index r, Rng& rng) {
  Matrix q = random_orthogonal(r, rng);
  Vector ev(r);
  for (Index i = 0; i < r; ++i) ev(i) = rng.uniform(0.2, 1.0);
  return linalg::symmetrize(q * ev.asDiagonal() * q.transpose());
}

inline Matrix banded_idio_cov(const DgpConfig& cfg) {
  const Index n = cfg.n_series;
  const Index bw = (cfg.idio_band - 1) / 2;
  Matrix s = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    s(i, i) = cfg.idio_scale;
    for (Index j = i + 1; j <= std::min(n - 1, i + bw); ++j) {
      s(i, j) = s(j, i) = cfg.idio_scale * std::pow(cfg.idio_rho, static_cast<double>(j - i));
    }
  }
  if (bw == 0 || cfg.idio_rho == 0.0) return s;
  return linalg::lift_eigenvalues(s, 1e-3 * cfg.idio_scale);
}

inline Matrix draw_loadings_column(const DgpConfig& cfg, Rng& rng) {
  const Index n = cfg.n_series;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  Vector col(n);
  for (Index i = 0; i < n; ++i) {
    const double mag = rng.uniform(0.5, 1.5);
    col(i) = rng.uniform() < 0.5 ? -mag : mag;
  }
  for (Index k = 0; k < cfg.zero_count(); ++k) col(order[static_cast<std::size_t>(k)]) = 0.0;
  col *= std::sqrt(std::pow(static_cast<double>(n), cfg.beta)) / col.norm();
  return col;
}

}  // namespace detail

// Simulates a FAVAR panel X = Lambda^f F' + Lambda^g G' + e with VAR factor dynamics.
inline DgpTruth simulate(const DgpConfig& cfg) {
  if (auto msg = cfg.validate(); !msg.empty()) throw Error(ErrorCode::ConfigInvalid, msg);
  Rng rng(cfg.seed);
  const Index r = cfg.r();
  const Index n = cfg.n_series;
  const Index t = cfg.n_periods;

  DgpTruth truth;
  truth.phi = draw_stable_var(r, cfg.p, rng);
  truth.omega = detail::random_well_conditioned(r, rng);
  if (cfg.normalize_factors) {
    Matrix sh = stationary_covariance(truth.phi, truth.omega);
    Matrix l = Eigen::LLT<Matrix>(sh).matrixL();
    Matrix linv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(r, r));
    for (auto& m : truth.phi) m = linv * m * l;
    truth.omega = linalg::symmetrize(linv * truth.omega * linv.transpose());
  }

  const Matrix chol_omega = Eigen::LLT<Matrix>(truth.omega).matrixL();
  const Index total = t + cfg.burn_in;
  Matrix h = Matrix::Zero(total, r);
  for (Index s = 0; s < total; ++s) {
    Vector eta = chol_omega * rng.normal_matrix(r, 1);
    Vector hs = eta;
    for (int j = 1; j <= cfg.p && s - j >= 0; ++j) hs.noalias() += truth.phi[static_cast<std::size_t>(j - 1)] * h.row(s - j).transpose();
    h.row(s) = hs.transpose();
  }
  Matrix hk = h.bottomRows(t);
  truth.f = hk.leftCols(cfg.r1);
  truth.g = hk.rightCols(cfg.r2);
  if (cfg.orthogonalize_latent && cfg.r2 > 0 && cfg.r1 > 0) {
    Matrix coef = (truth.g.transpose() * truth.g).ldlt().solve(truth.g.transpose() * truth.f);
    truth.f -= truth.g * coef;
  }

  Matrix lam = Matrix::Zero(n, r);
  for (Index j = 0; j < r; ++j) lam.col(j) = detail::draw_loadings_column(cfg, rng);
  if (cfg.zero_loadings) lam.setZero();
  truth.loadings = LoadingsMatrix::from_full(lam, cfg.r1);

  truth.sigma_e = detail::banded_idio_cov(cfg);
  Matrix e = rng.normal_matrix(n, t);
  const bool diagonal = truth.sigma_e.isDiagonal(0.0);
  if (diagonal) {
    e = truth.sigma_e.diagonal().cwiseSqrt().asDiagonal() * e;
  } else {
    Matrix chol = Eigen::LLT<Matrix>(truth.sigma_e).matrixL();
    e = chol * e;
  }
  truth.x = lam * hk.transpose() + e;
  return truth;
}

// Lambda Sigma_H Lambda' + Sigma_e with Sigma_H the stationary factor covariance.
inline Matrix population_covariance(const DgpTruth& truth) {
  Matrix lam = truth.loadings.full();
  if (check_stability(truth.phi).radius >= 1.0) throw Error(ErrorCode::UnstableVar, "factor VAR is not stable");
  Matrix sh = stationary_covariance(truth.phi, truth.omega);
  return linalg::symmetrize(lam * sh * lam.transpose() + truth.sigma_e);
}

}  // namespace rfavar
