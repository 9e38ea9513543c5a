#pragma once

#include <Eigen/QR>

#include <vector>

#include "rfavar/linalg.hpp"
#include "rfavar/types.hpp"

namespace rfavar {

// Reduced-form VAR(p) on the composite factors h_t = (f_t', g_t')'.
struct VarModel {
  int p = 1;
  std::vector<Matrix> phi;  // p matrices r x r
  Vector intercept;         // size r (zero when fitted without intercept)
  Matrix omega;             // r x r innovation covariance, divisor T - p
  Matrix residuals;         // (T - p) x r
  double companion_radius = 0.0;
  bool has_intercept = true;

  Index r() const { return omega.rows(); }
};

// Moving-average coefficients Psi_0 = I, Psi_1, ..., Psi_hmax.
struct MaCoefficients {
  std::vector<Matrix> psi;
};

// Stacked first-order (companion) transition matrix of size rp x rp.
inline Matrix companion_matrix(const std::vector<Matrix>& phi) {
  if (phi.empty()) return Matrix();
  const Index r = phi.front().rows();
  const Index p = static_cast<Index>(phi.size());
  Matrix c = Matrix::Zero(r * p, r * p);
  for (Index j = 0; j < p; ++j) c.block(0, j * r, r, r) = phi[static_cast<std::size_t>(j)];
  if (p > 1) c.block(r, 0, r * (p - 1), r * (p - 1)).setIdentity();
  return c;
}

struct Stability {
  bool stable = false;
  double radius = 0.0;
};

inline Stability check_stability(const std::vector<Matrix>& phi) {
  double radius = linalg::spectral_radius(companion_matrix(phi));
  return {radius < 1.0, radius};
}

inline Stability check_stability(const VarModel& model) { return check_stability(model.phi); }

// Multivariate least squares of h_t on (1, h_{t-1}, ..., h_{t-p}).
inline VarModel fit_var(const Matrix& h, int p, bool intercept = true) {
  const Index t = h.rows();
  const Index r = h.cols();
  if (p < 1) throw Error(ErrorCode::ConfigInvalid, "lag order must be at least 1");
  const Index k = r * p + (intercept ? 1 : 0);
  if (t - p <= r * p + 1) throw Error(ErrorCode::InsufficientObservations, "need T - p > r p + 1");
  if (!h.allFinite()) throw Error(ErrorCode::InsufficientObservations, "factor matrix has non-finite entries");

  const Index n = t - p;
  Matrix z(n, k);
  Matrix y = h.bottomRows(n);
  for (Index s = 0; s < n; ++s) {
    Index col = 0;
    if (intercept) z(s, col++) = 1.0;
    for (int j = 1; j <= p; ++j) {
      z.block(s, col, 1, r) = h.row(s + p - j);
      col += r;
    }
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(z);
  qr.setThreshold(1e-12);
  if (qr.rank() < k) throw Error(ErrorCode::SingularRegressors, "lagged regressors are rank deficient");
  Matrix b = qr.solve(y);  // k x r

  VarModel m;
  m.p = p;
  m.has_intercept = intercept;
  m.intercept = intercept ? Vector(b.row(0).transpose()) : Vector::Zero(r);
  Index row = intercept ? 1 : 0;
  for (int j = 0; j < p; ++j) {
    m.phi.push_back(b.block(row, 0, r, r).transpose());
    row += r;
  }
  // residuals from the reflectors: each column of y sees the same operations, so
  // relabeling factors permutes residuals exactly
  Matrix qty = qr.householderQ().adjoint() * y;
  qty.topRows(k).setZero();
  m.residuals = qr.householderQ() * qty;
  m.omega = linalg::symmetrize(m.residuals.transpose() * m.residuals / static_cast<double>(n));
  m.companion_radius = check_stability(m.phi).radius;
  return m;
}

// Psi_h = sum_{j=1}^{min(h,p)} Phi_j Psi_{h-j}.
inline MaCoefficients ma_coefficients(const std::vector<Matrix>& phi, int h_max) {
  MaCoefficients out;
  const Index r = phi.empty() ? 0 : phi.front().rows();
  out.psi.push_back(Matrix::Identity(r, r));
  for (int h = 1; h <= h_max; ++h) {
    Matrix acc = Matrix::Zero(r, r);
    for (int j = 1; j <= std::min<int>(h, static_cast<int>(phi.size())); ++j)
      acc.noalias() += phi[static_cast<std::size_t>(j - 1)] * out.psi[static_cast<std::size_t>(h - j)];
    out.psi.push_back(std::move(acc));
  }
  return out;
}

inline MaCoefficients ma_coefficients(const VarModel& model, int h_max) { return ma_coefficients(model.phi, h_max); }

// Stationary covariance of h_t implied by (Phi, Omega), from the companion Lyapunov equation.
inline Matrix stationary_covariance(const std::vector<Matrix>& phi, const Matrix& omega) {
  const Index r = omega.rows();
  const Index p = static_cast<Index>(phi.size());
  Matrix c = companion_matrix(phi);
  Matrix q = Matrix::Zero(r * p, r * p);
  q.topLeftCorner(r, r) = omega;
  Matrix s = linalg::discrete_lyapunov(c, q);
  return s.topLeftCorner(r, r);
}

}  // namespace rfavar
