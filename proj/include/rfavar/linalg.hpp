#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "rfavar/types.hpp"

namespace rfavar::linalg {

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

// Largest singular value.
inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  if (a.cols() == 1 || a.rows() == 1) return a.norm();
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

// Spectral norm of a diagonal matrix given by its diagonal.
inline double spectral_norm_diag(const Vector& d) {
  return d.size() == 0 ? 0.0 : d.cwiseAbs().maxCoeff();
}

inline double min_eigenvalue(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// Eigenvalues of a symmetric matrix lifted to at least `floor`.
inline Matrix lift_eigenvalues(const Matrix& sym, double floor, bool* changed = nullptr) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sym));
  Vector ev = es.eigenvalues();
  bool any = false;
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < floor) {
      ev(i) = floor;
      any = true;
    }
  }
  if (changed) *changed = any;
  if (!any) return sym;
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

// log|A| for symmetric positive definite A; throws NotPositiveDefinite otherwise.
inline double logdet_spd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "matrix is not positive definite");
  const auto& l = llt.matrixLLT();
  double s = 0.0;
  for (Index i = 0; i < a.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

inline double spectral_radius(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Solve the discrete Lyapunov equation X = A X A' + Q by doubling.
inline Matrix discrete_lyapunov(const Matrix& a, const Matrix& q) {
  if (spectral_radius(a) >= 1.0) throw Error(ErrorCode::UnstableVar, "Lyapunov equation requires a stable transition");
  Matrix x = q;
  Matrix ak = a;
  for (int it = 0; it < 200; ++it) {
    Matrix inc = ak * x * ak.transpose();
    x += inc;
    ak = ak * ak;
    if (inc.cwiseAbs().maxCoeff() <= 1e-16 * std::max(1.0, x.cwiseAbs().maxCoeff())) break;
  }
  return symmetrize(x);
}

// Covariance with factor structure, Sigma = L L' + diag(phi), applied through the
// Woodbury identity so that no N x N inverse is formed.
class FactorCovariance {
 public:
  FactorCovariance(const Matrix& loadings, const Vector& phi) : lambda_(loadings), phi_inv_(phi.cwiseInverse()) {
    if ((phi.array() <= 0.0).any()) throw Error(ErrorCode::NotPositiveDefinite, "idiosyncratic variances must be positive");
    w_ = phi_inv_.asDiagonal() * lambda_;
    const Index r = lambda_.cols();
    Matrix m = Matrix::Identity(r, r) + lambda_.transpose() * w_;
    m_llt_.compute(m);
    if (m_llt_.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "capacitance matrix is not positive definite");
    logdet_ = phi.array().log().sum();
    const auto& l = m_llt_.matrixLLT();
    for (Index i = 0; i < r; ++i) logdet_ += 2.0 * std::log(l(i, i));
  }

  double logdet() const { return logdet_; }

  // Sigma^{-1} * B
  Matrix solve(const Matrix& b) const {
    Matrix out = phi_inv_.asDiagonal() * b;
    if (lambda_.cols() > 0) out -= w_ * m_llt_.solve(w_.transpose() * b);
    return out;
  }

  // tr(Sigma^{-1} S) for symmetric S, without forming an N x N product.
  double trace_solve(const Matrix& s) const {
    double tr = (phi_inv_.array() * s.diagonal().array()).sum();
    if (lambda_.cols() > 0) {
      Matrix sw = s * w_;
      tr -= (m_llt_.solve(w_.transpose() * sw)).trace();
    }
    return tr;
  }

  Matrix inverse() const { return solve(Matrix::Identity(lambda_.rows(), lambda_.rows())); }

 private:
  Matrix lambda_;
  Vector phi_inv_;
  Matrix w_;
  Eigen::LLT<Matrix> m_llt_;
  double logdet_ = 0.0;
};

}  // namespace rfavar::linalg
