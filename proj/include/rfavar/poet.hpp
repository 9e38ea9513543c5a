#pragma once

#include <cmath>

#include "rfavar/linalg.hpp"
#include "rfavar/objective.hpp"
#include "rfavar/types.hpp"

namespace rfavar {

struct ThresholdedCov {
  Matrix matrix;
  double tau = 0.0;
  Index nonzeros_per_row_max = 0;  // realized S_N, off-diagonal entries only
  bool pd_repaired = false;

  // Share of off-diagonal entries set to zero.
  double zero_fraction() const {
    const Index n = matrix.rows();
    if (n < 2) return 0.0;
    Index zeros = 0;
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i)
        if (i != j && matrix(i, j) == 0.0) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(n * (n - 1));
  }
};

// (1/T) sum_t (x_t - L h_t)(x_t - L h_t)'.
inline Matrix residual_cov(const Matrix& x, const Matrix& loadings, const Matrix& factors) {
  if (loadings.rows() != x.rows() || factors.rows() != x.cols() || factors.cols() != loadings.cols())
    throw Error(ErrorCode::DimensionMismatch, "residual_cov: X is N x T, loadings N x r, factors T x r");
  const Matrix e = x - loadings * factors.transpose();
  Matrix s = Matrix::Zero(x.rows(), x.rows());
  s.selfadjointView<Eigen::Lower>().rankUpdate(e, 1.0 / static_cast<double>(x.cols()));
  return s.selfadjointView<Eigen::Lower>();
}

inline Matrix residual_cov(const Matrix& x, const LoadingsMatrix& loadings, const Matrix& factors) {
  return residual_cov(x, loadings.full(), factors);
}

// tau = 1/sqrt(N) + sqrt(log N / T)
inline double poet_tau(Index n, Index t) {
  const double nd = static_cast<double>(n), td = static_cast<double>(t);
  return 1.0 / std::sqrt(nd) + std::sqrt(std::log(nd) / td);
}

// Soft-thresholds the off-diagonal entries at a given tau; the diagonal is kept.
inline ThresholdedCov threshold_offdiag(const Matrix& s_e, double tau, bool repair = true) {
  const Index n = s_e.rows();
  ThresholdedCov out;
  out.tau = tau;
  out.matrix = s_e;
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < j; ++i) {
      const double v = soft_threshold(s_e(i, j), tau);
      out.matrix(i, j) = v;
      out.matrix(j, i) = v;
    }
  }
  for (Index i = 0; i < n; ++i) {
    Index nz = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i && out.matrix(i, j) != 0.0) ++nz;
    out.nonzeros_per_row_max = std::max(out.nonzeros_per_row_max, nz);
  }
  if (repair && n > 0 && out.nonzeros_per_row_max > 0) {
    Eigen::LLT<Matrix> llt(out.matrix);
    const bool pd = llt.info() == Eigen::Success && linalg::min_eigenvalue(out.matrix) >= 1e-8;
    if (!pd) {
      out.matrix = linalg::lift_eigenvalues(out.matrix, 1e-8, &out.pd_repaired);
      // keep the off-diagonal pattern symmetric bit-for-bit
      out.matrix = out.matrix.triangularView<Eigen::Upper>();
      out.matrix = out.matrix.selfadjointView<Eigen::Upper>();
    }
  } else if (repair && n > 0 && out.matrix.diagonal().minCoeff() < 1e-8) {
    for (Index i = 0; i < n; ++i) out.matrix(i, i) = std::max(out.matrix(i, i), 1e-8);
    out.pd_repaired = true;
  }
  return out;
}

inline ThresholdedCov poet_threshold(const Matrix& s_e, Index n, Index t_periods, bool repair = true) {
  if (s_e.rows() != s_e.cols()) throw Error(ErrorCode::DimensionMismatch, "poet_threshold: square input required");
  return threshold_offdiag(s_e, poet_tau(n, t_periods), repair);
}

}  // namespace rfavar
