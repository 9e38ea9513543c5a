#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

#include "rfavar/error.hpp"

namespace rfavar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// Factor loadings split into the latent block and the observed-factor block.
// The zero mask tracks exact zeros produced by soft-thresholding.
struct LoadingsMatrix {
  Matrix latent;    // N x r1
  Matrix observed;  // N x r2
  BoolMatrix zero_mask;

  LoadingsMatrix() = default;
  LoadingsMatrix(Matrix lat, Matrix obs) : latent(std::move(lat)), observed(std::move(obs)) {
    if (observed.size() == 0) observed.resize(latent.rows(), 0);
    refresh_mask();
  }

  static LoadingsMatrix from_full(const Matrix& full, Index r1) {
    return LoadingsMatrix(full.leftCols(r1), full.rightCols(full.cols() - r1));
  }

  Index n_series() const { return latent.rows(); }
  Index r1() const { return latent.cols(); }
  Index r2() const { return observed.cols(); }
  Index r() const { return r1() + r2(); }

  Matrix full() const {
    Matrix out(n_series(), r());
    out << latent, observed;
    return out;
  }

  void set_full(const Matrix& full) {
    latent = full.leftCols(r1());
    observed = full.rightCols(r2());
    refresh_mask();
  }

  void refresh_mask() {
    zero_mask.resize(n_series(), r());
    for (Index j = 0; j < r1(); ++j)
      for (Index i = 0; i < n_series(); ++i) zero_mask(i, j) = latent(i, j) == 0.0;
    for (Index j = 0; j < r2(); ++j)
      for (Index i = 0; i < n_series(); ++i) zero_mask(i, r1() + j) = observed(i, j) == 0.0;
  }

  // Number of nonzero loadings (L_N summed over columns).
  Index nonzero_count() const {
    return static_cast<Index>(zero_mask.size() - zero_mask.count());
  }
  Index latent_zero_count() const { return (latent.array() == 0.0).count(); }
};

// L1 penalties on the latent (mu1) and observed (mu2) loading blocks.
struct PenaltyPair {
  double mu1 = 0.0;
  double mu2 = 0.0;

  bool valid() const {
    return std::isfinite(mu1) && std::isfinite(mu2) && mu1 >= 0.0 && mu2 >= 0.0;
  }
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace rfavar
