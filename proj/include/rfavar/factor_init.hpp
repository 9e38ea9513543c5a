#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

#include "rfavar/linalg.hpp"
#include "rfavar/objective.hpp"
#include "rfavar/random.hpp"
#include "rfavar/types.hpp"

namespace rfavar {

struct PcaResult {
  Matrix loadings;     // N x r, loadings' loadings / N = I
  Matrix factors;      // T x r
  Vector eigenvalues;  // top r eigenvalues of X X' / T, descending
};

namespace detail {

// Eigen-decomposition of X X' / T with eigenvalues in descending order.
struct SortedEigen {
  Vector values;
  Matrix vectors;
};

inline SortedEigen sorted_eigen(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  return {es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
}

inline Matrix sample_second_moment(const Matrix& x) {
  Matrix s = Matrix::Zero(x.rows(), x.rows());
  s.selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0 / static_cast<double>(x.cols()));
  return s.selfadjointView<Eigen::Lower>();
}

// Flip each column so its largest-magnitude entry is positive.
inline Vector fix_signs(Matrix& loadings) {
  Vector signs = Vector::Ones(loadings.cols());
  for (Index j = 0; j < loadings.cols(); ++j) {
    Index imax = 0;
    loadings.col(j).cwiseAbs().maxCoeff(&imax);
    if (loadings(imax, j) < 0.0) {
      loadings.col(j) *= -1.0;
      signs(j) = -1.0;
    }
  }
  return signs;
}

}  // namespace detail

// S_x = X X' / T.
inline Matrix sample_covariance(const Matrix& x) { return detail::sample_second_moment(x); }

// Principal-component factors: loadings = sqrt(N) x top-r eigenvectors of X X'/T,
// factors = X' loadings / N.
inline PcaResult pca_factors(const Matrix& x, Index r) {
  const Index n = x.rows();
  const Index t = x.cols();
  if (r < 1 || r > std::min(n, t)) throw Error(ErrorCode::RankDeficient, "need 1 <= r <= min(N, T)");
  auto eig = detail::sorted_eigen(sample_covariance(x));
  const double cutoff = 1e-12 * std::max(1.0, eig.values(0));
  if (eig.values(r - 1) <= cutoff) throw Error(ErrorCode::RankDeficient, "fewer than r positive eigenvalues");
  PcaResult out;
  out.loadings = std::sqrt(static_cast<double>(n)) * eig.vectors.leftCols(r);
  detail::fix_signs(out.loadings);
  out.factors = x.transpose() * out.loadings / static_cast<double>(n);
  out.eigenvalues = eig.values.head(r);
  return out;
}

// Penalty of the IC_1 criterion for k factors.
inline double ic1_penalty(Index k, Index n, Index t) {
  const double nd = static_cast<double>(n), td = static_cast<double>(t);
  return static_cast<double>(k) * ((nd + td) / (nd * td)) * std::log(nd * td / (nd + td));
}

struct FactorNumberSelection {
  Index selected = 1;
  std::vector<double> ic;  // ic[k-1] for k = 1..r_max
  std::vector<double> eigenvalues;
};

// argmin_k ln V(k) + IC_1 penalty over k = 1..r_max; ties go to the smaller k.
inline FactorNumberSelection select_num_factors_detail(const Matrix& x, Index r_max) {
  const Index n = x.rows(), t = x.cols();
  if (r_max < 1 || r_max > std::min(n, t)) throw Error(ErrorCode::ConfigInvalid, "r_max must lie in [1, min(N, T)]");
  Eigen::SelfAdjointEigenSolver<Matrix> es(sample_covariance(x), Eigen::EigenvaluesOnly);
  Vector ev = es.eigenvalues().reverse();
  const double total = ev.sum();
  FactorNumberSelection out;
  out.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  double best = 0.0;
  double explained = 0.0;
  for (Index k = 1; k <= r_max; ++k) {
    explained += ev(k - 1);
    const double v = std::max(total - explained, 1e-300) / static_cast<double>(n);
    const double ic = std::log(v) + ic1_penalty(k, n, t);
    out.ic.push_back(ic);
    if (k == 1 || ic < best) {
      best = ic;
      out.selected = k;
    }
  }
  return out;
}

inline Index select_num_factors(const Matrix& x, Index r_max) { return select_num_factors_detail(x, r_max).selected; }

// X M with M = I - G (G'G)^{-1} G'.
inline Matrix project_out_observed(const Matrix& x, const Matrix& g) {
  if (g.cols() == 0) return x;
  if (g.rows() != x.cols()) throw Error(ErrorCode::DimensionMismatch, "G must have T rows");
  if (g.rows() <= g.cols()) throw Error(ErrorCode::SingularGram, "need T > r2");
  Matrix gram = g.transpose() * g;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())))
    throw Error(ErrorCode::SingularGram, "G'G is not invertible");
  Matrix coef = ldlt.solve((x * g).transpose());  // r2 x N
  return x - coef.transpose() * g.transpose();
}

enum class SeedMethod { Pca, RandomOrthonormal };

struct InitOptions {
  int max_iter = 2000;
  double tol = 1e-6;
  double c = 0.01;
  SeedMethod seed_method = SeedMethod::Pca;
  std::uint64_t seed = 1;  // used by RandomOrthonormal
  double phi_floor = 1e-8;
};

struct InitState {
  Matrix lambda_f;  // N x r1
  Matrix factors_f; // T x r1
  Vector phi_e;     // N
  Matrix lambda_g;  // N x r2
  int iterations = 0;
  bool converged = false;
};

inline Matrix gls_factors(const Matrix& lambda_f, const Vector& phi_e, const Matrix& x);

// Unpenalized starting values: Step 1 projection, an unpenalized MM-EM run on the
// projected data seeded by PCA, then the observed-factor loadings by regression.
inline InitState init_unpenalized(const Matrix& x, const Matrix& g, Index r1, const InitOptions& opts = {}) {
  if (r1 < 1) throw Error(ErrorCode::ConfigInvalid, "r1 must be at least 1");
  const Index n = x.rows();
  const Matrix xdot = project_out_observed(x, g);
  const Matrix s = sample_covariance(xdot);
  auto eig = detail::sorted_eigen(s);
  if (eig.values(r1 - 1) <= 1e-12 * std::max(1.0, eig.values(0)))
    throw Error(ErrorCode::RankDeficient, "fewer than r1 positive eigenvalues in the projected data");

  // Loadings scaled for unit-variance factors, as the EM model assumes.
  Vector scale = eig.values.head(r1).cwiseMax(0.0).cwiseSqrt();
  Matrix basis = eig.vectors.leftCols(r1);
  if (opts.seed_method == SeedMethod::RandomOrthonormal) {
    Rng rng(opts.seed);
    Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(n, r1));
    basis = qr.householderQ() * Matrix::Identity(n, r1);
  }
  Matrix lambda = basis * scale.asDiagonal();
  detail::fix_signs(lambda);
  Vector phi = (s.diagonal() - lambda.rowwise().squaredNorm()).cwiseMax(opts.phi_floor);
  if (opts.seed_method == SeedMethod::RandomOrthonormal) phi = (0.5 * s.diagonal()).cwiseMax(opts.phi_floor);

  MmLoopOptions loop;
  loop.step.c = opts.c;
  loop.step.phi_floor = opts.phi_floor;
  loop.tol = opts.tol;
  loop.max_iter = opts.max_iter;
  auto res = run_mm_em(MmState{lambda, phi, r1}, s, PenaltyPair{}, loop);

  InitState out;
  out.lambda_f = res.state.lambda;
  out.phi_e = res.state.phi;
  out.iterations = res.iterations;
  out.converged = res.converged;
  out.factors_f = gls_factors(out.lambda_f, out.phi_e, xdot);
  if (g.cols() > 0) {
    Matrix resid = x - out.lambda_f * out.factors_f.transpose();
    Matrix gram = g.transpose() * g;
    out.lambda_g = gram.ldlt().solve((resid * g).transpose()).transpose();
  } else {
    out.lambda_g.resize(n, 0);
  }
  return out;
}

// f_t = (L' Phi^{-1} L)^{-1} L' Phi^{-1} x_t for every column of X, returned as T x r1.
inline Matrix gls_factors(const Matrix& lambda_f, const Vector& phi_e, const Matrix& x) {
  if (lambda_f.rows() != x.rows() || phi_e.size() != x.rows())
    throw Error(ErrorCode::DimensionMismatch, "loadings, variances and data must share N");
  if ((phi_e.array() <= 0.0).any()) throw Error(ErrorCode::SingularWeightedGram, "idiosyncratic variances must be positive");
  const Matrix w = phi_e.cwiseInverse().asDiagonal() * lambda_f;  // Phi^{-1} L
  const Matrix gram = lambda_f.transpose() * w;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularWeightedGram, "weighted loadings Gram is singular");
  const auto& l = llt.matrixLLT();
  double dmin = l.diagonal().minCoeff(), dmax = l.diagonal().maxCoeff();
  if (!(dmin > 1e-7 * dmax)) throw Error(ErrorCode::SingularWeightedGram, "weighted loadings Gram is ill conditioned");
  return llt.solve(w.transpose() * x).transpose();
}

}  // namespace rfavar
