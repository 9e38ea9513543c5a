#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "rfavar/estimator.hpp"
#include "rfavar/linalg.hpp"
#include "rfavar/types.hpp"
#include "rfavar/var.hpp"

namespace rfavar {

enum class Scheme { IRa, IRb };

inline const char* to_string(Scheme s) { return s == Scheme::IRa ? "ira" : "irb"; }

inline Scheme parse_scheme(const std::string& s) {
  if (s == "ira" || s == "IRa") return Scheme::IRa;
  if (s == "irb" || s == "IRb") return Scheme::IRb;
  throw Error(ErrorCode::ConfigInvalid, "scheme: expected ira or irb, got '" + s + "'");
}

// h_hat = a * h_tilde; a_inv is the impact matrix of the structural shocks on h_tilde.
struct RotationPair {
  Matrix a;
  Matrix a_inv;
  Scheme scheme = Scheme::IRa;
};

struct IdentifiedModel {
  Scheme scheme = Scheme::IRa;
  // Reduced form, after the latent columns were reordered and sign-fixed.
  LoadingsMatrix loadings_tilde;
  Matrix factors_tilde;  // T x r, [F G]
  VarModel var_tilde;
  // Identified quantities.
  LoadingsMatrix loadings_hat;  // B_0
  Matrix factors_hat;           // T x r1
  VarModel var_hat;             // rotated coefficients, omega = Omega*
  Matrix omega_star;
  RotationPair rotation;
  std::vector<Index> column_order;  // new latent column k came from fitted column column_order[k]
  Vector signs;
  std::vector<Index> naming_rows;   // IRb only
  double fg_block_max = 0.0;        // largest |Omega*_fg| before it was forced to zero
  std::vector<std::string> warnings;

  Index r1() const { return loadings_hat.r1(); }
  Index r2() const { return loadings_hat.r2(); }
  Index r() const { return loadings_hat.r(); }
};

namespace detail {

inline Matrix omega_gg_solve(const Matrix& omega, Index r1, Index r2, const Matrix& rhs_t) {
  const Matrix ogg = omega.bottomRightCorner(r2, r2);
  Eigen::LLT<Matrix> llt(ogg);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularOmegaGg, "Omega_gg is not positive definite");
  const auto& l = llt.matrixLLT();
  if (!(l.diagonal().minCoeff() > 1e-7 * l.diagonal().maxCoeff())) throw Error(ErrorCode::SingularOmegaGg, "Omega_gg is ill conditioned");
  (void)r1;
  return llt.solve(rhs_t);
}

// K = Omega_fg Omega_gg^{-1}, r1 x r2.
inline Matrix k_matrix(const Matrix& omega, Index r1, Index r2) {
  if (omega.rows() != r1 + r2 || omega.cols() != r1 + r2) throw Error(ErrorCode::DimensionMismatch, "Omega must be r x r");
  if (r2 == 0) return Matrix(r1, 0);
  return omega_gg_solve(omega, r1, r2, omega.bottomLeftCorner(r2, r1)).transpose();
}

}  // namespace detail

inline RotationPair rotation_ira(const Matrix& omega, Index r1, Index r2) {
  const Matrix k = detail::k_matrix(omega, r1, r2);
  RotationPair out;
  out.scheme = Scheme::IRa;
  out.a = Matrix::Identity(r1 + r2, r1 + r2);
  out.a_inv = out.a;
  out.a.topRightCorner(r1, r2) = -k;
  out.a_inv.topRightCorner(r1, r2) = k;
  return out;
}

inline RotationPair rotation_irb(const Matrix& omega, const Matrix& lambda1, Index r1, Index r2) {
  if (lambda1.rows() != r1 || lambda1.cols() != r1) throw Error(ErrorCode::DimensionMismatch, "naming block must be r1 x r1");
  Eigen::JacobiSVD<Matrix> svd(lambda1);
  const auto& sv = svd.singularValues();
  const double cond = sv(r1 - 1) > 0.0 ? sv(0) / sv(r1 - 1) : std::numeric_limits<double>::infinity();
  if (!(cond < 1e10)) throw Error(ErrorCode::SingularNamingBlock, "naming block is singular (condition number " + std::to_string(cond) + ")");
  const Matrix k = detail::k_matrix(omega, r1, r2);
  RotationPair out;
  out.scheme = Scheme::IRb;
  out.a = Matrix::Identity(r1 + r2, r1 + r2);
  out.a_inv = out.a;
  out.a.topLeftCorner(r1, r1) = lambda1;
  out.a.topRightCorner(r1, r2) = -lambda1 * k;
  out.a_inv.topLeftCorner(r1, r1) = lambda1.partialPivLu().inverse();
  out.a_inv.topRightCorner(r1, r2) = k;
  return out;
}

// Omega_{f.g} = Omega_ff - Omega_fg Omega_gg^{-1} Omega_gf.
inline Matrix schur_fg(const Matrix& omega, Index r1, Index r2) {
  if (r2 == 0) return omega;
  const Matrix k = detail::k_matrix(omega, r1, r2);
  return linalg::symmetrize(omega.topLeftCorner(r1, r1) - k * omega.bottomLeftCorner(r2, r1));
}

// blockdiag(Omega_{f.g}, Omega_gg) for IRa; blockdiag(L1 Omega_{f.g} L1', Omega_gg) for IRb.
inline Matrix structural_cov(const Matrix& omega, Index r1, Index r2, Scheme scheme, const Matrix* lambda1 = nullptr) {
  Matrix ofg = schur_fg(omega, r1, r2);
  if (scheme == Scheme::IRb) {
    if (!lambda1) throw Error(ErrorCode::ConfigInvalid, "IRb structural covariance needs the naming block");
    ofg = linalg::symmetrize(*lambda1 * ofg * lambda1->transpose());
  }
  Matrix out = Matrix::Zero(r1 + r2, r1 + r2);
  out.topLeftCorner(r1, r1) = ofg;
  out.bottomRightCorner(r2, r2) = omega.bottomRightCorner(r2, r2);
  return out;
}

// Rotates a reduced-form VAR into h_hat = a h coordinates.
inline VarModel rotate_var(const VarModel& var, const RotationPair& rot) {
  VarModel out = var;
  for (auto& m : out.phi) m = rot.a * m * rot.a_inv;
  out.intercept = rot.a * var.intercept;
  if (var.residuals.size() > 0) out.residuals = var.residuals * rot.a.transpose();
  out.omega = linalg::symmetrize(rot.a * var.omega * rot.a.transpose());
  return out;
}

namespace detail {

inline double force_fg_zero(Matrix& omega_star, Index r1, Index r2) {
  double mx = 0.0;
  if (r1 > 0 && r2 > 0) {
    mx = omega_star.topRightCorner(r1, r2).cwiseAbs().maxCoeff();
    mx = std::max(mx, omega_star.bottomLeftCorner(r2, r1).cwiseAbs().maxCoeff());
    omega_star.topRightCorner(r1, r2).setZero();
    omega_star.bottomLeftCorner(r2, r1).setZero();
  }
  return mx;
}

inline IdentifiedModel rotate_all(const LoadingsMatrix& loadings, const Matrix& h_tilde, const VarModel& var, const RotationPair& rot) {
  const Index r1 = loadings.r1(), r2 = loadings.r2();
  IdentifiedModel m;
  m.scheme = rot.scheme;
  m.loadings_tilde = loadings;
  m.factors_tilde = h_tilde;
  m.var_tilde = var;
  m.rotation = rot;
  // Under IRa the latent columns of a_inv are unit vectors, so exact zeros survive.
  const Matrix lam_hat = loadings.full() * rot.a_inv;
  m.loadings_hat = LoadingsMatrix::from_full(lam_hat, r1);
  m.factors_hat = (h_tilde * rot.a.transpose()).leftCols(r1);
  m.var_hat = rotate_var(var, rot);
  m.omega_star = m.var_hat.omega;
  m.fg_block_max = force_fg_zero(m.omega_star, r1, r2);
  if (m.fg_block_max > 1e-10)
    m.warnings.push_back("structural fg covariance block was " + std::to_string(m.fg_block_max) + " before forcing");
  m.var_hat.omega = m.omega_star;
  m.column_order.resize(static_cast<std::size_t>(r1));
  std::iota(m.column_order.begin(), m.column_order.end(), Index{0});
  m.signs = Vector::Ones(r1);
  return m;
}

inline Matrix composite(const Matrix& f, const Matrix& g) {
  Matrix h(f.rows(), f.cols() + g.cols());
  h << f, g;
  return h;
}

// Applies the signed permutation p (r1 x r1, new = old * p on latent columns)
// to every latent-indexed quantity of the model.
inline void permute_latent(IdentifiedModel& m, const Matrix& p) {
  const Index r1 = m.r1(), r = m.r();
  Matrix pt = Matrix::Identity(r, r);
  pt.topLeftCorner(r1, r1) = p;
  auto conj = [&](const Matrix& a) { Matrix out = pt.transpose() * a * pt; return out; };

  m.loadings_tilde = LoadingsMatrix::from_full(m.loadings_tilde.full() * pt, r1);
  m.loadings_hat = LoadingsMatrix::from_full(m.loadings_hat.full() * pt, r1);
  m.factors_tilde = m.factors_tilde * pt;
  m.factors_hat = m.factors_hat * p;
  for (VarModel* v : {&m.var_tilde, &m.var_hat}) {
    for (auto& phi : v->phi) phi = conj(phi);
    v->intercept = pt.transpose() * v->intercept;
    if (v->residuals.size() > 0) v->residuals = v->residuals * pt;
    v->omega = conj(v->omega);
  }
  m.omega_star = conj(m.omega_star);
  m.rotation.a = conj(m.rotation.a);
  m.rotation.a_inv = conj(m.rotation.a_inv);
}

// Latent columns by descending exact-zero count, ties by descending column norm;
// then signs so each factor co-moves positively with the common component of the
// series carrying its largest absolute loading.
inline void order_and_sign(IdentifiedModel& m) {
  const Index r1 = m.r1();
  if (r1 == 0) return;
  const Matrix& lf = m.loadings_hat.latent;
  std::vector<Index> order(static_cast<std::size_t>(r1));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const Index za = (lf.col(a).array() == 0.0).count(), zb = (lf.col(b).array() == 0.0).count();
    if (za != zb) return za > zb;
    return lf.col(a).norm() > lf.col(b).norm();
  });
  const Matrix h_hat = composite(m.factors_hat, m.factors_tilde.rightCols(m.r2()));
  const Matrix lam = m.loadings_hat.full();
  Matrix p = Matrix::Zero(r1, r1);
  Vector signs(r1);
  for (Index k = 0; k < r1; ++k) {
    const Index col = order[static_cast<std::size_t>(k)];
    Index imax = 0;
    lf.col(col).cwiseAbs().maxCoeff(&imax);
    const Vector common = h_hat * lam.row(imax).transpose();
    const Vector fk = m.factors_hat.col(col);
    const double cov = (fk.array() - fk.mean()).matrix().dot((common.array() - common.mean()).matrix());
    signs(k) = cov < 0.0 ? -1.0 : 1.0;
    p(col, k) = signs(k);
  }
  permute_latent(m, p);
  m.column_order = order;
  m.signs = signs;
}

}  // namespace detail

// IRa: latent loadings unrotated, Omega*_fg = 0; then sparsity ordering and sign fixing.
inline IdentifiedModel apply_ira(const RfavarFit& fit, const Matrix& g, const VarModel& var) {
  const Index r1 = fit.r1(), r2 = g.cols();
  if (var.r() != r1 + r2) throw Error(ErrorCode::DimensionMismatch, "VAR dimension must equal r1 + r2");
  auto rot = rotation_ira(var.omega, r1, r2);
  auto m = detail::rotate_all(fit.loadings, detail::composite(fit.factors_f, g), var, rot);
  detail::order_and_sign(m);
  return m;
}

// IRb (named factors): the naming_rows block of the latent loadings becomes I.
inline IdentifiedModel apply_irb(const RfavarFit& fit, const Matrix& g, const VarModel& var, const std::vector<Index>& naming_rows) {
  const Index r1 = fit.r1(), r2 = g.cols();
  if (var.r() != r1 + r2) throw Error(ErrorCode::DimensionMismatch, "VAR dimension must equal r1 + r2");
  if (static_cast<Index>(naming_rows.size()) != r1) throw Error(ErrorCode::ConfigInvalid, "IRb needs exactly r1 naming rows");
  Matrix lambda1(r1, r1);
  for (Index k = 0; k < r1; ++k) {
    const Index row = naming_rows[static_cast<std::size_t>(k)];
    if (row < 0 || row >= fit.loadings.n_series()) throw Error(ErrorCode::ConfigInvalid, "naming row out of range");
    lambda1.row(k) = fit.loadings.latent.row(row);
  }
  auto rot = rotation_irb(var.omega, lambda1, r1, r2);
  auto m = detail::rotate_all(fit.loadings, detail::composite(fit.factors_f, g), var, rot);
  m.naming_rows = naming_rows;
  const Matrix expected = structural_cov(var.omega, r1, r2, Scheme::IRb, &lambda1);
  const double gap = (expected - m.omega_star).cwiseAbs().maxCoeff();
  if (gap > 1e-8 * std::max(1.0, expected.cwiseAbs().maxCoeff()))
    m.warnings.push_back("structural covariance differs from the block-diagonal form by " + std::to_string(gap));
  double block_err = 0.0;
  for (Index k = 0; k < r1; ++k)
    for (Index j = 0; j < r1; ++j)
      block_err = std::max(block_err, std::abs(m.loadings_hat.latent(naming_rows[static_cast<std::size_t>(k)], j) - (k == j ? 1.0 : 0.0)));
  if (block_err > 1e-10) m.warnings.push_back("naming block deviates from identity by " + std::to_string(block_err));
  return m;
}

struct IdentificationReport {
  Index required = 0;
  Index zeros = 0;
  Index normalization = 0;
  Index available = 0;
  bool pass = false;
};

// Restriction counting: r1^2 + r1 r2 restrictions are needed; exact zeros in the
// latent loadings plus the normalizations (Omega*_fg = 0 gives r1 r2, the factor
// covariance r1 (r1 + 1) / 2) are available. A necessary condition only.
inline IdentificationReport identification_diagnostic(const LoadingsMatrix& loadings, Index r1, Index r2) {
  IdentificationReport rep;
  rep.required = r1 * r1 + r1 * r2;
  rep.zeros = loadings.latent_zero_count();
  rep.normalization = r1 * r2 + r1 * (r1 + 1) / 2;
  rep.available = rep.zeros + rep.normalization;
  rep.pass = rep.available >= rep.required;
  return rep;
}

}  // namespace rfavar
