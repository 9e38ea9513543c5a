#pragma once

#include <cmath>
#include <limits>

#include "rfavar/linalg.hpp"
#include "rfavar/types.hpp"

namespace rfavar {

// sign(v) * max(|v| - t, 0). Returns an exact zero inside the threshold.
inline double soft_threshold(double v, double t) {
  const double a = std::abs(v) - t;
  if (!(a > 0.0)) return 0.0;
  return v > 0.0 ? a : -a;
}

// log|L Sigma_H L' + Sigma_e| + tr(S_x (L Sigma_H L' + Sigma_e)^{-1}) for a general Sigma_e.
inline double neg_loglik(const Matrix& lambda, const Matrix& sigma_h, const Matrix& sigma_e, const Matrix& s_x) {
  Matrix sigma = linalg::symmetrize(lambda * sigma_h * lambda.transpose() + sigma_e);
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "model covariance is not positive definite");
  double logdet = 0.0;
  for (Index i = 0; i < sigma.rows(); ++i) logdet += std::log(llt.matrixLLT()(i, i));
  return 2.0 * logdet + llt.solve(s_x).trace();
}

inline double neg_loglik(const LoadingsMatrix& loadings, const Matrix& sigma_h, const Matrix& sigma_e, const Matrix& s_x) {
  return neg_loglik(loadings.full(), sigma_h, sigma_e, s_x);
}

// Quasi log-likelihood with Sigma_H = I and diagonal idiosyncratic covariance.
inline double neg_loglik_diag(const Matrix& lambda, const Vector& phi, const Matrix& s_x) {
  linalg::FactorCovariance cov(lambda, phi);
  return cov.logdet() + cov.trace_solve(s_x);
}

// L1 penalty: mu1 on the first r1 columns, mu2 on the rest.
inline double l1_penalty(const Matrix& lambda, Index r1, const PenaltyPair& pen) {
  double out = 0.0;
  if (r1 > 0) out += pen.mu1 * lambda.leftCols(r1).cwiseAbs().sum();
  if (lambda.cols() > r1) out += pen.mu2 * lambda.rightCols(lambda.cols() - r1).cwiseAbs().sum();
  return out;
}

// Score of the quasi log-likelihood at the current iterate,
//   D = 2 (Sigma^{-1} - Sigma^{-1} S_x Sigma^{-1}) Lambda,  Sigma = Lambda Lambda' + Phi_e,
// an N x r matrix. Sigma^{-1} is applied through the Woodbury identity.
inline Matrix gradient_d(const Matrix& lambda, const Vector& phi, const Matrix& s_x) {
  linalg::FactorCovariance cov(lambda, phi);
  Matrix y = cov.solve(lambda);
  return 2.0 * (y - cov.solve(s_x * y));
}

inline Matrix gradient_d(const LoadingsMatrix& lambda, const Vector& phi, const Matrix& s_x) {
  return gradient_d(lambda.full(), phi, s_x);
}

// Tangent-plane majorization of the quasi log-likelihood around (lambda_m, phi_m):
//   log|Sigma_m| + tr(2 Lambda_m' Sigma_m^{-1} (Lambda - Lambda_m)) + tr(S_x Sigma(Lambda)^{-1}),
// with Sigma(Lambda) = Lambda Lambda' + Phi_m. Equal to the likelihood at Lambda = Lambda_m.
class Surrogate {
 public:
  Surrogate(const Matrix& lambda_m, const Vector& phi_m, const Matrix& s_x)
      : lambda_m_(lambda_m), phi_m_(phi_m), s_x_(s_x) {
    linalg::FactorCovariance cov(lambda_m, phi_m);
    logdet_m_ = cov.logdet();
    sigma_inv_lambda_m_ = cov.solve(lambda_m);
  }

  double value(const Matrix& lambda) const {
    linalg::FactorCovariance cov(lambda, phi_m_);
    const double linear = 2.0 * (sigma_inv_lambda_m_.array() * (lambda - lambda_m_).array()).sum();
    return logdet_m_ + linear + cov.trace_solve(s_x_);
  }

  Matrix gradient(const Matrix& lambda) const {
    linalg::FactorCovariance cov(lambda, phi_m_);
    Matrix y = cov.solve(lambda);
    return 2.0 * sigma_inv_lambda_m_ - 2.0 * cov.solve(s_x_ * y);
  }

 private:
  const Matrix& lambda_m_;
  const Vector& phi_m_;
  const Matrix& s_x_;
  double logdet_m_ = 0.0;
  Matrix sigma_inv_lambda_m_;
};

// Iterate of the majorize-minimize EM loop.
struct MmState {
  Matrix lambda;  // N x r, latent block first
  Vector phi;     // diagonal of Phi_e
  Index r1 = 0;
};

struct MmStepOptions {
  double c = 0.01;
  int inner_steps = 1;
  int max_halvings = 60;
  double phi_floor = 1e-8;
  // Also require the full penalized objective not to increase; the step size is
  // halved until both conditions hold.
  bool guard_objective = true;
};

struct MmStepResult {
  MmState state;
  double surrogate_before = 0.0;  // surrogate + penalty at the old loadings
  double surrogate_after = 0.0;   // surrogate + penalty at the new loadings
  double objective = 0.0;         // full penalized objective at the new iterate
  double c_used = 0.0;
  bool phi_updated = true;
  bool shortened = false;
};

inline double penalized_objective(const Matrix& lambda, const Vector& phi, const Matrix& s_x, Index r1,
                                  const PenaltyPair& pen) {
  return neg_loglik_diag(lambda, phi, s_x) + l1_penalty(lambda, r1, pen);
}

namespace detail {

inline Matrix prox_step(const Matrix& lambda, const Matrix& grad, double c, Index r1, const PenaltyPair& pen) {
  Matrix out(lambda.rows(), lambda.cols());
  for (Index j = 0; j < lambda.cols(); ++j) {
    const double t = c * (j < r1 ? pen.mu1 : pen.mu2);
    for (Index i = 0; i < lambda.rows(); ++i) out(i, j) = soft_threshold(lambda(i, j) - c * grad(i, j), t);
  }
  return out;
}

// diag[S_x - Lambda_new Lambda_m' (Lambda_m Lambda_m' + Phi_m)^{-1} S_x]
inline Vector em_phi_update(const Matrix& lambda_new, const Matrix& s_x_sigma_inv_lambda_m, const Matrix& s_x, double floor) {
  Vector phi = s_x.diagonal() - (lambda_new.array() * s_x_sigma_inv_lambda_m.array()).rowwise().sum().matrix();
  for (Index i = 0; i < phi.size(); ++i)
    if (!(phi(i) >= floor)) phi(i) = floor;
  return phi;
}

// Backtracking search for Phi given Lambda when the EM update overshoots: damped moves
// toward the EM target, then a phi^2-scaled gradient step. Returns false if nothing helps.
inline bool phi_line_search(const Matrix& lambda, const Vector& phi_m, const Vector& phi_em, const Matrix& s_x,
                            double base, double floor, Vector& phi_out, double& value_out, int halvings) {
  auto eval = [&](const Vector& p) {
    try {
      return neg_loglik_diag(lambda, p, s_x);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  auto search = [&](const Vector& dir) {
    double s = 0.5;
    for (int k = 0; k < halvings; ++k, s *= 0.5) {
      Vector p = (phi_m + s * dir).cwiseMax(floor);
      const double v = eval(p);
      if (v < base) {
        phi_out = std::move(p);
        value_out = v;
        return true;
      }
    }
    return false;
  };
  if (search(phi_em - phi_m)) return true;
  const Matrix inv = linalg::FactorCovariance(lambda, phi_m).inverse();
  const Vector grad = (inv - inv * s_x * inv).diagonal();
  return search(-(phi_m.array().square() * grad.array()).matrix());
}

}  // namespace detail

// One sweep: proximal-gradient loading update with soft-thresholding, then the
// EM update of the idiosyncratic variances.
inline MmStepResult mm_em_step(const MmState& state, const Matrix& s_x, const PenaltyPair& pen,
                               const MmStepOptions& opts = {}) {
  if (!(opts.c > 0.0)) throw Error(ErrorCode::ConfigInvalid, "step size c must be positive");
  const Index r1 = state.r1;
  Surrogate surrogate(state.lambda, state.phi, s_x);
  linalg::FactorCovariance cov_m(state.lambda, state.phi);
  const Matrix sigma_inv_lambda = cov_m.solve(state.lambda);
  const Matrix s_y = s_x * sigma_inv_lambda;
  const Matrix d = 2.0 * (sigma_inv_lambda - cov_m.solve(s_y));

  MmStepResult res;
  res.surrogate_before = cov_m.logdet() + cov_m.trace_solve(s_x) + l1_penalty(state.lambda, r1, pen);
  const double objective_before = res.surrogate_before;
  // rounding-level slack: near the optimum the true decrease drops below the evaluation noise
  const double slack = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(objective_before));

  double c = opts.c;
  for (int attempt = 0;; ++attempt) {
    Matrix lambda = detail::prox_step(state.lambda, d, c, r1, pen);
    for (int k = 1; k < opts.inner_steps; ++k)
      lambda = detail::prox_step(lambda, surrogate.gradient(lambda), c, r1, pen);
    const double after = surrogate.value(lambda) + l1_penalty(lambda, r1, pen);
    bool accept = after <= res.surrogate_before + slack;
    Vector phi;
    double objective = 0.0;
    bool phi_updated = true;
    if (accept) {
      phi = detail::em_phi_update(lambda, s_y, s_x, opts.phi_floor);
      objective = penalized_objective(lambda, phi, s_x, r1, pen);
      if (opts.guard_objective && objective > objective_before + slack) {
        const double pen_value = l1_penalty(lambda, r1, pen);
        const double kept = neg_loglik_diag(lambda, state.phi, s_x);
        Vector better;
        double better_value = 0.0;
        if (detail::phi_line_search(lambda, state.phi, phi, s_x, kept, opts.phi_floor, better, better_value, 30)) {
          phi = std::move(better);
          objective = better_value + pen_value;
        } else {
          phi = state.phi;
          phi_updated = false;
          objective = kept + pen_value;
        }
        accept = objective <= objective_before + slack;
      }
    }
    if (accept) {
      res.state = MmState{std::move(lambda), std::move(phi), r1};
      res.surrogate_after = after;
      res.objective = objective;
      res.c_used = c;
      res.phi_updated = phi_updated;
      res.shortened = attempt > 0;
      return res;
    }
    if (attempt >= opts.max_halvings) break;
    c *= 0.5;
  }
  // No admissible step: the iterate is (numerically) stationary for this step size.
  res.state = state;
  res.surrogate_after = res.surrogate_before;
  res.objective = objective_before;
  res.c_used = 0.0;
  res.phi_updated = false;
  res.shortened = true;
  return res;
}

struct MmLoopOptions {
  MmStepOptions step;
  double tol = 1e-6;
  int max_iter = 2000;
};

struct MmLoopResult {
  MmState state;
  std::vector<double> objective_trace;
  std::vector<double> surrogate_before;
  std::vector<double> surrogate_after;
  int iterations = 0;
  bool converged = false;
};

// Iterates mm_em_step until the spectral-norm changes of the latent loadings and of
// Phi_e both drop below tol.
inline MmLoopResult run_mm_em(MmState state, const Matrix& s_x, const PenaltyPair& pen, const MmLoopOptions& opts) {
  MmLoopResult out;
  out.objective_trace.push_back(penalized_objective(state.lambda, state.phi, s_x, state.r1, pen));
  for (int it = 0; it < opts.max_iter; ++it) {
    MmStepResult step = mm_em_step(state, s_x, pen, opts.step);
    const double d_lat = state.r1 > 0 ? linalg::spectral_norm(step.state.lambda.leftCols(state.r1) - state.lambda.leftCols(state.r1)) : 0.0;
    const double d_phi = linalg::spectral_norm_diag(step.state.phi - state.phi);
    out.surrogate_before.push_back(step.surrogate_before);
    out.surrogate_after.push_back(step.surrogate_after);
    out.objective_trace.push_back(step.objective);
    const bool stalled = step.c_used == 0.0;
    // A shortened step is judged by the move the nominal step size would have made.
    const double d_lat_nominal = stalled ? 0.0 : d_lat * (opts.step.c / step.c_used);
    state = std::move(step.state);
    out.iterations = it + 1;
    if (stalled || (d_lat_nominal < opts.tol && d_phi < opts.tol)) {
      out.converged = true;
      break;
    }
  }
  out.state = std::move(state);
  return out;
}

}  // namespace rfavar
