#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rfavar/factor_init.hpp"
#include "rfavar/objective.hpp"
#include "rfavar/parallel.hpp"
#include "rfavar/poet.hpp"
#include "rfavar/types.hpp"

namespace rfavar {

struct FitOptions {
  double c = 0.01;
  double tol = 1e-6;
  int max_iter = 2000;
  int inner_steps = 1;
  double phi_floor = 1e-8;
  InitOptions init;  // unpenalized starting values
};

struct RfavarFit {
  LoadingsMatrix loadings;
  Vector phi_e;
  Matrix factors_f;  // T x r1, GLS on X
  std::vector<double> objective_trace;
  std::vector<double> surrogate_before;
  std::vector<double> surrogate_after;
  PenaltyPair penalties;
  int iterations = 0;
  bool converged = false;
  int init_iterations = 0;

  Index r1() const { return loadings.r1(); }
};

// Starting point of the penalized iterations: [Lambda^f Lambda^g] and Phi_e.
struct FitStart {
  Matrix lambda;  // N x (r1 + r2)
  Vector phi;
  Index r1 = 0;
  int init_iterations = 0;
};

inline FitStart start_from_init(const InitState& init) {
  FitStart s;
  s.r1 = init.lambda_f.cols();
  s.lambda.resize(init.lambda_f.rows(), init.lambda_f.cols() + init.lambda_g.cols());
  s.lambda << init.lambda_f, init.lambda_g;
  s.phi = init.phi_e;
  s.init_iterations = init.iterations;
  return s;
}

inline FitStart start_from_fit(const RfavarFit& fit) {
  return FitStart{fit.loadings.full(), fit.phi_e, fit.r1(), 0};
}

namespace detail {

inline void check_fit_inputs(const Matrix& x, const Matrix& g, const PenaltyPair& pen, const FitOptions& opts) {
  if (!pen.valid()) throw Error(ErrorCode::ConfigInvalid, "penalties must be finite and nonnegative");
  if (!(opts.c > 0.0)) throw Error(ErrorCode::ConfigInvalid, "step size c must be positive");
  if (!(opts.tol > 0.0) || opts.max_iter < 1) throw Error(ErrorCode::ConfigInvalid, "tol must be positive and max_iter >= 1");
  if (g.cols() > 0 && g.rows() != x.cols()) throw Error(ErrorCode::DimensionMismatch, "G must have T rows");
}

}  // namespace detail

// Penalized iterations from a given start, then GLS factors on X.
inline RfavarFit fit_from(const Matrix& x, const Matrix& g, const FitStart& start, const PenaltyPair& pen,
                          const FitOptions& opts = {}, const Matrix* s_x_cached = nullptr) {
  detail::check_fit_inputs(x, g, pen, opts);
  if (start.lambda.rows() != x.rows() || start.phi.size() != x.rows() || start.lambda.cols() != start.r1 + g.cols())
    throw Error(ErrorCode::DimensionMismatch, "starting loadings do not match the panel");
  Matrix s_local;
  if (!s_x_cached) s_local = sample_covariance(x);
  const Matrix& s_x = s_x_cached ? *s_x_cached : s_local;

  MmLoopOptions loop;
  loop.step.c = opts.c;
  loop.step.inner_steps = opts.inner_steps;
  loop.step.phi_floor = opts.phi_floor;
  loop.tol = opts.tol;
  loop.max_iter = opts.max_iter;
  auto res = run_mm_em(MmState{start.lambda, start.phi, start.r1}, s_x, pen, loop);

  RfavarFit out;
  out.loadings = LoadingsMatrix::from_full(res.state.lambda, start.r1);
  out.phi_e = res.state.phi;
  out.objective_trace = std::move(res.objective_trace);
  out.surrogate_before = std::move(res.surrogate_before);
  out.surrogate_after = std::move(res.surrogate_after);
  out.penalties = pen;
  out.iterations = res.iterations;
  out.converged = res.converged;
  out.init_iterations = start.init_iterations;
  if (out.loadings.latent.isZero(0.0)) {
    out.factors_f = Matrix::Zero(x.cols(), start.r1);
  } else {
    out.factors_f = gls_factors(out.loadings.latent, out.phi_e, x);
  }
  return out;
}

// Unpenalized initialization on the projected panel, then the penalized fit.
inline RfavarFit fit(const Matrix& x, const Matrix& g, Index r1, const PenaltyPair& pen, const FitOptions& opts = {}) {
  detail::check_fit_inputs(x, g, pen, opts);
  return fit_from(x, g, start_from_init(init_unpenalized(x, g, r1, opts.init)), pen, opts);
}

// sqrt(log(2N)/N + log N/(N T)), the per-nonzero weight of the information criterion.
inline double ic_multiplier(Index n, Index t) {
  const long double nd = static_cast<long double>(n), td = static_cast<long double>(t);
  return static_cast<double>(std::sqrt(std::log(2.0L * nd) / nd + std::log(nd) / (nd * td)));
}

struct IcValue {
  double ic = 0.0;
  double loglik = 0.0;
  Index kappa = 0;
  bool pd_repaired = false;
};

// IC = L(Lambda, S_H, Sigma_e^tau) + kappa * multiplier, with H = [F G].
inline IcValue information_criterion(const Matrix& x, const Matrix& g, const RfavarFit& fit, const Matrix* s_x_cached = nullptr) {
  const Index n = x.rows(), t = x.cols();
  Matrix h(t, fit.r1() + g.cols());
  h << fit.factors_f, g;
  const Matrix lambda = fit.loadings.full();
  const Matrix s_h = h.transpose() * h / static_cast<double>(t);
  const auto poet = poet_threshold(residual_cov(x, lambda, h), n, t, true);
  Matrix s_local;
  if (!s_x_cached) s_local = sample_covariance(x);
  const Matrix& s_x = s_x_cached ? *s_x_cached : s_local;
  IcValue out;
  out.loglik = neg_loglik(lambda, s_h, poet.matrix, s_x);
  out.kappa = fit.loadings.nonzero_count();
  out.ic = out.loglik + static_cast<double>(out.kappa) * ic_multiplier(n, t);
  out.pd_repaired = poet.pd_repaired;
  return out;
}

struct IcCell {
  double mu1 = 0.0;
  double mu2 = 0.0;
  double ic = std::numeric_limits<double>::quiet_NaN();
  double loglik = std::numeric_limits<double>::quiet_NaN();
  Index kappa = 0;
  int iterations = 0;
  bool converged = false;
  bool flagged = false;   // fit or IC evaluation failed; excluded from the argmin
  bool all_zero = false;  // the latent or observed block vanished entirely
  std::string message;
};

struct PenaltySelection {
  PenaltyPair selected;
  std::vector<IcCell> surface;  // row-major over (grid1, grid2)
  std::vector<double> grid1;
  std::vector<double> grid2;
  std::optional<RfavarFit> best_fit;
};

struct SelectOptions {
  FitOptions fit;
  // Start each mu1 cell from the solution at the next smaller mu1 (same mu2).
  bool warm_start = false;
  // Drop grid values at and beyond the first one that zeroes a whole block.
  bool adaptive_max = false;
  int threads = 0;
};

// mu_max-capped arithmetic grid 0, step, 2 step, ..., count values.
inline std::vector<double> arithmetic_grid(double step, int count) {
  std::vector<double> out;
  // rounded so 3 * 0.05 prints as 0.15
  for (int i = 0; i < count; ++i) out.push_back(std::round(step * static_cast<double>(i) * 1e12) / 1e12);
  return out;
}

namespace detail {

inline void check_grid(const std::vector<double>& grid, const char* name) {
  if (grid.empty()) throw Error(ErrorCode::EmptyGrid, std::string(name) + " is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0) || !std::isfinite(grid[i])) throw Error(ErrorCode::ConfigInvalid, std::string(name) + ": values must be nonnegative");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw Error(ErrorCode::ConfigInvalid, std::string(name) + ": values must be sorted ascending");
  }
}

// Lower IC wins; exact ties go to the larger mu1, then the larger mu2.
inline bool better_cell(const IcCell& a, const IcCell& b) {
  if (a.ic != b.ic) return a.ic < b.ic;
  if (a.mu1 != b.mu1) return a.mu1 > b.mu1;
  return a.mu2 > b.mu2;
}

}  // namespace detail

// Grid search of (mu1, mu2) by the information criterion.
inline PenaltySelection select_penalties(const Matrix& x, const Matrix& g, Index r1, const std::vector<double>& grid1,
                                         const std::vector<double>& grid2, const SelectOptions& opts = {}) {
  detail::check_grid(grid1, "grid1");
  detail::check_grid(grid2, "grid2");
  const Matrix s_x = sample_covariance(x);
  const FitStart start = start_from_init(init_unpenalized(x, g, r1, opts.fit.init));
  const std::size_t n1 = grid1.size(), n2 = grid2.size();

  std::vector<IcCell> cells(n1 * n2);
  std::vector<std::optional<RfavarFit>> fits(n1 * n2);
  // One task per mu2 column; mu1 runs sequentially inside it so warm starts are
  // deterministic regardless of the thread count.
  parallel_for(n2, resolve_threads(opts.threads), [&](std::size_t j) {
    FitStart cur = start;
    for (std::size_t i = 0; i < n1; ++i) {
      IcCell& cell = cells[i * n2 + j];
      cell.mu1 = grid1[i];
      cell.mu2 = grid2[j];
      try {
        RfavarFit f = fit_from(x, g, opts.warm_start && i > 0 ? cur : start, PenaltyPair{grid1[i], grid2[j]}, opts.fit, &s_x);
        cell.iterations = f.iterations;
        cell.converged = f.converged;
        cell.all_zero = (r1 > 0 && f.loadings.latent.isZero(0.0)) || (g.cols() > 0 && f.loadings.observed.isZero(0.0));
        auto ic = information_criterion(x, g, f, &s_x);
        cell.ic = ic.ic;
        cell.loglik = ic.loglik;
        cell.kappa = ic.kappa;
        if (!std::isfinite(cell.ic)) {
          cell.flagged = true;
          cell.message = "non-finite criterion";
        }
        if (opts.warm_start) cur = start_from_fit(f);
        fits[i * n2 + j] = std::move(f);
      } catch (const Error& e) {
        cell.flagged = true;
        cell.message = e.what();
      }
    }
  });

  // Adaptive cap: the first mu1 (mu2) value that empties its block, and all larger
  // values, are excluded.
  std::size_t cap1 = n1, cap2 = n2;
  if (opts.adaptive_max) {
    for (std::size_t i = 0; i < n1 && cap1 == n1; ++i)
      for (std::size_t j = 0; j < n2; ++j)
        if (fits[i * n2 + j] && r1 > 0 && fits[i * n2 + j]->loadings.latent.isZero(0.0)) {
          cap1 = std::max<std::size_t>(i, 1);
          break;
        }
    for (std::size_t j = 0; j < n2 && cap2 == n2; ++j)
      for (std::size_t i = 0; i < n1; ++i)
        if (fits[i * n2 + j] && g.cols() > 0 && fits[i * n2 + j]->loadings.observed.isZero(0.0)) {
          cap2 = std::max<std::size_t>(j, 1);
          break;
        }
  }

  PenaltySelection out;
  out.grid1 = grid1;
  out.grid2 = grid2;
  std::size_t best = cells.size();
  for (std::size_t i = 0; i < cap1; ++i) {
    for (std::size_t j = 0; j < cap2; ++j) {
      const std::size_t k = i * n2 + j;
      if (cells[k].flagged) continue;
      if (best == cells.size() || detail::better_cell(cells[k], cells[best])) best = k;
    }
  }
  if (best == cells.size()) throw Error(ErrorCode::EmptyGrid, "every grid cell failed");
  out.selected = PenaltyPair{cells[best].mu1, cells[best].mu2};
  out.best_fit = std::move(fits[best]);
  out.surface = std::move(cells);
  return out;
}

// Default grids: mu1 in steps of 0.05 and mu2 in steps of 0.1, capped at the first value
// whose block vanishes (that value and beyond are excluded) or at the point budget.
inline PenaltySelection select_penalties_default(const Matrix& x, const Matrix& g, Index r1, SelectOptions opts = {},
                                                 int points1 = 13, int points2 = 4) {
  if (points1 < 1 || points2 < 1) throw Error(ErrorCode::ConfigInvalid, "grid point budgets must be >= 1");
  opts.adaptive_max = true;
  return select_penalties(x, g, r1, arithmetic_grid(0.05, points1), g.cols() > 0 ? arithmetic_grid(0.1, points2) : std::vector<double>{0.0}, opts);
}

}  // namespace rfavar
