#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rfavar/identification.hpp"
#include "rfavar/panel.hpp"
#include "rfavar/parallel.hpp"
#include "rfavar/random.hpp"
#include "rfavar/var.hpp"

namespace rfavar {

struct IrfBands {
  Matrix factor_lower, factor_upper;          // (h_max + 1) x r
  Matrix observable_lower, observable_upper;  // (h_max + 1) x N
};

struct IrfResult {
  int h_max = 0;
  Matrix factor_irf;      // (h_max + 1) x r, responses of [F G]
  Matrix observable_irf;  // (h_max + 1) x N
  std::vector<bool> accumulated;
  Index shock_index = 0;
  double shock_size = 1.0;
  std::optional<IrfBands> bands;
  double ci_level = 0.68;
  int replications = 0;
  int dropped = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline void check_shock(Index shock_index, Index r) {
  if (shock_index < 0 || shock_index >= r)
    throw Error(ErrorCode::BadShockIndex, "shock index " + std::to_string(shock_index) + " outside [0, " + std::to_string(r) + ")");
}

// Factor responses psi_h a_inv e (reduced-form coordinates) and observable responses
// lam_hat psi_hat_h e, both times the shock size.
inline void irf_core(const std::vector<Matrix>& phi_tilde, const Matrix& a, const Matrix& a_inv, const Matrix& lam_hat,
                     int h_max, Index shock, double size, Matrix* factor, Matrix* observable) {
  const Index r = a.rows();
  const auto psi = ma_coefficients(phi_tilde, h_max).psi;
  const Vector impact = a_inv.col(shock);
  if (factor) factor->resize(h_max + 1, r);
  if (observable) observable->resize(h_max + 1, lam_hat.rows());
  for (int h = 0; h <= h_max; ++h) {
    const Vector resp = h == 0 ? impact : Vector(psi[static_cast<std::size_t>(h)] * impact);
    if (factor) factor->row(h) = (resp * size).transpose();
    if (observable) {
      // psi_hat_h e = a resp; at h = 0 this is exactly e
      Vector rot = Vector::Zero(r);
      if (h == 0) rot(shock) = 1.0;
      else rot = a * resp;
      observable->row(h) = ((lam_hat * rot) * size).transpose();
    }
  }
}

}  // namespace detail

inline Matrix irf_factors(const IdentifiedModel& m, int h_max, Index shock_index, double shock_size = 1.0) {
  if (h_max < 0) throw Error(ErrorCode::ConfigInvalid, "h_max must be >= 0");
  detail::check_shock(shock_index, m.r());
  Matrix out;
  detail::irf_core(m.var_tilde.phi, m.rotation.a, m.rotation.a_inv, m.loadings_hat.full(), h_max, shock_index, shock_size, &out, nullptr);
  return out;
}

inline Matrix irf_observables(const IdentifiedModel& m, int h_max, Index shock_index, double shock_size = 1.0) {
  if (h_max < 0) throw Error(ErrorCode::ConfigInvalid, "h_max must be >= 0");
  detail::check_shock(shock_index, m.r());
  Matrix out;
  detail::irf_core(m.var_tilde.phi, m.rotation.a, m.rotation.a_inv, m.loadings_hat.full(), h_max, shock_index, shock_size, nullptr, &out);
  return out;
}

inline IrfResult impulse_responses(const IdentifiedModel& m, int h_max, Index shock_index, double shock_size = 1.0) {
  IrfResult out;
  out.h_max = h_max;
  out.shock_index = shock_index;
  out.shock_size = shock_size;
  out.factor_irf = irf_factors(m, h_max, shock_index, shock_size);
  out.observable_irf = irf_observables(m, h_max, shock_index, shock_size);
  out.accumulated.assign(static_cast<std::size_t>(m.loadings_hat.n_series()), false);
  if (m.var_tilde.companion_radius >= 1.0)
    out.warnings.push_back("VAR is not stable (companion radius " + std::to_string(m.var_tilde.companion_radius) + ")");
  return out;
}

namespace detail {

inline void prefix_sum(Matrix& m, Index col) {
  for (Index h = 1; h < m.rows(); ++h) m(h, col) += m(h - 1, col);
}

}  // namespace detail

// Running sums of the observable responses: once for codes 2 and 5, twice for 3 and 6.
inline IrfResult accumulate_by_code(IrfResult irf, const std::vector<int>& codes) {
  const Index n = irf.observable_irf.cols();
  if (static_cast<Index>(codes.size()) != n)
    throw Error(ErrorCode::CodeLengthMismatch, "expected " + std::to_string(n) + " transform codes, got " + std::to_string(codes.size()));
  irf.accumulated.assign(static_cast<std::size_t>(n), false);
  for (Index i = 0; i < n; ++i) {
    const int times = differencing_order(codes[static_cast<std::size_t>(i)]);
    for (int k = 0; k < times; ++k) {
      detail::prefix_sum(irf.observable_irf, i);
      if (irf.bands) {
        detail::prefix_sum(irf.bands->observable_lower, i);
        detail::prefix_sum(irf.bands->observable_upper, i);
      }
    }
    irf.accumulated[static_cast<std::size_t>(i)] = times > 0;
  }
  return irf;
}

// Scales the system so the shock equals shock_magnitude_units in the shocked series'
// original units; optionally expresses each observable in its own original units.
inline IrfResult rescale_to_original_units(IrfResult irf, double target_series_std, double shock_magnitude_units,
                                           const Vector* series_stds = nullptr) {
  if (!(target_series_std > 0.0) || !std::isfinite(target_series_std) || !std::isfinite(shock_magnitude_units))
    throw Error(ErrorCode::BadScale, "target series std must be positive and finite");
  const double s = shock_magnitude_units / target_series_std;
  irf.factor_irf *= s;
  irf.observable_irf *= s;
  irf.shock_size *= s;
  if (irf.bands) {
    irf.bands->factor_lower *= s;
    irf.bands->factor_upper *= s;
    irf.bands->observable_lower *= s;
    irf.bands->observable_upper *= s;
  }
  if (series_stds) {
    if (series_stds->size() != irf.observable_irf.cols()) throw Error(ErrorCode::DimensionMismatch, "one std per series required");
    if (!((series_stds->array() > 0.0).all())) throw Error(ErrorCode::BadScale, "series stds must be positive");
    irf.observable_irf = irf.observable_irf * series_stds->asDiagonal();
    if (irf.bands) {
      irf.bands->observable_lower = irf.bands->observable_lower * series_stds->asDiagonal();
      irf.bands->observable_upper = irf.bands->observable_upper * series_stds->asDiagonal();
    }
  }
  return irf;
}

// Type-7 sample quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct BootstrapOptions {
  int replications = 200;
  int h_max = 48;
  Index shock_index = 0;
  double shock_size = 1.0;
  double ci_level = 0.68;
  std::uint64_t seed = 1;
  int threads = 0;
  double max_drop_share = 0.2;
};

// One bootstrap sample of the composite factors: resampled centred residuals fed
// through the fitted recursion from the first p observed values.
inline Matrix bootstrap_sample(const Matrix& h, const VarModel& var, Rng& rng) {
  const Index t = h.rows(), r = h.cols();
  const int p = var.p;
  const Index n_res = var.residuals.rows();
  const Vector mean = var.residuals.colwise().mean().transpose();
  Matrix hs(t, r);
  hs.topRows(p) = h.topRows(p);
  for (Index s = p; s < t; ++s) {
    const Index pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n_res)));
    Vector v = var.intercept + var.residuals.row(pick).transpose() - mean;
    for (int j = 1; j <= p; ++j) v.noalias() += var.phi[static_cast<std::size_t>(j - 1)] * hs.row(s - j).transpose();
    hs.row(s) = v.transpose();
  }
  return hs;
}

// Residual bootstrap of the impulse responses with the factors treated as known.
// The latent loadings stay fixed; for IRb so does the naming block.
inline IrfResult bootstrap_irf(const IdentifiedModel& m, const BootstrapOptions& opts) {
  if (opts.replications < 1) throw Error(ErrorCode::ConfigInvalid, "bootstrap replications must be >= 1");
  if (!(opts.ci_level > 0.0 && opts.ci_level < 1.0)) throw Error(ErrorCode::ConfigInvalid, "ci_level must lie in (0, 1)");
  IrfResult out = impulse_responses(m, opts.h_max, opts.shock_index, opts.shock_size);
  out.ci_level = opts.ci_level;

  const Index r1 = m.r1(), r2 = m.r2();
  const Matrix lam_tilde = m.loadings_tilde.full();
  Matrix lambda1;
  if (m.scheme == Scheme::IRb) {
    lambda1.resize(r1, r1);
    for (Index k = 0; k < r1; ++k) lambda1.row(k) = m.loadings_tilde.latent.row(m.naming_rows[static_cast<std::size_t>(k)]);
  }

  const auto b = static_cast<std::size_t>(opts.replications);
  std::vector<Matrix> fac(b), obs(b);
  std::vector<char> ok(b, 0);
  parallel_for(b, resolve_threads(opts.threads), [&](std::size_t i) {
    Rng rng(stream_seed(opts.seed, i));
    try {
      const Matrix hs = bootstrap_sample(m.factors_tilde, m.var_tilde, rng);
      const VarModel v = fit_var(hs, m.var_tilde.p, m.var_tilde.has_intercept);
      const RotationPair rot = m.scheme == Scheme::IRa ? rotation_ira(v.omega, r1, r2) : rotation_irb(v.omega, lambda1, r1, r2);
      detail::irf_core(v.phi, rot.a, rot.a_inv, lam_tilde * rot.a_inv, opts.h_max, opts.shock_index, opts.shock_size, &fac[i], &obs[i]);
      ok[i] = (fac[i].allFinite() && obs[i].allFinite()) ? 1 : 0;
    } catch (const Error&) {
      ok[i] = 0;
    }
  });

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < b; ++i)
    if (ok[i]) kept.push_back(i);
  out.replications = opts.replications;
  out.dropped = static_cast<int>(b - kept.size());
  if (kept.empty() || static_cast<double>(out.dropped) > opts.max_drop_share * static_cast<double>(b))
    throw Error(ErrorCode::DegenerateBands, std::to_string(out.dropped) + " of " + std::to_string(b) + " bootstrap replications failed");

  const double lo_q = (1.0 - opts.ci_level) / 2.0, hi_q = (1.0 + opts.ci_level) / 2.0;
  auto bands_of = [&](const std::vector<Matrix>& draws, const Matrix& shape, Matrix& lower, Matrix& upper) {
    lower.resize(shape.rows(), shape.cols());
    upper.resize(shape.rows(), shape.cols());
    std::vector<double> v(kept.size());
    for (Index h = 0; h < shape.rows(); ++h) {
      for (Index j = 0; j < shape.cols(); ++j) {
        for (std::size_t k = 0; k < kept.size(); ++k) v[k] = draws[kept[k]](h, j);
        std::sort(v.begin(), v.end());
        lower(h, j) = quantile_sorted(v, lo_q);
        upper(h, j) = quantile_sorted(v, hi_q);
      }
    }
  };
  IrfBands bands;
  bands_of(fac, out.factor_irf, bands.factor_lower, bands.factor_upper);
  bands_of(obs, out.observable_irf, bands.observable_lower, bands.observable_upper);
  const bool outside = (out.factor_irf.array() < bands.factor_lower.array() - 1e-12).any() ||
                       (out.factor_irf.array() > bands.factor_upper.array() + 1e-12).any() ||
                       (out.observable_irf.array() < bands.observable_lower.array() - 1e-12).any() ||
                       (out.observable_irf.array() > bands.observable_upper.array() + 1e-12).any();
  if (outside) out.warnings.push_back("point estimate lies outside the percentile band at some horizon");
  if (out.dropped > 0) out.warnings.push_back(std::to_string(out.dropped) + " bootstrap replications dropped");
  out.bands = std::move(bands);
  return out;
}

}  // namespace rfavar
