#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rfavar/dgp.hpp"
#include "rfavar/estimator.hpp"
#include "rfavar/identification.hpp"
#include "rfavar/parallel.hpp"
#include "rfavar/random.hpp"
#include "rfavar/var.hpp"

namespace rfavar {

// Estimated column perm[k] (times signs[k]) is matched to true column k.
struct Alignment {
  std::vector<Index> perm;
  Vector signs;
  double score = 0.0;  // sum of absolute correlations
};

namespace detail {

inline Matrix abs_correlations(const Matrix& est, const Matrix& truth, Matrix* signed_corr) {
  auto centred = [](const Matrix& m) {
    Matrix c = m.rowwise() - m.colwise().mean();
    for (Index j = 0; j < c.cols(); ++j) {
      const double nrm = c.col(j).norm();
      if (nrm > 0.0) c.col(j) /= nrm;
    }
    return c;
  };
  const Matrix corr = centred(est).transpose() * centred(truth);  // est x truth
  if (signed_corr) *signed_corr = corr;
  return corr.cwiseAbs();
}

}  // namespace detail

// Signed permutation maximising the summed absolute correlation. Exhaustive for up
// to 8 columns, greedy beyond.
inline Alignment align_factors(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw Error(ErrorCode::DimensionMismatch, "align_factors: shapes differ");
  const Index r = est.cols();
  Matrix corr;
  const Matrix a = detail::abs_correlations(est, truth, &corr);
  Alignment out;
  std::vector<Index> perm(static_cast<std::size_t>(r));
  std::iota(perm.begin(), perm.end(), Index{0});
  if (r <= 8) {
    double best = -1.0;
    do {
      double s = 0.0;
      for (Index k = 0; k < r; ++k) s += a(perm[static_cast<std::size_t>(k)], k);
      if (s > best + 1e-14) {
        best = s;
        out.perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    out.score = best;
  } else {
    std::vector<bool> used(static_cast<std::size_t>(r), false);
    out.perm.assign(static_cast<std::size_t>(r), 0);
    for (Index k = 0; k < r; ++k) {
      Index bi = -1;
      for (Index i = 0; i < r; ++i)
        if (!used[static_cast<std::size_t>(i)] && (bi < 0 || a(i, k) > a(bi, k))) bi = i;
      used[static_cast<std::size_t>(bi)] = true;
      out.perm[static_cast<std::size_t>(k)] = bi;
      out.score += a(bi, k);
    }
  }
  out.signs.resize(r);
  for (Index k = 0; k < r; ++k) out.signs(k) = corr(out.perm[static_cast<std::size_t>(k)], k) < 0.0 ? -1.0 : 1.0;
  return out;
}

inline Matrix apply_alignment(const Matrix& m, const Alignment& al) {
  Matrix out(m.rows(), static_cast<Index>(al.perm.size()));
  for (Index k = 0; k < out.cols(); ++k) out.col(k) = al.signs(k) * m.col(al.perm[static_cast<std::size_t>(k)]);
  return out;
}

// F1 score of the nonzero pattern (nonzero is the positive class).
inline double support_f1(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw Error(ErrorCode::DimensionMismatch, "support_f1: shapes differ");
  Index tp = 0, fp = 0, fn = 0;
  for (Index j = 0; j < est.cols(); ++j) {
    for (Index i = 0; i < est.rows(); ++i) {
      const bool e = est(i, j) != 0.0, t = truth(i, j) != 0.0;
      if (e && t) ++tp;
      else if (e) ++fp;
      else if (t) ++fn;
    }
  }
  if (2 * tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct McConfig {
  std::vector<std::pair<Index, Index>> sizes{{50, 100}, {100, 200}, {200, 400}};
  int replications = 20;
  DgpConfig dgp;  // n_series, n_periods and seed are set per replication
  int p = 1;
  std::vector<double> grid1 = arithmetic_grid(0.05, 13);
  std::vector<double> grid2{0.0, 0.1, 0.2};
  SelectOptions select;
  std::uint64_t seed = 1;
  int threads = 0;
  double f1_threshold = 0.8;

  McConfig() {
    dgp.r1 = 3;
    dgp.r2 = 1;
    dgp.beta = 1.0;
    dgp.zero_fraction = 0.6;
    dgp.idio_band = 1;
    select.warm_start = true;
    select.adaptive_max = true;
    select.fit.c = 0.2;
    select.fit.init.c = 0.2;
  }
};

struct McRecord {
  Index n = 0, t = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  double mu1 = 0.0, mu2 = 0.0;
  double err_lambda = 0.0;  // (1/N) ||Lambda_hat - Lambda||_F^2, against the IRa-rotated truth
  double err_phi = 0.0;     // (1/N) ||Phi_hat - Phi||_F^2
  double err_factor = 0.0;  // mean squared error of the aligned latent factors
  double f1 = 0.0;
  int iterations = 0;
  bool converged = false;
  bool failed = false;
  std::string message;
};

struct McSizeSummary {
  Index n = 0, t = 0;
  int completed = 0;
  double median_err_lambda = 0.0, median_err_phi = 0.0, median_err_factor = 0.0, median_f1 = 0.0;
};

struct McReport {
  std::vector<McRecord> records;
  std::vector<McSizeSummary> sizes;
  bool insufficient = false;
  bool lambda_decreasing = false;
  bool phi_decreasing = false;
  bool factor_decreasing = false;
  bool f1_ok = false;
  double f1_threshold = 0.8;

  bool passed() const { return !insufficient && lambda_decreasing && phi_decreasing && factor_decreasing && f1_ok; }
};

// Estimates one simulated panel and scores it against the truth.
inline McRecord score_replication(const DgpConfig& dgp, const McConfig& cfg) {
  McRecord rec;
  rec.n = dgp.n_series;
  rec.t = dgp.n_periods;
  rec.seed = dgp.seed;
  const DgpTruth truth = simulate(dgp);
  SelectOptions so = cfg.select;
  so.threads = 1;
  auto sel = select_penalties(truth.x, truth.g, dgp.r1, cfg.grid1, cfg.grid2, so);
  const RfavarFit& fit = *sel.best_fit;
  rec.mu1 = sel.selected.mu1;
  rec.mu2 = sel.selected.mu2;
  rec.iterations = fit.iterations;
  rec.converged = fit.converged;

  Matrix h(truth.x.cols(), dgp.r());
  h << fit.factors_f, truth.g;
  const VarModel var = fit_var(h, cfg.p, true);
  const IdentifiedModel model = apply_ira(fit, truth.g, var);

  // Truth under the same identification: F* = F - G K', Lambda*^g = Lambda^g + Lambda^f K.
  const Matrix k = detail::k_matrix(truth.omega, dgp.r1, dgp.r2);
  const Matrix f_star = truth.f - truth.g * k.transpose();
  const Matrix lg_star = truth.loadings.observed + truth.loadings.latent * k;

  const Alignment al = align_factors(model.factors_hat, f_star);
  const Matrix lf_hat = apply_alignment(model.loadings_hat.latent, al);
  const Matrix f_hat = apply_alignment(model.factors_hat, al);
  const double nd = static_cast<double>(dgp.n_series);
  rec.err_lambda = ((lf_hat - truth.loadings.latent).squaredNorm() + (model.loadings_hat.observed - lg_star).squaredNorm()) / nd;
  rec.err_phi = (fit.phi_e - truth.sigma_e.diagonal()).squaredNorm() / nd;
  rec.err_factor = (f_hat - f_star).squaredNorm() / static_cast<double>(f_star.size());
  rec.f1 = support_f1(lf_hat, truth.loadings.latent);
  return rec;
}

inline bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return v.size() >= 2;
}

// Runs the (N, T) ladder. Replication seeds depend only on (seed, size, rep), so the
// records do not depend on the thread count.
inline McReport run_montecarlo(const McConfig& cfg) {
  if (cfg.replications < 1) throw Error(ErrorCode::ConfigInvalid, "replications must be >= 1");
  if (cfg.sizes.empty()) throw Error(ErrorCode::ConfigInvalid, "at least one (N, T) size is required");
  const std::size_t per = static_cast<std::size_t>(cfg.replications);
  const std::size_t jobs = cfg.sizes.size() * per;
  McReport rep;
  rep.f1_threshold = cfg.f1_threshold;
  rep.records.resize(jobs);
  // Largest panels first so the pool stays busy at the end.
  parallel_for(jobs, resolve_threads(cfg.threads), [&](std::size_t jj) {
    const std::size_t job = jobs - 1 - jj;
    const std::size_t s = job / per, r = job % per;
    DgpConfig d = cfg.dgp;
    d.n_series = cfg.sizes[s].first;
    d.n_periods = cfg.sizes[s].second;
    d.seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(s) * 1000003ULL + r);
    McRecord rec;
    try {
      rec = score_replication(d, cfg);
    } catch (const Error& e) {
      rec.n = d.n_series;
      rec.t = d.n_periods;
      rec.seed = d.seed;
      rec.failed = true;
      rec.message = e.what();
    }
    rec.rep = static_cast<int>(r);
    rep.records[job] = std::move(rec);
  });

  std::vector<double> ml, mp, mf;
  for (std::size_t s = 0; s < cfg.sizes.size(); ++s) {
    McSizeSummary sum;
    sum.n = cfg.sizes[s].first;
    sum.t = cfg.sizes[s].second;
    std::vector<double> el, ep, ef, f1;
    for (std::size_t r = 0; r < per; ++r) {
      const McRecord& rec = rep.records[s * per + r];
      if (rec.failed) continue;
      el.push_back(rec.err_lambda);
      ep.push_back(rec.err_phi);
      ef.push_back(rec.err_factor);
      f1.push_back(rec.f1);
    }
    sum.completed = static_cast<int>(el.size());
    sum.median_err_lambda = median(el);
    sum.median_err_phi = median(ep);
    sum.median_err_factor = median(ef);
    sum.median_f1 = median(f1);
    ml.push_back(sum.median_err_lambda);
    mp.push_back(sum.median_err_phi);
    mf.push_back(sum.median_err_factor);
    rep.sizes.push_back(sum);
  }
  rep.insufficient = cfg.sizes.size() < 2;
  rep.lambda_decreasing = strictly_decreasing(ml);
  rep.phi_decreasing = strictly_decreasing(mp);
  rep.factor_decreasing = strictly_decreasing(mf);
  rep.f1_ok = !rep.sizes.empty() && rep.sizes.back().median_f1 >= cfg.f1_threshold;
  return rep;
}

}  // namespace rfavar
