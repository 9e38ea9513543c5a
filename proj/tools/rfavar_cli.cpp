// Batch front end: simulate, estimate, irf, montecarlo.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rfavar/rfavar.hpp"

using nlohmann::json;
using namespace rfavar;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 2, kEstimation = 3, kAnalysis = 4, kAcceptance = 5 };

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::BadShockIndex:
    case ErrorCode::CodeLengthMismatch:
    case ErrorCode::BadScale:
    case ErrorCode::DegenerateBands:
      return kAnalysis;
    case ErrorCode::RankDeficient:
    case ErrorCode::SingularGram:
    case ErrorCode::NoConvergence:
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::SingularWeightedGram:
    case ErrorCode::EmptyGrid:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::InsufficientObservations:
    case ErrorCode::SingularRegressors:
    case ErrorCode::SingularOmegaGg:
    case ErrorCode::SingularNamingBlock:
    case ErrorCode::UnstableVar:
      return kEstimation;
    default:
      return kConfig;
  }
}

// Flags shared by every subcommand; unset values leave the config untouched.
struct Flags {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> r1;
  std::optional<int> p;
  std::optional<double> mu1, mu2, bp;
  std::optional<std::string> scheme, shock;
  std::optional<int> boot, hmax;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
  }
}

json section(const json& cfg, const char* name) {
  if (cfg.contains(name)) {
    if (!cfg[name].is_object()) throw Error(ErrorCode::ConfigInvalid, std::string(name) + ": must be an object");
    return cfg[name];
  }
  return json::object();
}

template <class T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ConfigInvalid, std::string(key) + ": wrong type");
  }
}

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string num(double v) { return csv::format_double(v); }

std::string pad_id(const char* prefix, Index k, int width = 3) {
  std::ostringstream ss;
  ss << prefix << std::setw(width) << std::setfill('0') << k;
  return ss.str();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create output directory '" + dir + "'");
}

// ---------------------------------------------------------------- simulate

DgpConfig dgp_from(const json& s, std::uint64_t seed) {
  DgpConfig d;
  d.n_series = get<Index>(s, "n_series", d.n_series);
  d.n_periods = get<Index>(s, "n_periods", d.n_periods);
  d.r1 = get<Index>(s, "r1", d.r1);
  d.r2 = get<Index>(s, "r2", d.r2);
  d.p = get<int>(s, "p", d.p);
  d.beta = get<double>(s, "beta", d.beta);
  d.zero_fraction = get<double>(s, "zero_fraction", d.zero_fraction);
  d.idio_band = get<Index>(s, "idio_band", d.idio_band);
  d.idio_rho = get<double>(s, "idio_rho", d.idio_rho);
  d.idio_scale = get<double>(s, "idio_scale", d.idio_scale);
  d.burn_in = get<int>(s, "burn_in", d.burn_in);
  d.normalize_factors = get<bool>(s, "normalize_factors", d.normalize_factors);
  d.orthogonalize_latent = get<bool>(s, "orthogonalize_latent", d.orthogonalize_latent);
  d.seed = seed;
  return d;
}

int cmd_simulate(const Flags& fl) {
  const json cfg = load_config(fl.config);
  const json s = section(cfg, "simulate");
  const std::uint64_t seed = fl.seed.value_or(get<std::uint64_t>(s, "seed", 1));
  DgpConfig d = dgp_from(s, seed);
  if (fl.r1) d.r1 = std::stoi(*fl.r1);
  if (fl.p) d.p = *fl.p;
  if (auto msg = d.validate(); !msg.empty()) throw Error(ErrorCode::ConfigInvalid, msg);
  const DgpTruth truth = simulate(d);
  ensure_dir(fl.out);

  std::vector<std::string> ids;
  for (Index i = 0; i < d.n_series; ++i) ids.push_back(pad_id("x", i + 1));
  std::vector<std::string> g_ids;
  for (Index j = 0; j < d.r2; ++j) g_ids.push_back(pad_id("g", j + 1));
  std::vector<std::string> labels;
  for (Index t = 0; t < d.n_periods; ++t) labels.push_back(pad_id("t", t + 1, 4));

  Matrix all(d.n_series + d.r2, d.n_periods);
  all << truth.x, truth.g.transpose();
  std::vector<std::string> all_ids = ids;
  all_ids.insert(all_ids.end(), g_ids.begin(), g_ids.end());
  std::ostringstream panel;
  write_panel_csv(panel, all, all_ids, labels);
  write_text(fs::path(fl.out) / "panel.csv", panel.str());

  std::ostringstream spec;
  csv::write_row(spec, {"id", "code"});
  for (const auto& id : all_ids) csv::write_row(spec, {id, "1"});
  write_text(fs::path(fl.out) / "spec.csv", spec.str());

  json t;
  t["config"] = {{"n_series", d.n_series}, {"n_periods", d.n_periods}, {"r1", d.r1}, {"r2", d.r2}, {"p", d.p},
                 {"beta", d.beta}, {"zero_fraction", d.zero_fraction}, {"idio_band", d.idio_band},
                 {"idio_rho", d.idio_rho}, {"idio_scale", d.idio_scale}, {"burn_in", d.burn_in}, {"seed", d.seed},
                 {"normalize_factors", d.normalize_factors}, {"orthogonalize_latent", d.orthogonalize_latent}};
  t["series"] = ids;
  t["observed"] = g_ids;
  t["loadings_latent"] = to_json(truth.loadings.latent);
  t["loadings_observed"] = to_json(truth.loadings.observed);
  t["sigma_e_diagonal"] = to_json(Vector(truth.sigma_e.diagonal()));
  json phi = json::array();
  for (const auto& m : truth.phi) phi.push_back(to_json(m));
  t["phi"] = phi;
  t["omega"] = to_json(truth.omega);
  t["companion_radius"] = check_stability(truth.phi).radius;
  write_json(fs::path(fl.out) / "truth.json", t);
  std::cout << "wrote panel.csv, spec.csv, truth.json to " << fl.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- estimate

struct EstimateSettings {
  std::string panel, spec;
  std::vector<std::string> observed;
  bool r1_auto = false;
  Index r1 = 1;
  Index r_max = 8;
  int p = 12;
  bool intercept = true;
  std::optional<double> mu1, mu2;
  std::vector<double> grid1, grid2;
  int grid_points1 = 13, grid_points2 = 4;
  bool warm_start = true;
  FitOptions fit;
  Scheme scheme = Scheme::IRa;
  std::vector<std::string> naming;
  std::uint64_t seed = 1;
  int threads = 0;
};

EstimateSettings estimate_settings(const json& cfg, const Flags& fl) {
  const json s = section(cfg, "estimate");
  EstimateSettings e;
  e.panel = get<std::string>(s, "panel", "");
  e.spec = get<std::string>(s, "spec", "");
  e.observed = get<std::vector<std::string>>(s, "observed", {});
  if (e.panel.empty()) throw Error(ErrorCode::ConfigInvalid, "estimate.panel: path to the panel CSV is required");
  std::string r1 = s.contains("r1") ? (s["r1"].is_string() ? s["r1"].get<std::string>() : std::to_string(s["r1"].get<long long>())) : "auto";
  if (fl.r1) r1 = *fl.r1;
  if (r1 == "auto") {
    e.r1_auto = true;
  } else {
    try {
      e.r1 = std::stoi(r1);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigInvalid, "r1: expected a positive integer or 'auto'");
    }
    if (e.r1 < 1) throw Error(ErrorCode::ConfigInvalid, "r1: must be >= 1");
  }
  e.r_max = get<Index>(s, "r_max", e.r_max);
  if (e.r_max < 1) throw Error(ErrorCode::ConfigInvalid, "r_max: must be >= 1");
  e.p = fl.p.value_or(get<int>(s, "p", e.p));
  if (e.p < 1) throw Error(ErrorCode::ConfigInvalid, "p: must be >= 1");
  e.intercept = get<bool>(s, "intercept", e.intercept);
  if (s.contains("mu1")) e.mu1 = get<double>(s, "mu1", 0.0);
  if (s.contains("mu2")) e.mu2 = get<double>(s, "mu2", 0.0);
  if (fl.mu1) e.mu1 = *fl.mu1;
  if (fl.mu2) e.mu2 = *fl.mu2;
  if ((e.mu1 && *e.mu1 < 0.0) || (e.mu2 && *e.mu2 < 0.0)) throw Error(ErrorCode::ConfigInvalid, "mu1/mu2: must be >= 0");
  e.grid1 = get<std::vector<double>>(s, "grid1", {});
  e.grid2 = get<std::vector<double>>(s, "grid2", {});
  e.grid_points1 = get<int>(s, "grid_points1", e.grid_points1);
  e.grid_points2 = get<int>(s, "grid_points2", e.grid_points2);
  if (e.grid_points1 < 1 || e.grid_points2 < 1) throw Error(ErrorCode::ConfigInvalid, "grid_points1/grid_points2: must be >= 1");
  e.warm_start = get<bool>(s, "warm_start", e.warm_start);
  e.fit.c = get<double>(s, "c", e.fit.c);
  e.fit.tol = get<double>(s, "tol", e.fit.tol);
  e.fit.max_iter = get<int>(s, "max_iter", e.fit.max_iter);
  if (!(e.fit.c > 0.0)) throw Error(ErrorCode::ConfigInvalid, "c: must be > 0");
  if (!(e.fit.tol > 0.0)) throw Error(ErrorCode::ConfigInvalid, "tol: must be > 0");
  if (e.fit.max_iter < 1) throw Error(ErrorCode::ConfigInvalid, "max_iter: must be >= 1");
  e.fit.init.c = get<double>(s, "init_c", e.fit.c);
  e.fit.init.tol = e.fit.tol;
  e.fit.init.max_iter = e.fit.max_iter;
  e.scheme = parse_scheme(fl.scheme.value_or(get<std::string>(s, "scheme", "ira")));
  e.naming = get<std::vector<std::string>>(s, "naming", {});
  e.seed = fl.seed.value_or(get<std::uint64_t>(cfg, "seed", 1));
  e.fit.init.seed = e.seed;
  e.threads = fl.threads.value_or(get<int>(cfg, "threads", 0));
  return e;
}

struct EstimateResult {
  LoadedPanel panel;
  std::vector<std::string> x_ids;
  RfavarFit fit;
  std::optional<PenaltySelection> selection;
  VarModel var;
  IdentifiedModel model;
  ThresholdedCov idio;
  IdentificationReport diag;
  Index r1 = 1;
  std::optional<FactorNumberSelection> r1_selection;
};

EstimateResult run_estimate(const EstimateSettings& e) {
  EstimateResult res;
  res.panel = load_panel(e.panel, e.spec, e.observed, LoadOptions{e.r1_auto ? 1 : e.r1 + static_cast<Index>(e.observed.size())});
  for (const auto& s : res.panel.x.specs) res.x_ids.push_back(s.id);
  const Matrix& x = res.panel.x.values;
  const Matrix& g = res.panel.g;
  res.r1 = e.r1;
  if (e.r1_auto) {
    const Matrix xdot = project_out_observed(x, g);
    res.r1_selection = select_num_factors_detail(xdot, std::min<Index>(e.r_max, std::min(x.rows(), x.cols())));
    res.r1 = res.r1_selection->selected;
  }

  if (e.mu1 || e.mu2) {
    res.fit = fit(x, g, res.r1, PenaltyPair{e.mu1.value_or(0.0), e.mu2.value_or(0.0)}, e.fit);
  } else {
    SelectOptions so;
    so.fit = e.fit;
    so.warm_start = e.warm_start;
    so.threads = e.threads;
    if (e.grid1.empty() && e.grid2.empty()) {
      res.selection = select_penalties_default(x, g, res.r1, so, e.grid_points1, e.grid_points2);
    } else {
      std::vector<double> g1 = e.grid1, g2 = e.grid2;
      so.adaptive_max = g1.empty() || g2.empty();
      if (g1.empty()) g1 = arithmetic_grid(0.05, e.grid_points1);
      if (g2.empty()) g2 = g.cols() > 0 ? arithmetic_grid(0.1, e.grid_points2) : std::vector<double>{0.0};
      res.selection = select_penalties(x, g, res.r1, g1, g2, so);
    }
    res.fit = *res.selection->best_fit;
  }

  Matrix h(x.cols(), res.r1 + g.cols());
  h << res.fit.factors_f, g;
  res.var = fit_var(h, e.p, e.intercept);
  if (e.scheme == Scheme::IRa) {
    res.model = apply_ira(res.fit, g, res.var);
  } else {
    std::vector<Index> rows;
    for (const auto& id : e.naming) {
      auto it = std::find(res.x_ids.begin(), res.x_ids.end(), id);
      if (it == res.x_ids.end()) throw Error(ErrorCode::ConfigInvalid, "naming: series '" + id + "' is not in the panel");
      rows.push_back(static_cast<Index>(it - res.x_ids.begin()));
    }
    res.model = apply_irb(res.fit, g, res.var, rows);
  }
  res.idio = poet_threshold(residual_cov(x, res.fit.loadings, h), x.rows(), x.cols(), true);
  res.diag = identification_diagnostic(res.fit.loadings, res.r1, g.cols());
  return res;
}

std::vector<std::string> factor_names(Index r1, const std::vector<std::string>& observed) {
  std::vector<std::string> out;
  for (Index k = 0; k < r1; ++k) out.push_back("f" + std::to_string(k + 1));
  out.insert(out.end(), observed.begin(), observed.end());
  return out;
}

std::string loadings_csv(const LoadingsMatrix& l, const std::vector<std::string>& ids, const std::vector<std::string>& names) {
  std::ostringstream ss;
  csv::Row header{"series"};
  header.insert(header.end(), names.begin(), names.end());
  csv::write_row(ss, header);
  const Matrix full = l.full();
  for (Index i = 0; i < full.rows(); ++i) {
    csv::Row row{ids[static_cast<std::size_t>(i)]};
    for (Index j = 0; j < full.cols(); ++j) row.push_back(num(full(i, j)));
    csv::write_row(ss, row);
  }
  return ss.str();
}

json var_json(const VarModel& v) {
  json phi = json::array();
  for (const auto& m : v.phi) phi.push_back(to_json(m));
  return {{"p", v.p}, {"phi", phi}, {"intercept", to_json(v.intercept)}, {"omega", to_json(v.omega)},
          {"companion_radius", v.companion_radius}, {"has_intercept", v.has_intercept}};
}

void write_estimate(const EstimateSettings& e, const EstimateResult& r, const std::string& out) {
  ensure_dir(out);
  const fs::path dir(out);
  const auto names = factor_names(r.r1, e.observed);

  json fj;
  fj["series"] = r.x_ids;
  fj["observed"] = e.observed;
  fj["r1"] = r.r1;
  fj["r2"] = r.fit.loadings.r2();
  fj["penalties"] = {{"mu1", r.fit.penalties.mu1}, {"mu2", r.fit.penalties.mu2}};
  fj["loadings_latent"] = to_json(r.fit.loadings.latent);
  fj["loadings_observed"] = to_json(r.fit.loadings.observed);
  fj["nonzero_count"] = r.fit.loadings.nonzero_count();
  fj["phi_e"] = to_json(r.fit.phi_e);
  fj["objective_trace"] = r.fit.objective_trace;
  fj["iterations"] = r.fit.iterations;
  fj["converged"] = r.fit.converged;
  fj["init_iterations"] = r.fit.init_iterations;
  fj["identification"] = {{"required", r.diag.required}, {"zeros", r.diag.zeros}, {"available", r.diag.available},
                          {"status", r.diag.pass ? "pass" : "warn"}};
  fj["idio_cov"] = {{"tau", r.idio.tau}, {"nonzeros_per_row_max", r.idio.nonzeros_per_row_max},
                    {"zero_fraction", r.idio.zero_fraction()}, {"pd_repaired", r.idio.pd_repaired}};
  write_json(dir / "fit.json", fj);
  write_text(dir / "loadings.csv", loadings_csv(r.fit.loadings, r.x_ids, names));

  if (r.selection) {
    std::ostringstream ss;
    csv::write_row(ss, {"mu1", "mu2", "ic", "kappa", "loglik", "iterations", "converged", "flagged", "all_zero"});
    for (const auto& c : r.selection->surface)
      csv::write_row(ss, {num(c.mu1), num(c.mu2), c.flagged ? "" : num(c.ic), std::to_string(c.kappa), c.flagged ? "" : num(c.loglik),
                          std::to_string(c.iterations), c.converged ? "1" : "0", c.flagged ? "1" : "0", c.all_zero ? "1" : "0"});
    write_text(dir / "ic_surface.csv", ss.str());
  }

  std::ostringstream idio;
  {
    csv::Row header{"series"};
    header.insert(header.end(), r.x_ids.begin(), r.x_ids.end());
    csv::write_row(idio, header);
    for (Index i = 0; i < r.idio.matrix.rows(); ++i) {
      csv::Row row{r.x_ids[static_cast<std::size_t>(i)]};
      for (Index j = 0; j < r.idio.matrix.cols(); ++j) row.push_back(num(r.idio.matrix(i, j)));
      csv::write_row(idio, row);
    }
  }
  write_text(dir / "idio_cov.csv", idio.str());

  const IdentifiedModel& m = r.model;
  json ij;
  ij["scheme"] = to_string(m.scheme);
  ij["factors"] = names;
  ij["column_order"] = m.column_order;
  ij["signs"] = to_json(m.signs);
  ij["omega_star"] = to_json(m.omega_star);
  ij["rotation"] = to_json(m.rotation.a);
  ij["impact_factors"] = to_json(m.rotation.a_inv);
  ij["loadings_hat"] = to_json(m.loadings_hat.full());
  ij["var_reduced"] = var_json(m.var_tilde);
  ij["var_rotated"] = var_json(m.var_hat);
  ij["fg_block_max"] = m.fg_block_max;
  ij["warnings"] = m.warnings;
  if (!m.naming_rows.empty()) {
    std::vector<std::string> nm;
    for (Index row : m.naming_rows) nm.push_back(r.x_ids[static_cast<std::size_t>(row)]);
    ij["naming"] = nm;
  }
  write_json(dir / "identified.json", ij);
  write_text(dir / "impact.csv", loadings_csv(m.loadings_hat, r.x_ids, names));

  std::ostringstream fac;
  {
    csv::Row header{"date"};
    header.insert(header.end(), names.begin(), names.end());
    csv::write_row(fac, header);
    for (Index t = 0; t < m.factors_hat.rows(); ++t) {
      csv::Row row{r.panel.x.period_labels[static_cast<std::size_t>(t)]};
      for (Index k = 0; k < m.factors_hat.cols(); ++k) row.push_back(num(m.factors_hat(t, k)));
      for (Index k = 0; k < r.panel.g.cols(); ++k) row.push_back(num(r.panel.g(t, k)));
      csv::write_row(fac, row);
    }
  }
  write_text(dir / "factors.csv", fac.str());

  json man;
  man["command"] = "estimate";
  man["seed"] = e.seed;
  man["r1"] = r.r1;
  man["r1_auto"] = e.r1_auto;
  if (r.r1_selection) {
    man["r_max"] = e.r_max;
    man["ic1"] = r.r1_selection->ic;
  }
  man["p"] = e.p;
  man["grid_search"] = r.selection.has_value();
  man["penalties"] = {{"mu1", r.fit.penalties.mu1}, {"mu2", r.fit.penalties.mu2}};
  man["c"] = e.fit.c;
  man["tol"] = e.fit.tol;
  man["max_iter"] = e.fit.max_iter;
  man["scheme"] = to_string(e.scheme);
  man["periods"] = r.panel.x.values.cols();
  man["trimmed"] = r.panel.trimmed;
  write_json(dir / "manifest.json", man);
}

int cmd_estimate(const Flags& fl) {
  const json cfg = load_config(fl.config);
  const auto e = estimate_settings(cfg, fl);
  const auto r = run_estimate(e);
  write_estimate(e, r, fl.out);
  std::cout << "r1 = " << r.r1 << ", mu1 = " << r.fit.penalties.mu1 << ", mu2 = " << r.fit.penalties.mu2
            << ", iterations = " << r.fit.iterations << (r.fit.converged ? "" : " (not converged)") << "\n";
  for (const auto& w : r.model.warnings) std::cerr << "warning: " << w << "\n";
  return kOk;
}

// ---------------------------------------------------------------- irf

int cmd_irf(const Flags& fl) {
  const json cfg = load_config(fl.config);
  const auto e = estimate_settings(cfg, fl);
  const json s = section(cfg, "irf");
  const std::string shock = fl.shock.value_or(get<std::string>(s, "shock", e.observed.empty() ? std::string("f1") : e.observed.back()));
  const int hmax = fl.hmax.value_or(get<int>(s, "hmax", 48));
  const int boot = fl.boot.value_or(get<int>(s, "boot", 0));
  const double ci = get<double>(s, "ci_level", 0.68);
  const bool own_units = get<bool>(s, "original_units", false);
  std::optional<double> bp;
  if (s.contains("bp")) bp = get<double>(s, "bp", 1.0);
  if (fl.bp) bp = *fl.bp;
  if (hmax < 0) throw Error(ErrorCode::ConfigInvalid, "hmax: must be >= 0");
  if (boot < 0) throw Error(ErrorCode::ConfigInvalid, "boot: must be >= 0");
  if (!(ci > 0.0 && ci < 1.0)) throw Error(ErrorCode::ConfigInvalid, "ci_level: must lie in (0, 1)");

  const auto r = run_estimate(e);
  write_estimate(e, r, fl.out);
  const auto names = factor_names(r.r1, e.observed);
  auto it = std::find(names.begin(), names.end(), shock);
  if (it == names.end()) {
    std::cerr << "error: unknown shock series '" << shock << "'\n";
    return kAnalysis;
  }
  const Index shock_index = static_cast<Index>(it - names.begin());

  IrfResult irf;
  if (boot > 0) {
    BootstrapOptions bo;
    bo.replications = boot;
    bo.h_max = hmax;
    bo.shock_index = shock_index;
    bo.ci_level = ci;
    bo.seed = e.seed;
    bo.threads = e.threads;
    irf = bootstrap_irf(r.model, bo);
  } else {
    irf = impulse_responses(r.model, hmax, shock_index, 1.0);
  }
  std::vector<int> codes;
  for (const auto& sp : r.panel.x.specs) codes.push_back(sp.transform_code);
  irf = accumulate_by_code(std::move(irf), codes);
  double target_std = 1.0;
  if (shock_index >= r.r1) target_std = r.panel.g_stds(shock_index - r.r1);
  if (bp || own_units) {
    const Vector* stds = own_units ? &r.panel.x.stds : nullptr;
    irf = rescale_to_original_units(std::move(irf), bp ? target_std : 1.0, bp.value_or(1.0), stds);
  }

  const fs::path dir(fl.out);
  auto write_long = [&](const fs::path& path, const char* key, const Matrix& point, const Matrix* lo, const Matrix* hi,
                        const std::vector<std::string>& labels) {
    std::ostringstream ss;
    csv::Row header{key, "horizon", "point"};
    if (lo) {
      header.push_back("lower");
      header.push_back("upper");
    }
    csv::write_row(ss, header);
    for (Index j = 0; j < point.cols(); ++j) {
      for (Index h = 0; h < point.rows(); ++h) {
        csv::Row row{labels[static_cast<std::size_t>(j)], std::to_string(h), num(point(h, j))};
        if (lo) {
          row.push_back(num((*lo)(h, j)));
          row.push_back(num((*hi)(h, j)));
        }
        csv::write_row(ss, row);
      }
    }
    write_text(path, ss.str());
  };
  const IrfBands* b = irf.bands ? &*irf.bands : nullptr;
  write_long(dir / "irf_factors.csv", "factor", irf.factor_irf, b ? &b->factor_lower : nullptr, b ? &b->factor_upper : nullptr, names);
  write_long(dir / "irf_observables.csv", "series", irf.observable_irf, b ? &b->observable_lower : nullptr,
             b ? &b->observable_upper : nullptr, r.x_ids);

  json man;
  man["command"] = "irf";
  man["scheme"] = to_string(e.scheme);
  man["shock"] = shock;
  man["shock_index"] = shock_index;
  man["shock_size"] = irf.shock_size;
  man["bp"] = bp ? json(*bp) : json(nullptr);
  man["target_series_std"] = target_std;
  man["original_units"] = own_units;
  man["hmax"] = hmax;
  man["boot"] = boot;
  man["ci_level"] = ci;
  man["dropped"] = irf.dropped;
  man["seed"] = e.seed;
  std::vector<std::string> acc;
  for (std::size_t i = 0; i < irf.accumulated.size(); ++i)
    if (irf.accumulated[i]) acc.push_back(r.x_ids[i]);
  man["accumulated"] = acc;
  man["warnings"] = irf.warnings;
  man["band_note"] = "bands treat the estimated factors and loadings as known";
  write_json(dir / "irf_manifest.json", man);
  for (const auto& w : irf.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote irf_factors.csv, irf_observables.csv to " << fl.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- montecarlo

int cmd_montecarlo(const Flags& fl) {
  const json cfg = load_config(fl.config);
  const json s = section(cfg, "montecarlo");
  McConfig mc;
  if (s.contains("sizes")) {
    mc.sizes.clear();
    for (const auto& pair : s["sizes"]) {
      if (!pair.is_array() || pair.size() != 2) throw Error(ErrorCode::ConfigInvalid, "sizes: expected [[N, T], ...]");
      mc.sizes.emplace_back(pair[0].get<Index>(), pair[1].get<Index>());
    }
  }
  mc.replications = get<int>(s, "replications", mc.replications);
  mc.dgp = dgp_from(s, 0);
  if (!s.contains("r1")) mc.dgp.r1 = 3;
  if (!s.contains("r2")) mc.dgp.r2 = 1;
  if (!s.contains("zero_fraction")) mc.dgp.zero_fraction = 0.6;
  if (fl.r1) mc.dgp.r1 = std::stoi(*fl.r1);
  mc.p = fl.p.value_or(get<int>(s, "p", mc.p));
  mc.grid1 = get<std::vector<double>>(s, "grid1", mc.grid1);
  mc.grid2 = get<std::vector<double>>(s, "grid2", mc.grid2);
  mc.select.fit.c = get<double>(s, "c", mc.select.fit.c);
  mc.select.fit.init.c = mc.select.fit.c;
  mc.select.fit.tol = get<double>(s, "tol", mc.select.fit.tol);
  mc.select.fit.max_iter = get<int>(s, "max_iter", mc.select.fit.max_iter);
  mc.f1_threshold = get<double>(s, "f1_threshold", mc.f1_threshold);
  mc.seed = fl.seed.value_or(get<std::uint64_t>(s, "seed", get<std::uint64_t>(cfg, "seed", 1)));
  mc.threads = fl.threads.value_or(get<int>(cfg, "threads", 0));
  if (mc.replications < 1) throw Error(ErrorCode::ConfigInvalid, "replications: must be >= 1");
  for (const auto& [n, t] : mc.sizes) {
    DgpConfig d = mc.dgp;
    d.n_series = n;
    d.n_periods = t;
    if (auto msg = d.validate(); !msg.empty()) throw Error(ErrorCode::ConfigInvalid, msg);
  }

  const McReport rep = run_montecarlo(mc);
  ensure_dir(fl.out);
  const fs::path dir(fl.out);
  std::ostringstream ss;
  csv::write_row(ss, {"n", "t", "rep", "seed", "mu1", "mu2", "err_lambda", "err_phi", "err_factor", "f1", "iterations", "converged", "failed"});
  for (const auto& r : rep.records)
    csv::write_row(ss, {std::to_string(r.n), std::to_string(r.t), std::to_string(r.rep), std::to_string(r.seed), num(r.mu1), num(r.mu2),
                        num(r.err_lambda), num(r.err_phi), num(r.err_factor), num(r.f1), std::to_string(r.iterations),
                        r.converged ? "1" : "0", r.failed ? "1" : "0"});
  write_text(dir / "mc_records.csv", ss.str());

  json sum;
  json sizes = json::array();
  for (const auto& z : rep.sizes)
    sizes.push_back({{"n", z.n}, {"t", z.t}, {"completed", z.completed}, {"median_err_lambda", z.median_err_lambda},
                     {"median_err_phi", z.median_err_phi}, {"median_err_factor", z.median_err_factor}, {"median_f1", z.median_f1}});
  sum["sizes"] = sizes;
  sum["replications"] = mc.replications;
  sum["seed"] = mc.seed;
  if (rep.insufficient) {
    sum["status"] = "insufficient";
    sum["note"] = "decay assertions need at least two sizes";
  } else {
    sum["assertions"] = {{"lambda_decreasing", rep.lambda_decreasing}, {"phi_decreasing", rep.phi_decreasing},
                         {"factor_decreasing", rep.factor_decreasing}, {"f1_at_largest", rep.f1_ok}};
    sum["f1_threshold"] = rep.f1_threshold;
    sum["status"] = rep.passed() ? "pass" : "fail";
  }
  write_json(dir / "mc_summary.json", sum);
  for (const auto& z : rep.sizes)
    std::cout << "N=" << z.n << " T=" << z.t << " median err_lambda=" << z.median_err_lambda << " err_phi=" << z.median_err_phi
              << " err_factor=" << z.median_err_factor << " f1=" << z.median_f1 << "\n";
  if (rep.insufficient) return kOk;
  return rep.passed() ? kOk : kAcceptance;
}

void add_common(CLI::App* app, Flags& fl) {
  app->add_option("--config", fl.config, "JSON config file");
  app->add_option("--out", fl.out, "output directory");
  app->add_option("--seed", fl.seed, "random seed");
  app->add_option("--threads", fl.threads, "worker threads (falls back to RFAVAR_THREADS)");
  app->add_option("--r1", fl.r1, "number of latent factors or 'auto'");
  app->add_option("--p", fl.p, "VAR lag order");
  app->add_option("--mu1", fl.mu1, "fixed latent-loading penalty");
  app->add_option("--mu2", fl.mu2, "fixed observed-loading penalty");
  app->add_option("--scheme", fl.scheme, "identification scheme: ira or irb");
  app->add_option("--shock", fl.shock, "shocked factor id (observed series id or f<k>)");
  app->add_option("--bp", fl.bp, "shock magnitude in the shocked series' original units");
  app->add_option("--boot", fl.boot, "bootstrap replications (0 for point estimates only)");
  app->add_option("--hmax", fl.hmax, "maximum horizon");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regularized FAVAR estimation"};
  app.require_subcommand(1);
  Flags fl;
  auto* sim = app.add_subcommand("simulate", "simulate a FAVAR panel");
  auto* est = app.add_subcommand("estimate", "estimate and identify a regularized FAVAR");
  auto* irf = app.add_subcommand("irf", "impulse responses with bootstrap bands");
  auto* mc = app.add_subcommand("montecarlo", "Monte Carlo consistency ladder");
  for (auto* sub : {sim, est, irf, mc}) add_common(sub, fl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) return cmd_simulate(fl);
    if (*est) return cmd_estimate(fl);
    if (*irf) return cmd_irf(fl);
    if (*mc) return cmd_montecarlo(fl);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error [config]: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kConfig;
}
