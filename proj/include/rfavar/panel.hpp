#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rfavar/csv.hpp"
#include "rfavar/types.hpp"

namespace rfavar {

// Transform codes for stationarity-inducing transformations.
//   1 level, 2 first difference, 3 second difference,
//   4 log, 5 first difference of log, 6 second difference of log.
struct SeriesSpec {
  std::string id;
  int transform_code = 1;
  std::string display_name;
};

// Standardized N x T panel with the scales needed to map results back to
// original units.
struct TimePanel {
  Matrix values;  // N x T
  std::vector<SeriesSpec> specs;
  Vector means;
  Vector stds;
  std::vector<std::string> period_labels;

  Index n_series() const { return values.rows(); }
  Index n_periods() const { return values.cols(); }
};

inline bool valid_transform_code(int code) { return code >= 1 && code <= 6; }

inline int differencing_order(int code) {
  switch (code) {
    case 1: case 4: return 0;
    case 2: case 5: return 1;
    case 3: case 6: return 2;
    default: throw Error(ErrorCode::UnknownCode, "transform code " + std::to_string(code) + " not in 1..6");
  }
}

inline bool uses_log(int code) { return code >= 4 && code <= 6; }

inline std::vector<double> apply_transform(const std::vector<double>& raw, int code) {
  const int order = differencing_order(code);
  if (raw.size() < static_cast<std::size_t>(1 + order))
    throw Error(ErrorCode::SeriesTooShort, "need at least " + std::to_string(1 + order) + " observations");
  std::vector<double> out = raw;
  if (uses_log(code)) {
    for (double& v : out) {
      if (!(v > 0.0)) throw Error(ErrorCode::NonPositiveForLog, "log transform of non-positive value");
      v = std::log(v);
    }
  }
  for (int d = 0; d < order; ++d) {
    std::vector<double> diff(out.size() - 1);
    for (std::size_t t = 1; t < out.size(); ++t) diff[t - 1] = out[t] - out[t - 1];
    out = std::move(diff);
  }
  return out;
}

struct Standardized {
  Matrix panel;
  Vector means;
  Vector stds;
};

// Row-wise centering and scaling to unit sample variance (divisor T-1).
// `ids` is only used to name the offending series in errors.
inline Standardized standardize(const Matrix& values, const std::vector<std::string>& ids = {}) {
  const Index n = values.rows();
  const Index t = values.cols();
  if (t < 2) throw Error(ErrorCode::SeriesTooShort, "standardization needs at least two periods");
  Standardized out{Matrix(n, t), Vector(n), Vector(n)};
  for (Index i = 0; i < n; ++i) {
    // two-pass mean/variance
    long double sum = 0.0L;
    for (Index j = 0; j < t; ++j) sum += values(i, j);
    const long double mean = sum / t;
    long double ss = 0.0L;
    for (Index j = 0; j < t; ++j) {
      long double d = values(i, j) - mean;
      ss += d * d;
    }
    const double sd = static_cast<double>(std::sqrt(ss / (t - 1)));
    if (!(sd > 0.0) || !std::isfinite(sd)) {
      std::string name = static_cast<std::size_t>(i) < ids.size() ? ids[i] : std::to_string(i);
      throw Error(ErrorCode::ZeroVarianceSeries, "series '" + name + "' has zero variance");
    }
    out.means(i) = static_cast<double>(mean);
    out.stds(i) = sd;
    for (Index j = 0; j < t; ++j) out.panel(i, j) = static_cast<double>((values(i, j) - mean) / sd);
  }
  return out;
}

struct LoadedPanel {
  TimePanel x;
  Matrix g;  // T x r2, standardized
  std::vector<SeriesSpec> g_specs;
  Vector g_means;
  Vector g_stds;
  Index trimmed = 0;  // leading periods lost to differencing
};

struct LoadOptions {
  Index factor_count = 1;  // r1 + r2; the trimmed window must be longer than this
};

namespace detail {

inline double parse_cell(const std::string& cell, const std::string& id, std::size_t row) {
  auto blank = cell.find_first_not_of(" \t");
  if (blank == std::string::npos || cell == "NA" || cell == "NaN" || cell == "nan")
    throw Error(ErrorCode::MissingValue, "series '" + id + "' row " + std::to_string(row) + " is missing");
  char* end = nullptr;
  double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || !std::isfinite(v))
    throw Error(ErrorCode::MissingValue, "series '" + id + "' row " + std::to_string(row) + " is not a finite number");
  return v;
}

}  // namespace detail

// Reads `id,transform_code` rows; a header row is skipped when its code is not numeric.
inline std::map<std::string, SeriesSpec> read_spec_file(const std::string& path) {
  std::map<std::string, SeriesSpec> out;
  auto rows = csv::read(path);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& row = rows[k];
    if (row.size() < 2) throw Error(ErrorCode::RaggedCsv, "spec row " + std::to_string(k) + " needs id,transform_code");
    char* end = nullptr;
    long code = std::strtol(row[1].c_str(), &end, 10);
    if (end == row[1].c_str()) {
      if (k == 0) continue;
      throw Error(ErrorCode::UnknownCode, "spec row " + std::to_string(k) + " has non-integer code");
    }
    if (!valid_transform_code(static_cast<int>(code)))
      throw Error(ErrorCode::UnknownCode, "series '" + row[0] + "' has code " + row[1]);
    SeriesSpec spec{row[0], static_cast<int>(code), row.size() > 2 ? row[2] : row[0]};
    if (!out.emplace(spec.id, spec).second) throw Error(ErrorCode::ConfigInvalid, "duplicate id '" + spec.id + "' in spec file");
  }
  return out;
}

// Loads a raw CSV panel, transforms and aligns all series on a common window,
// and splits out the observed factors. Series missing from the spec file use code 1.
inline LoadedPanel load_panel(const std::string& path, const std::string& spec_path,
                              const std::vector<std::string>& observed_ids, const LoadOptions& opts = {}) {
  auto rows = csv::read(path);
  if (rows.size() < 2) throw Error(ErrorCode::WindowTooShort, "panel has no data rows");
  const auto& header = rows[0];
  const std::size_t ncol = header.size();
  for (std::size_t k = 1; k < rows.size(); ++k)
    if (rows[k].size() != ncol) throw Error(ErrorCode::RaggedCsv, "row " + std::to_string(k) + " has " + std::to_string(rows[k].size()) + " fields, expected " + std::to_string(ncol));

  std::map<std::string, SeriesSpec> specs;
  if (!spec_path.empty()) specs = read_spec_file(spec_path);

  std::vector<std::string> ids(header.begin() + 1, header.end());
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw Error(ErrorCode::ConfigInvalid, "duplicate series id '" + id + "'");
  for (const auto& id : observed_ids)
    if (!seen.count(id)) throw Error(ErrorCode::MissingSeries, "observed series '" + id + "' not in panel");
  for (const auto& [id, spec] : specs)
    if (!seen.count(id)) throw Error(ErrorCode::MissingSeries, "spec series '" + id + "' not in panel");

  const std::size_t t_raw = rows.size() - 1;
  std::vector<SeriesSpec> all_specs;
  int max_order = 0;
  for (const auto& id : ids) {
    auto it = specs.find(id);
    SeriesSpec s = it != specs.end() ? it->second : SeriesSpec{id, 1, id};
    max_order = std::max(max_order, differencing_order(s.transform_code));
    all_specs.push_back(s);
  }
  if (t_raw <= static_cast<std::size_t>(max_order) + static_cast<std::size_t>(std::max<Index>(opts.factor_count, 1)))
    throw Error(ErrorCode::WindowTooShort, "only " + std::to_string(t_raw - std::min<std::size_t>(t_raw, max_order)) + " usable periods");
  const Index t = static_cast<Index>(t_raw) - max_order;

  Matrix transformed(static_cast<Index>(ids.size()), t);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    std::vector<double> raw(t_raw);
    for (std::size_t k = 0; k < t_raw; ++k) raw[k] = detail::parse_cell(rows[k + 1][j + 1], ids[j], k + 1);
    auto tr = apply_transform(raw, all_specs[j].transform_code);
    const std::size_t skip = tr.size() - static_cast<std::size_t>(t);
    for (Index k = 0; k < t; ++k) transformed(static_cast<Index>(j), k) = tr[skip + k];
  }

  std::vector<std::string> labels;
  for (std::size_t k = max_order + 1; k < rows.size(); ++k) labels.push_back(rows[k][0]);

  std::vector<Index> x_rows, g_rows;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    bool obs = std::find(observed_ids.begin(), observed_ids.end(), ids[j]) != observed_ids.end();
    if (!obs) x_rows.push_back(static_cast<Index>(j));
  }
  for (const auto& id : observed_ids)
    g_rows.push_back(static_cast<Index>(std::find(ids.begin(), ids.end(), id) - ids.begin()));
  if (x_rows.empty()) throw Error(ErrorCode::MissingSeries, "no unobserved series left in the panel");

  auto gather = [&](const std::vector<Index>& sel, std::vector<SeriesSpec>& sel_specs, std::vector<std::string>& sel_ids) {
    Matrix m(static_cast<Index>(sel.size()), t);
    for (std::size_t k = 0; k < sel.size(); ++k) {
      m.row(static_cast<Index>(k)) = transformed.row(sel[k]);
      sel_specs.push_back(all_specs[sel[k]]);
      sel_ids.push_back(ids[sel[k]]);
    }
    return m;
  };

  LoadedPanel out;
  std::vector<std::string> x_ids, g_ids;
  Matrix xraw = gather(x_rows, out.x.specs, x_ids);
  Matrix graw = gather(g_rows, out.g_specs, g_ids);
  auto xs = standardize(xraw, x_ids);
  out.x.values = std::move(xs.panel);
  out.x.means = std::move(xs.means);
  out.x.stds = std::move(xs.stds);
  out.x.period_labels = labels;
  if (graw.rows() > 0) {
    auto gs = standardize(graw, g_ids);
    out.g = gs.panel.transpose();
    out.g_means = gs.means;
    out.g_stds = gs.stds;
  } else {
    out.g.resize(t, 0);
  }
  out.trimmed = max_order;
  return out;
}

// Writes a period-by-series CSV with the period label in the first column.
inline void write_panel_csv(std::ostream& out, const Matrix& values, const std::vector<std::string>& ids,
                            const std::vector<std::string>& labels) {
  csv::Row header{"date"};
  header.insert(header.end(), ids.begin(), ids.end());
  csv::write_row(out, header);
  for (Index t = 0; t < values.cols(); ++t) {
    csv::Row row{static_cast<std::size_t>(t) < labels.size() ? labels[t] : std::to_string(t + 1)};
    for (Index i = 0; i < values.rows(); ++i) row.push_back(csv::format_double(values(i, t)));
    csv::write_row(out, row);
  }
}

}  // namespace rfavar
