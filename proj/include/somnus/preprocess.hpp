#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "somnus/config.hpp"
#include "somnus/error.hpp"
#include "somnus/fixture.hpp"
#include "somnus/tabular.hpp"

namespace somnus {

struct PipelineConfig {
  double na_column_threshold = 0.30;
  double tukey_multiplier = 1.5;
  std::vector<std::string> tukey_columns = fixture_tukey_columns();
  double correlation_floor = 0.001;
  std::string lag_feature_name = kLagFeature;

  void validate() const {
    if (!(na_column_threshold > 0 && na_column_threshold < 1)) {
      throw Error(Errc::kInvalidConfig, "na_column_threshold must be in (0, 1)");
    }
    if (!(tukey_multiplier > 0)) throw Error(Errc::kInvalidConfig, "tukey_multiplier must be > 0");
    if (!(correlation_floor >= 0)) throw Error(Errc::kInvalidConfig, "correlation_floor must be >= 0");
    if (lag_feature_name.empty()) throw Error(Errc::kInvalidConfig, "lag_feature_name is empty");
  }

  // Stage order is fixed, so only these keys are accepted.
  static PipelineConfig from_json(const json& section) {
    expect_known_keys(section,
                      {"na_column_threshold", "tukey_multiplier", "tukey_columns",
                       "correlation_floor", "lag_feature_name"},
                      "pipeline");
    PipelineConfig cfg;
    cfg.na_column_threshold = config_value(section, "na_column_threshold", cfg.na_column_threshold);
    cfg.tukey_multiplier = config_value(section, "tukey_multiplier", cfg.tukey_multiplier);
    cfg.tukey_columns = config_value(section, "tukey_columns", cfg.tukey_columns);
    cfg.correlation_floor = config_value(section, "correlation_floor", cfg.correlation_floor);
    cfg.lag_feature_name = config_value(section, "lag_feature_name", cfg.lag_feature_name);
    cfg.validate();
    return cfg;
  }

  json to_json() const {
    return {{"na_column_threshold", na_column_threshold},
            {"tukey_multiplier", tukey_multiplier},
            {"tukey_columns", tukey_columns},
            {"correlation_floor", correlation_floor},
            {"lag_feature_name", lag_feature_name}};
  }
};

struct ColumnDrop {
  std::string column;
  double observed = 0.0;  // NA fraction or correlation, depending on the list
  bool operator==(const ColumnDrop&) const = default;
};

struct RowKey {
  std::string pid;
  Date date{};
  bool operator==(const RowKey&) const = default;
};

struct OutlierDrop {
  std::string pid;
  Date date{};
  std::string column;
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct TukeyFences {
  std::string column;
  double q1 = 0.0;
  double q3 = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct PreprocessReport {
  std::size_t input_rows = 0;
  std::size_t output_rows = 0;
  std::vector<ColumnDrop> dropped_columns_na;
  std::vector<ColumnDrop> dropped_columns_corr;
  std::vector<OutlierDrop> dropped_rows_outlier;
  std::vector<RowKey> dropped_rows_no_target;
  std::vector<RowKey> dropped_rows_first_index;
  std::map<std::string, std::size_t> imputed_cells;
  std::vector<TukeyFences> fences;
  bool lag_already_present = false;

  std::size_t dropped_rows() const {
    return dropped_rows_outlier.size() + dropped_rows_no_target.size() +
           dropped_rows_first_index.size();
  }
  std::size_t imputed_total() const {
    std::size_t n = 0;
    for (const auto& [c, k] : imputed_cells) n += k;
    return n;
  }
  bool reconciles() const { return input_rows == output_rows + dropped_rows(); }

  void merge(const PreprocessReport& f) {
    auto append = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    append(dropped_columns_na, f.dropped_columns_na);
    append(dropped_columns_corr, f.dropped_columns_corr);
    append(dropped_rows_outlier, f.dropped_rows_outlier);
    append(dropped_rows_no_target, f.dropped_rows_no_target);
    append(dropped_rows_first_index, f.dropped_rows_first_index);
    append(fences, f.fences);
    for (const auto& [c, k] : f.imputed_cells) imputed_cells[c] += k;
  }

  json to_json() const {
    auto keys = [](const std::vector<RowKey>& v) {
      json a = json::array();
      for (const auto& k : v) a.push_back({{"pid", k.pid}, {"date", format_date(k.date)}});
      return a;
    };
    auto cols = [](const std::vector<ColumnDrop>& v, const char* field) {
      json a = json::array();
      for (const auto& c : v) a.push_back({{"column", c.column}, {field, c.observed}});
      return a;
    };
    json outliers = json::array();
    for (const auto& o : dropped_rows_outlier) {
      outliers.push_back({{"pid", o.pid},
                          {"date", format_date(o.date)},
                          {"column", o.column},
                          {"value", o.value},
                          {"fences", {o.lower, o.upper}}});
    }
    json fence_list = json::array();
    for (const auto& f : fences) {
      fence_list.push_back({{"column", f.column}, {"q1", f.q1}, {"q3", f.q3},
                            {"lower", f.lower}, {"upper", f.upper}});
    }
    return {{"input_rows", input_rows},
            {"output_rows", output_rows},
            {"dropped_columns_na", cols(dropped_columns_na, "na_fraction")},
            {"dropped_columns_corr", cols(dropped_columns_corr, "r")},
            {"dropped_rows_outlier", outliers},
            {"dropped_rows_no_target", keys(dropped_rows_no_target)},
            {"dropped_rows_first_index", keys(dropped_rows_first_index)},
            {"imputed_cells", imputed_cells},
            {"fences", fence_list},
            {"lag_already_present", lag_already_present}};
  }
};

struct StageResult {
  BehaviorTable table;
  PreprocessReport report;
};

// Linear interpolation at q * (n - 1) on ascending values.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(Errc::kEmptyColumn, "quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline TukeyFences tukey_fences(std::vector<double> values, double k, std::string column = {}) {
  if (values.empty()) throw Error(Errc::kEmptyColumn, "no non-missing values", column);
  std::sort(values.begin(), values.end());
  TukeyFences f;
  f.column = std::move(column);
  f.q1 = quantile_sorted(values, 0.25);
  f.q3 = quantile_sorted(values, 0.75);
  const double iqr = f.q3 - f.q1;
  f.lower = f.q1 - k * iqr;
  f.upper = f.q3 + k * iqr;
  return f;
}

// Pearson r; 0 when either side has zero variance.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n == 0 || n != y.size()) return 0.0;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0 || syy <= 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline StageResult drop_missing_target(const BehaviorTable& table) {
  StageResult out;
  std::vector<BehaviorRow> keep;
  const auto t = table.target_index();
  for (const auto& r : table.rows()) {
    if (r.values[t]) keep.push_back(r);
    else out.report.dropped_rows_no_target.push_back({r.pid, r.date});
  }
  out.table = with_rows(table, std::move(keep));
  return out;
}

// Attaches the previous row's target (same pid) as a feature and drops the
// first row of every participant. Gaps in the calendar are ignored.
inline StageResult add_lag_target(const BehaviorTable& table, const PipelineConfig& cfg) {
  if (table.has_column(cfg.lag_feature_name)) {
    throw Error(Errc::kInvalidTable, "lag feature already present", cfg.lag_feature_name);
  }
  const auto t = table.target_index();
  std::vector<std::string> columns = table.columns();
  columns.insert(columns.begin() + static_cast<std::ptrdiff_t>(t), cfg.lag_feature_name);

  StageResult out;
  std::vector<BehaviorRow> rows;
  for (auto group : table.participant_groups()) {
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (i == 0) {
        out.report.dropped_rows_first_index.push_back({group[i].pid, group[i].date});
        continue;
      }
      BehaviorRow r = group[i];
      r.values.insert(r.values.begin() + static_cast<std::ptrdiff_t>(t), group[i - 1].values[t]);
      rows.push_back(std::move(r));
    }
  }
  out.table = BehaviorTable(std::move(columns), table.target_column(), std::move(rows));
  return out;
}

inline StageResult drop_sparse_columns(const BehaviorTable& table, const PipelineConfig& cfg) {
  StageResult out;
  std::set<std::string> drop;
  const double n = static_cast<double>(table.size());
  if (table.size() > 0) {
    for (std::size_t c = 0; c < table.columns().size(); ++c) {
      const auto& name = table.columns()[c];
      if (name == table.target_column() || name == cfg.lag_feature_name) continue;
      std::size_t missing = 0;
      for (const auto& r : table.rows()) missing += r.values[c] ? 0 : 1;
      const double fraction = static_cast<double>(missing) / n;
      if (fraction > cfg.na_column_threshold) {
        drop.insert(name);
        out.report.dropped_columns_na.push_back({name, fraction});
      }
    }
  }
  out.table = drop.empty() ? table : drop_columns(table, drop);
  return out;
}

// Single pass: fences are computed once on the input table; a row is removed
// when any configured column lies strictly outside its fences.
inline StageResult remove_outlier_rows(const BehaviorTable& table, const PipelineConfig& cfg) {
  StageResult out;
  std::vector<std::pair<std::size_t, TukeyFences>> fences;
  for (const auto& col : cfg.tukey_columns) {
    const auto c = table.column_index(col);
    std::vector<double> values;
    for (const auto& r : table.rows()) {
      if (r.values[c]) values.push_back(*r.values[c]);
    }
    fences.emplace_back(c, tukey_fences(std::move(values), cfg.tukey_multiplier, col));
    out.report.fences.push_back(fences.back().second);
  }
  std::vector<BehaviorRow> keep;
  for (const auto& r : table.rows()) {
    const OutlierDrop* hit = nullptr;
    OutlierDrop drop;
    for (const auto& [c, f] : fences) {
      const auto& v = r.values[c];
      if (v && (*v < f.lower || *v > f.upper)) {
        drop = {r.pid, r.date, f.column, *v, f.lower, f.upper};
        hit = &drop;
        break;
      }
    }
    if (hit) out.report.dropped_rows_outlier.push_back(drop);
    else keep.push_back(r);
  }
  out.table = with_rows(table, std::move(keep));
  return out;
}

// Missing feature cells take the participant's mean for that column, or the
// global column mean when the participant has no observed value.
inline StageResult impute_missing(const BehaviorTable& table) {
  StageResult out;
  const auto t = table.target_index();
  for (const auto& r : table.rows()) {
    if (!r.values[t]) throw Error(Errc::kInvalidTable, "target missing during imputation", r.pid);
  }
  std::vector<BehaviorRow> rows = table.rows();
  const auto ncol = table.columns().size();
  for (std::size_t c = 0; c < ncol; ++c) {
    if (c == t) continue;
    double gsum = 0;
    std::size_t gcount = 0;
    for (const auto& r : rows) {
      if (r.values[c]) {
        gsum += *r.values[c];
        ++gcount;
      }
    }
    std::size_t start = 0;
    std::size_t imputed = 0;
    for (std::size_t i = 1; i <= rows.size(); ++i) {
      if (i < rows.size() && rows[i].pid == rows[start].pid) continue;
      double sum = 0;
      std::size_t count = 0;
      for (std::size_t k = start; k < i; ++k) {
        if (rows[k].values[c]) {
          sum += *rows[k].values[c];
          ++count;
        }
      }
      std::optional<double> fill;
      if (count > 0) fill = sum / static_cast<double>(count);
      else if (gcount > 0) fill = gsum / static_cast<double>(gcount);
      for (std::size_t k = start; k < i; ++k) {
        if (!rows[k].values[c] && fill) {
          rows[k].values[c] = fill;
          ++imputed;
        }
      }
      start = i;
    }
    if (imputed > 0) out.report.imputed_cells[table.columns()[c]] = imputed;
  }
  out.table = with_rows(table, std::move(rows));
  return out;
}

// Drops feature columns with |r| < floor against the target. Constant columns
// count as r = 0. The lag feature is never pruned.
inline StageResult prune_weak_columns(const BehaviorTable& table, const PipelineConfig& cfg) {
  StageResult out;
  const auto t = table.target_index();
  std::vector<double> y;
  y.reserve(table.size());
  for (const auto& r : table.rows()) {
    if (!r.values[t]) throw Error(Errc::kInvalidTable, "missing target in prune stage", r.pid);
    y.push_back(*r.values[t]);
  }
  std::set<std::string> drop;
  std::vector<double> x(table.size());
  for (std::size_t c = 0; c < table.columns().size(); ++c) {
    const auto& name = table.columns()[c];
    if (c == t || name == cfg.lag_feature_name) continue;
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto& v = table.rows()[i].values[c];
      if (!v) throw Error(Errc::kInvalidTable, "missing value in prune stage", name);
      x[i] = *v;
    }
    const double r = pearson(x, y);
    if (std::abs(r) < cfg.correlation_floor || r == 0.0) {
      drop.insert(name);
      out.report.dropped_columns_corr.push_back({name, r});
    }
  }
  out.table = drop.empty() ? table : drop_columns(table, drop);
  return out;
}

// Stages, in order: drop rows without target, lag, sparse-column drop, Tukey
// row removal, per-participant imputation, weak-correlation pruning. When the
// lag feature already exists the input is treated as already lagged.
inline StageResult run_pipeline(const BehaviorTable& raw, const PipelineConfig& cfg) {
  cfg.validate();
  PreprocessReport report;
  report.input_rows = raw.size();

  auto s1 = drop_missing_target(raw);
  report.merge(s1.report);

  BehaviorTable lagged;
  if (s1.table.has_column(cfg.lag_feature_name)) {
    report.lag_already_present = true;
    lagged = std::move(s1.table);
  } else {
    auto s2 = add_lag_target(s1.table, cfg);
    report.merge(s2.report);
    lagged = std::move(s2.table);
  }

  auto s3 = drop_sparse_columns(lagged, cfg);
  report.merge(s3.report);
  // Tukey columns removed as sparse are no longer fenced.
  PipelineConfig fenced = cfg;
  std::erase_if(fenced.tukey_columns, [&](const std::string& c) {
    return std::any_of(s3.report.dropped_columns_na.begin(), s3.report.dropped_columns_na.end(),
                       [&](const ColumnDrop& d) { return d.column == c; });
  });
  auto s4 = remove_outlier_rows(s3.table, fenced);
  report.merge(s4.report);
  auto s5 = impute_missing(s4.table);
  report.merge(s5.report);
  auto s6 = prune_weak_columns(s5.table, cfg);
  report.merge(s6.report);

  report.output_rows = s6.table.size();
  return {std::move(s6.table), std::move(report)};
}

}  // namespace somnus
