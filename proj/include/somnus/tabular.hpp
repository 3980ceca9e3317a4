#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "somnus/error.hpp"

namespace somnus {

using Date = std::chrono::sys_days;

inline std::optional<Date> parse_date(std::string_view text) {
  // YYYY-MM-DD only
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
    return ec == std::errc() && p == text.data() + pos + len;
  };
  if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

inline std::string format_date(Date date) {
  std::chrono::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

enum class FeatureCategory { kBluetooth, kCall, kLocation, kScreen, kSteps, kSleep, kOther };

inline const char* to_string(FeatureCategory c) {
  switch (c) {
    case FeatureCategory::kBluetooth: return "bluetooth";
    case FeatureCategory::kCall: return "call";
    case FeatureCategory::kLocation: return "location";
    case FeatureCategory::kScreen: return "screen";
    case FeatureCategory::kSteps: return "steps";
    case FeatureCategory::kSleep: return "sleep";
    case FeatureCategory::kOther: return "other";
  }
  return "other";
}

inline FeatureCategory category_from_string(std::string_view s) {
  for (auto c : {FeatureCategory::kBluetooth, FeatureCategory::kCall, FeatureCategory::kLocation,
                 FeatureCategory::kScreen, FeatureCategory::kSteps, FeatureCategory::kSleep}) {
    if (s == to_string(c)) return c;
  }
  return FeatureCategory::kOther;
}

struct FeatureDomain {
  std::string column;
  FeatureCategory category = FeatureCategory::kOther;
  double lo = 0.0;
  double hi = 1.0;
  bool adjustable = false;

  double width() const { return hi - lo; }
  bool contains(double v) const { return v >= lo && v <= hi; }

  void validate() const {
    if (!(lo < hi)) throw Error(Errc::kInvalidConfig, "plausible range must satisfy lo < hi", column);
    const bool adjustable_family =
        category == FeatureCategory::kScreen || category == FeatureCategory::kSteps ||
        category == FeatureCategory::kCall || category == FeatureCategory::kLocation;
    if (adjustable && !adjustable_family) {
      throw Error(Errc::kInvalidConfig, "only screen/steps/call/location features may be adjustable",
                  column);
    }
  }
};

struct BehaviorRow {
  std::string pid;
  Date date{};
  std::vector<std::optional<double>> values;  // aligned with BehaviorTable::columns()
  bool synthetic = false;

  bool operator==(const BehaviorRow&) const = default;
};

// Immutable after construction. Rows are kept sorted by (pid, date).
class BehaviorTable {
 public:
  BehaviorTable() = default;

  // `columns` holds every value column including the target.
  BehaviorTable(std::vector<std::string> columns, std::string target_column,
                std::vector<BehaviorRow> rows)
      : columns_(std::move(columns)), target_(std::move(target_column)), rows_(std::move(rows)) {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (columns_[i] == "pid" || columns_[i] == "date") {
        throw Error(Errc::kInvalidTable, "reserved column name", columns_[i]);
      }
      if (!index_.emplace(columns_[i], i).second) {
        throw Error(Errc::kInvalidTable, "duplicate column", columns_[i]);
      }
    }
    auto t = index_.find(target_);
    if (t == index_.end()) throw Error(Errc::kMissingColumn, "target column not in table", target_);
    target_index_ = t->second;

    for (const auto& row : rows_) {
      if (row.pid.empty()) throw Error(Errc::kInvalidTable, "empty participant id");
      if (row.values.size() != columns_.size()) {
        throw Error(Errc::kInvalidTable, "row width does not match column count", row.pid);
      }
      const auto& tv = row.values[target_index_];
      if (tv && !(*tv >= 0.0 && *tv <= 1.0)) {
        throw Error(Errc::kInvalidTable, "target outside [0, 1]",
                    row.pid + " " + format_date(row.date));
      }
    }
    std::stable_sort(rows_.begin(), rows_.end(), [](const BehaviorRow& a, const BehaviorRow& b) {
      return std::tie(a.pid, a.date) < std::tie(b.pid, b.date);
    });
    for (std::size_t i = 1; i < rows_.size(); ++i) {
      if (rows_[i].pid == rows_[i - 1].pid && rows_[i].date == rows_[i - 1].date) {
        throw Error(Errc::kDuplicateKey, "duplicate (pid, date)",
                    rows_[i].pid + " " + format_date(rows_[i].date));
      }
    }
  }

  const std::vector<std::string>& columns() const { return columns_; }
  const std::string& target_column() const { return target_; }
  std::size_t target_index() const { return target_index_; }
  const std::vector<BehaviorRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  bool has_column(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  std::size_t column_index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw Error(Errc::kMissingColumn, "no such column", std::string(name));
    return it->second;
  }

  std::vector<std::string> feature_columns() const {
    std::vector<std::string> out;
    for (const auto& c : columns_) {
      if (c != target_) out.push_back(c);
    }
    return out;
  }

  std::optional<double> target(std::size_t row) const { return rows_[row].values[target_index_]; }

  // Contiguous row ranges, one per participant, in pid order.
  std::vector<std::span<const BehaviorRow>> participant_groups() const {
    std::vector<std::span<const BehaviorRow>> groups;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= rows_.size(); ++i) {
      if (i == rows_.size() || rows_[i].pid != rows_[start].pid) {
        groups.emplace_back(rows_.data() + start, i - start);
        start = i;
      }
    }
    return groups;
  }

  std::size_t missing_cells() const {
    std::size_t n = 0;
    for (const auto& r : rows_) {
      n += static_cast<std::size_t>(std::count(r.values.begin(), r.values.end(), std::nullopt));
    }
    return n;
  }

  bool operator==(const BehaviorTable& o) const {
    return columns_ == o.columns_ && target_ == o.target_ && rows_ == o.rows_;
  }

 private:
  std::vector<std::string> columns_;
  std::string target_;
  std::size_t target_index_ = 0;
  std::vector<BehaviorRow> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Same columns, different rows.
inline BehaviorTable with_rows(const BehaviorTable& like, std::vector<BehaviorRow> rows) {
  return BehaviorTable(like.columns(), like.target_column(), std::move(rows));
}

inline BehaviorTable drop_columns(const BehaviorTable& table, const std::set<std::string>& drop) {
  std::vector<std::size_t> keep;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < table.columns().size(); ++i) {
    if (!drop.count(table.columns()[i])) {
      keep.push_back(i);
      names.push_back(table.columns()[i]);
    }
  }
  std::vector<BehaviorRow> rows;
  rows.reserve(table.size());
  for (const auto& r : table.rows()) {
    BehaviorRow out{r.pid, r.date, {}, r.synthetic};
    out.values.reserve(keep.size());
    for (auto k : keep) out.values.push_back(r.values[k]);
    rows.push_back(std::move(out));
  }
  return BehaviorTable(std::move(names), table.target_column(), std::move(rows));
}

// ---------------------------------------------------------------------------
// CSV

namespace csv_detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline bool is_missing_token(std::string_view s) {
  s = trim(s);
  if (s.empty()) return true;
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return lower == "na" || lower == "n/a" || lower == "nan";
}

inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace csv_detail

inline constexpr std::string_view kSyntheticColumn = "synthetic";

// Parses CSV text. Columns listed in `schema` must be present; other value
// columns are accepted as-is. An optional `synthetic` 0/1 column is read into
// BehaviorRow::synthetic rather than treated as a feature.
inline BehaviorTable parse_csv(std::string_view text, std::span<const FeatureDomain> schema,
                               const std::string& target) {
  using namespace csv_detail;
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto end = nl == std::string_view::npos ? text.size() : nl;
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw Error(Errc::kMissingColumn, "empty file, no header row", "pid");

  auto header = split_line(lines[0]);
  for (auto& h : header) h = std::string(trim(h));
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  auto find = [&](std::string_view name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  auto pid_col = find("pid");
  if (!pid_col) throw Error(Errc::kMissingColumn, "missing column", "pid");
  auto date_col = find("date");
  if (!date_col) throw Error(Errc::kMissingColumn, "missing column", "date");
  if (!find(target)) throw Error(Errc::kMissingColumn, "missing column", target);
  for (const auto& d : schema) {
    if (!find(d.column)) throw Error(Errc::kMissingColumn, "missing column", d.column);
  }
  auto synthetic_col = find(kSyntheticColumn);

  std::vector<std::string> columns;
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i == *pid_col || i == *date_col || (synthetic_col && i == *synthetic_col)) continue;
    columns.push_back(header[i]);
    source.push_back(i);
  }

  std::vector<BehaviorRow> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (trim(lines[li]).empty()) continue;
    auto fields = split_line(lines[li]);
    const std::string where = "line " + std::to_string(li + 1);
    if (fields.size() != header.size()) {
      throw Error(Errc::kInvalidTable, "field count does not match header", where);
    }
    BehaviorRow row;
    row.pid = std::string(trim(fields[*pid_col]));
    auto date = parse_date(trim(fields[*date_col]));
    if (!date) throw Error(Errc::kInvalidTable, "bad date (expected YYYY-MM-DD)", where);
    row.date = *date;
    if (synthetic_col) {
      auto flag = trim(fields[*synthetic_col]);
      row.synthetic = flag == "1" || flag == "true";
    }
    row.values.reserve(source.size());
    for (std::size_t c = 0; c < source.size(); ++c) {
      const auto& cell = fields[source[c]];
      if (is_missing_token(cell)) {
        row.values.emplace_back(std::nullopt);
        continue;
      }
      auto v = parse_number(cell);
      if (!v) {
        throw Error(Errc::kUnparseableNumber, "cannot parse number", where + ", column " + columns[c]);
      }
      row.values.emplace_back(*v);
    }
    rows.push_back(std::move(row));
  }
  return BehaviorTable(std::move(columns), target, std::move(rows));
}

inline BehaviorTable load_csv(const std::filesystem::path& path, std::span<const FeatureDomain> schema,
                              const std::string& target) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, "cannot open file", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), schema, target);
}

// Values are written with 6 decimal places; missing cells are left empty.
inline std::string to_csv(const BehaviorTable& table) {
  using csv_detail::quote_if_needed;
  const bool any_synthetic = std::any_of(table.rows().begin(), table.rows().end(),
                                         [](const BehaviorRow& r) { return r.synthetic; });
  std::string out = "pid,date";
  for (const auto& c : table.columns()) out += "," + quote_if_needed(c);
  if (any_synthetic) out += ",synthetic";
  out += "\n";
  char buf[64];
  for (const auto& r : table.rows()) {
    out += quote_if_needed(r.pid);
    out += ",";
    out += format_date(r.date);
    for (const auto& v : r.values) {
      out += ",";
      if (v) {
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        // avoid "-0.000000"
        if (std::string_view(buf) == "-0.000000") out += "0.000000";
        else out += buf;
      }
    }
    if (any_synthetic) out += r.synthetic ? ",1" : ",0";
    out += "\n";
  }
  return out;
}

inline void write_csv(const BehaviorTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kIo, "cannot write file", path.string());
  out << to_csv(table);
}

}  // namespace somnus
