#pragma once

// Generator-backed training-set augmentation. Each eligible participant's most
// recent rows are rendered as a pipe-delimited table prompt, a GeneratorClient
// answers with new rows, and rows that fail validation are rejected with a
// logged reason before the rest are appended as synthetic days.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "somnus/config.hpp"
#include "somnus/error.hpp"
#include "somnus/rng.hpp"
#include "somnus/tabular.hpp"

namespace somnus {

struct PromptWindow {
  std::string participant_id;
  std::vector<std::string> columns;        // features, then target last
  std::vector<std::vector<double>> rows;   // chronological

  void validate() const {
    if (rows.empty()) throw Error(Errc::kInvalidConfig, "prompt window needs at least one row");
    if (columns.empty()) throw Error(Errc::kInvalidConfig, "prompt window needs columns");
    for (const auto& r : rows) {
      if (r.size() != columns.size()) throw Error(Errc::kLengthMismatch, "window row width");
    }
  }
};

class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  // Must be safe to call concurrently.
  virtual std::string complete(const std::string& prompt) = 0;
};

namespace augment_detail {

inline constexpr std::string_view kTaskPrefix = "Task: generate ";
inline constexpr std::string_view kAdvicePrefix = "Advice request:";

inline std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  if (std::string_view(buf) == "-0.0000") return "0.0000";
  return buf;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto p = s.find(sep, start);
    out.push_back(s.substr(start, p == std::string_view::npos ? s.size() - start : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  auto out = split(text, '\n');
  for (auto& l : out) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  }
  return out;
}

}  // namespace augment_detail

inline std::string build_prompt(const PromptWindow& window, int requested) {
  using augment_detail::fmt4;
  window.validate();
  std::string out;
  out += std::string(augment_detail::kTaskPrefix) + std::to_string(requested) +
         " new daily rows for participant " + window.participant_id +
         ", continuing the behaviour and sleep efficiency pattern in the table below.\n";
  for (std::size_t c = 0; c < window.columns.size(); ++c) {
    out += (c ? "|" : "") + window.columns[c];
  }
  out += "\n";
  for (const auto& r : window.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) out += (c ? "|" : "") + fmt4(r[c]);
    out += "\n";
  }
  out += "Answer with exactly " + std::to_string(requested) +
         " pipe-delimited lines in the same column order and nothing else.\n";
  return out;
}

struct ParsedPrompt {
  int requested = 0;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

inline ParsedPrompt parse_prompt(std::string_view prompt) {
  using namespace augment_detail;
  auto malformed = [](const std::string& why) { return Error(Errc::kMalformedPrompt, why); };
  auto lines = lines_of(prompt);
  if (lines.empty() || lines[0].substr(0, kTaskPrefix.size()) != kTaskPrefix) {
    throw malformed("missing task line");
  }
  ParsedPrompt p;
  auto rest = lines[0].substr(kTaskPrefix.size());
  auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), p.requested);
  if (ec != std::errc() || p.requested < 1) throw malformed("missing requested row count");
  bool header_seen = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].find('|') == std::string_view::npos) continue;
    auto fields = split(lines[i], '|');
    if (!header_seen) {
      for (auto f : fields) p.columns.emplace_back(trim(f));
      header_seen = true;
      continue;
    }
    if (fields.size() != p.columns.size()) throw malformed("data line width differs from header");
    std::vector<double> row;
    for (auto f : fields) {
      f = trim(f);
      double v = 0;
      auto [q, e] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (e != std::errc() || q != f.data() + f.size() || !std::isfinite(v)) {
        throw malformed("non-numeric data cell");
      }
      row.push_back(v);
    }
    p.rows.push_back(std::move(row));
  }
  if (!header_seen || p.rows.empty()) throw malformed("no table in prompt");
  return p;
}

// Deterministic stand-in for a generator: each cell ~ N(window mean, window
// std) clamped to the window's [min, max]. About `malformed_rate` of the rows
// are deliberately broken (dropped field, non-numeric cell or out-of-range
// target) so the pruning path is exercised.
inline std::string mock_complete(std::uint64_t seed, const std::string& prompt,
                                 double malformed_rate = 0.1) {
  using augment_detail::fmt4;
  const auto p = parse_prompt(prompt);
  const std::size_t ncol = p.columns.size();
  std::vector<double> mean(ncol, 0.0), sd(ncol, 0.0), lo(ncol), hi(ncol);
  for (std::size_t c = 0; c < ncol; ++c) {
    lo[c] = hi[c] = p.rows[0][c];
    for (const auto& r : p.rows) {
      mean[c] += r[c];
      lo[c] = std::min(lo[c], r[c]);
      hi[c] = std::max(hi[c], r[c]);
    }
    mean[c] /= static_cast<double>(p.rows.size());
    for (const auto& r : p.rows) sd[c] += (r[c] - mean[c]) * (r[c] - mean[c]);
    sd[c] = std::sqrt(sd[c] / static_cast<double>(p.rows.size()));
  }

  Rng rng = make_rng(seed, "mock.complete", fnv1a64(prompt));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::string out;
  for (int r = 0; r < p.requested; ++r) {
    std::vector<std::string> cells(ncol);
    for (std::size_t c = 0; c < ncol; ++c) {
      const double v = sd[c] > 0 ? std::clamp(mean[c] + sd[c] * stdnorm(rng), lo[c], hi[c]) : mean[c];
      cells[c] = fmt4(v);
    }
    if (unit(rng) < malformed_rate) {
      switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
        case 0: cells.pop_back(); break;
        case 1: cells[std::uniform_int_distribution<std::size_t>(0, ncol - 1)(rng)] = "n/a"; break;
        default: cells.back() = "1.3000"; break;
      }
    }
    for (std::size_t c = 0; c < cells.size(); ++c) out += (c ? "|" : "") + cells[c];
    out += "\n";
  }
  return out;
}

inline std::string mock_advice(std::uint64_t seed, const std::string& prompt) {
  static const char* kLines[] = {
      "Keep a consistent wind-down routine and dim screens an hour before bed.",
      "A short walk in daylight tends to make the evening easier to settle into.",
      "Try to keep late calls brief so your mind has time to quiet down.",
      "Spending a little time outdoors or in green space can help you unwind.",
  };
  Rng rng = make_rng(seed, "mock.advice", fnv1a64(prompt));
  return kLines[std::uniform_int_distribution<int>(0, 3)(rng)];
}

class MockGenerator final : public GeneratorClient {
 public:
  explicit MockGenerator(std::uint64_t seed, double malformed_rate = 0.1)
      : seed_(seed), malformed_rate_(malformed_rate) {}

  std::string complete(const std::string& prompt) override {
    if (prompt.rfind(augment_detail::kAdvicePrefix, 0) == 0) return mock_advice(seed_, prompt);
    return mock_complete(seed_, prompt, malformed_rate_);
  }

 private:
  std::uint64_t seed_;
  double malformed_rate_;
};

enum class RejectReason { kWrongArity, kNonNumeric, kNonFinite, kTargetOutOfRange };

inline const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::kWrongArity: return "wrong-arity";
    case RejectReason::kNonNumeric: return "non-numeric";
    case RejectReason::kNonFinite: return "non-finite";
    case RejectReason::kTargetOutOfRange: return "target-out-of-range";
  }
  return "unknown";
}

struct Rejection {
  std::size_t index = 0;  // into parsed_rows
  RejectReason reason = RejectReason::kWrongArity;
};

struct GeneratedBatch {
  std::string participant_id;
  int requested = 0;
  std::string raw_text;
  std::vector<std::string> parsed_rows;
  std::vector<std::vector<double>> accepted_rows;
  std::vector<Rejection> rejected;
};

// Every non-blank line is a candidate row. A row is accepted iff it has
// exactly one numeric, finite field per column and the target lies in [0, 1].
inline GeneratedBatch validate_and_prune(const std::string& raw_text,
                                         const std::vector<std::string>& columns,
                                         const std::string& target_column) {
  using namespace augment_detail;
  const auto target_it = std::find(columns.begin(), columns.end(), target_column);
  if (target_it == columns.end()) throw Error(Errc::kMissingColumn, "target not in columns", target_column);
  const auto target_idx = static_cast<std::size_t>(target_it - columns.begin());

  GeneratedBatch batch;
  batch.raw_text = raw_text;
  for (auto line : lines_of(raw_text)) {
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t index = batch.parsed_rows.size();
    batch.parsed_rows.emplace_back(line);
    auto fields = split(line, '|');
    if (fields.size() != columns.size()) {
      batch.rejected.push_back({index, RejectReason::kWrongArity});
      continue;
    }
    std::vector<double> row;
    std::optional<RejectReason> reason;
    for (auto f : fields) {
      f = trim(f);
      if (!f.empty() && f.front() == '+') f.remove_prefix(1);
      double v = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || p != f.data() + f.size()) {
        reason = RejectReason::kNonNumeric;
        break;
      }
      if (!std::isfinite(v)) {
        reason = RejectReason::kNonFinite;
        break;
      }
      row.push_back(v);
    }
    if (!reason && !(row[target_idx] >= 0.0 && row[target_idx] <= 1.0)) {
      reason = RejectReason::kTargetOutOfRange;
    }
    if (reason) batch.rejected.push_back({index, *reason});
    else batch.accepted_rows.push_back(std::move(row));
  }
  return batch;
}

struct AugmentConfig {
  int window = 20;
  int per_pid = 5;
  // Feature columns shown to the generator; empty means every feature.
  std::vector<std::string> columns;
  // Per-participant last date of held-out (validation/test) data. Synthetic
  // dates start after it so they never fall inside a held-out range.
  std::map<std::string, Date> reserved_until;
  int max_concurrency = 4;
};

struct BatchLogEntry {
  std::string participant_id;
  bool skipped = false;
  std::string skip_reason;
  GeneratedBatch batch;
  std::size_t appended = 0;
  std::vector<Date> synthetic_dates;
};

struct BatchLog {
  std::vector<BatchLogEntry> entries;

  std::size_t eligible() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const auto& e) { return !e.skipped; }));
  }
  std::size_t appended() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.appended;
    return n;
  }
  std::size_t rejected() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.batch.rejected.size();
    return n;
  }

  json to_json() const {
    json list = json::array();
    for (const auto& e : entries) {
      json rejected = json::array();
      for (const auto& r : e.batch.rejected) {
        rejected.push_back({{"index", r.index}, {"reason", to_string(r.reason)}});
      }
      json dates = json::array();
      for (auto d : e.synthetic_dates) dates.push_back(format_date(d));
      list.push_back({{"participant_id", e.participant_id},
                      {"status", e.skipped ? "skipped" : "generated"},
                      {"skip_reason", e.skip_reason},
                      {"requested", e.batch.requested},
                      {"parsed", e.batch.parsed_rows.size()},
                      {"accepted", e.batch.accepted_rows.size()},
                      {"appended", e.appended},
                      {"rejected", rejected},
                      {"synthetic_dates", dates},
                      {"raw_text", e.batch.raw_text}});
    }
    return {{"eligible_participants", eligible()},
            {"appended_rows", appended()},
            {"rejected_rows", rejected()},
            {"entries", list}};
  }
};

struct AugmentResult {
  BehaviorTable table;
  BatchLog log;
};

// Appends generated rows to a cleaned training table. Original rows are never
// modified; synthetic rows carry the synthetic flag and leave columns that were
// not shown to the generator missing. Any client failure aborts the whole run.
inline AugmentResult augment_training_set(const BehaviorTable& train, GeneratorClient& client,
                                          const AugmentConfig& cfg) {
  if (cfg.window < 1 || cfg.per_pid < 1) throw Error(Errc::kInvalidConfig, "window and per_pid must be >= 1");
  std::vector<std::string> shown = cfg.columns;
  if (shown.empty()) shown = train.feature_columns();
  shown.erase(std::remove(shown.begin(), shown.end(), train.target_column()), shown.end());
  shown.push_back(train.target_column());
  std::vector<std::size_t> idx;
  for (const auto& c : shown) idx.push_back(train.column_index(c));

  const auto groups = train.participant_groups();
  std::vector<BatchLogEntry> entries(groups.size());
  std::vector<std::string> prompts(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto group = groups[g];
    auto& e = entries[g];
    e.participant_id = group[0].pid;
    if (group.size() < static_cast<std::size_t>(cfg.window)) {
      e.skipped = true;
      e.skip_reason = "only " + std::to_string(group.size()) + " rows, window needs " +
                      std::to_string(cfg.window);
      continue;
    }
    PromptWindow w{e.participant_id, shown, {}};
    for (std::size_t i = group.size() - static_cast<std::size_t>(cfg.window); i < group.size(); ++i) {
      std::vector<double> row;
      for (std::size_t c = 0; c < idx.size(); ++c) {
        const auto& v = group[i].values[idx[c]];
        if (!v) throw Error(Errc::kInvalidTable, "augmentation needs a table without missing values", shown[c]);
        row.push_back(*v);
      }
      w.rows.push_back(std::move(row));
    }
    prompts[g] = build_prompt(w, cfg.per_pid);
  }

  std::vector<std::string> answers(groups.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t g; (g = next.fetch_add(1)) < groups.size();) {
      if (entries[g].skipped) continue;
      try {
        answers[g] = client.complete(prompts[g]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, cfg.max_concurrency));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<BehaviorRow> rows = train.rows();
  const auto ncol = train.columns().size();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& e = entries[g];
    if (e.skipped) continue;
    const auto pid = e.participant_id;
    e.batch = validate_and_prune(answers[g], shown, train.target_column());
    e.batch.participant_id = pid;
    e.batch.requested = cfg.per_pid;
    Date last = groups[g].back().date;
    if (auto it = cfg.reserved_until.find(pid); it != cfg.reserved_until.end()) last = std::max(last, it->second);
    const auto take = std::min(e.batch.accepted_rows.size(), static_cast<std::size_t>(cfg.per_pid));
    for (std::size_t k = 0; k < take; ++k) {
      BehaviorRow r;
      r.pid = pid;
      r.date = last + std::chrono::days{static_cast<int>(k) + 1};
      r.values.assign(ncol, std::nullopt);
      for (std::size_t c = 0; c < idx.size(); ++c) r.values[idx[c]] = e.batch.accepted_rows[k][c];
      r.synthetic = true;
      e.synthetic_dates.push_back(r.date);
      rows.push_back(std::move(r));
    }
    e.appended = take;
  }
  return {with_rows(train, std::move(rows)), BatchLog{std::move(entries)}};
}

// Drops synthetic-flagged rows.
inline BehaviorTable strip_synthetic(const BehaviorTable& table) {
  std::vector<BehaviorRow> rows;
  for (const auto& r : table.rows()) {
    if (!r.synthetic) rows.push_back(r);
  }
  return with_rows(table, std::move(rows));
}

}  // namespace somnus
