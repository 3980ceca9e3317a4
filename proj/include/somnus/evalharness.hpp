#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "somnus/augment.hpp"
#include "somnus/config.hpp"
#include "somnus/ensemble.hpp"
#include "somnus/error.hpp"
#include "somnus/fixture.hpp"
#include "somnus/preprocess.hpp"
#include "somnus/rng.hpp"
#include "somnus/tabular.hpp"

namespace somnus {

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  int test_days = 14;
  double val_fraction_of_remainder = 0.25;

  void validate() const {
    if (test_days < 1) throw Error(Errc::kInvalidConfig, "test_days must be >= 1");
    if (!(val_fraction_of_remainder > 0 && val_fraction_of_remainder < 1)) {
      throw Error(Errc::kInvalidConfig, "val_fraction_of_remainder must be in (0, 1)");
    }
  }
};

struct SplitResult {
  BehaviorTable train;
  BehaviorTable val;
  BehaviorTable test;
  std::vector<std::string> excluded_from_test;  // pids with <= test_days rows
  std::map<std::string, Date> holdout_end;      // last val/test date per pid
};

// Per participant: the last test_days rows go to test, the final
// ceil(fraction * remainder) rows of what is left go to validation, and the
// rest to training. Participants with too few rows skip the test split.
inline SplitResult chronological_split(const BehaviorTable& table, const SplitSpec& spec) {
  spec.validate();
  if (table.empty()) throw Error(Errc::kEmptyTable, "cannot split an empty table");
  std::vector<BehaviorRow> train, val, test;
  SplitResult out;
  for (auto group : table.participant_groups()) {
    const std::size_t n = group.size();
    std::size_t m = n;
    if (n > static_cast<std::size_t>(spec.test_days)) {
      m = n - static_cast<std::size_t>(spec.test_days);
    } else {
      out.excluded_from_test.push_back(group[0].pid);
    }
    const auto nval = std::min(
        m, static_cast<std::size_t>(std::ceil(spec.val_fraction_of_remainder * static_cast<double>(m) - 1e-9)));
    const std::size_t ntrain = m - nval;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < ntrain) train.push_back(group[i]);
      else if (i < m) val.push_back(group[i]);
      else test.push_back(group[i]);
    }
    if (ntrain < n) out.holdout_end[group[0].pid] = group[n - 1].date;
  }
  out.train = with_rows(table, std::move(train));
  out.val = with_rows(table, std::move(val));
  out.test = with_rows(table, std::move(test));
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

namespace metric_detail {
inline void check(std::span<const double> pred, std::span<const double> actual) {
  if (pred.size() != actual.size() || pred.empty()) {
    throw Error(Errc::kLengthMismatch, "prediction and target lengths must be equal and nonzero");
  }
}
}  // namespace metric_detail

inline double rmse(std::span<const double> pred, std::span<const double> actual) {
  metric_detail::check(pred, actual);
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - actual[i]) * (pred[i] - actual[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double mae(std::span<const double> pred, std::span<const double> actual) {
  metric_detail::check(pred, actual);
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - actual[i]);
  return s / static_cast<double>(pred.size());
}

// 1 - SSres/SStot. Zero when both sums vanish; DegenerateTarget when only
// SStot does.
inline double r2(std::span<const double> pred, std::span<const double> actual) {
  metric_detail::check(pred, actual);
  double mean = 0;
  for (double a : actual) mean += a;
  mean /= static_cast<double>(actual.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ss_res += (actual[i] - pred[i]) * (actual[i] - pred[i]);
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
  }
  if (ss_tot == 0) {
    if (ss_res == 0) return 0.0;
    throw Error(Errc::kDegenerateTarget, "target has zero variance but residuals are nonzero");
  }
  return 1.0 - ss_res / ss_tot;
}

// ---------------------------------------------------------------------------
// Experiment

inline const std::vector<std::string>& feature_set_names() {
  static const std::vector<std::string> k = {"hand-picked", "top-k", "top-k+G"};
  return k;
}

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> k = {"mean", "forest", "gbdt-a", "gbdt-b"};
  return k;
}

struct ExperimentConfig {
  std::uint64_t seed = 7;
  int participants = 60;
  int days = 80;
  PlantedSignal planted = default_planted_signal();
  PipelineConfig pipeline;
  SplitSpec split;
  std::size_t top_k = 20;
  std::vector<std::string> hand_picked;  // empty: the 66 fixture columns
  HyperParams forest = [] {
    HyperParams h;
    h.max_depth = 6;
    h.min_samples_leaf = 5;
    return h;
  }();
  HyperParams gbdt_a = [] {
    HyperParams h;
    h.l2_leaf_reg = 1.0;
    return h;
  }();
  HyperParams gbdt_b = [] {
    HyperParams h;
    h.l2_leaf_reg = 3.0;
    return h;
  }();
  bool augment = true;
  int augment_window = 20;
  int augment_per_pid = 5;
  double mock_malformed_rate = 0.1;
  bool tune_on_validation = false;

  std::vector<std::string> hand_picked_or_default() const {
    if (!hand_picked.empty()) return hand_picked;
    std::vector<std::string> out;
    for (const auto& d : fixture_schema()) out.push_back(d.column);
    return out;
  }

  static ExperimentConfig from_json(const json& root) {
    ExperimentConfig c;
    if (!root.is_object()) return c;
    expect_known_keys(root, {"seed", "fixture", "pipeline", "split", "models", "augment", "service"},
                      "root");
    c.seed = config_value(root, "seed", c.seed);
    const auto& fx = config_section(root, "fixture");
    expect_known_keys(fx, {"participants", "days", "noise_std", "missing_fraction", "outlier_fraction"},
                      "fixture");
    c.participants = config_value(fx, "participants", c.participants);
    c.days = config_value(fx, "days", c.days);
    c.planted.noise_std = config_value(fx, "noise_std", c.planted.noise_std);
    c.planted.missing_fraction = config_value(fx, "missing_fraction", c.planted.missing_fraction);
    c.planted.outlier_fraction = config_value(fx, "outlier_fraction", c.planted.outlier_fraction);
    c.pipeline = PipelineConfig::from_json(config_section(root, "pipeline"));
    const auto& sp = config_section(root, "split");
    expect_known_keys(sp, {"test_days", "val_fraction_of_remainder"}, "split");
    c.split.test_days = config_value(sp, "test_days", c.split.test_days);
    c.split.val_fraction_of_remainder =
        config_value(sp, "val_fraction_of_remainder", c.split.val_fraction_of_remainder);
    c.split.validate();
    const auto& md = config_section(root, "models");
    expect_known_keys(md, {"top_k", "hand_picked", "tune_on_validation", "forest", "gbdt_a", "gbdt_b"},
                      "models");
    c.top_k = config_value(md, "top_k", c.top_k);
    c.hand_picked = config_value(md, "hand_picked", c.hand_picked);
    c.tune_on_validation = config_value(md, "tune_on_validation", c.tune_on_validation);
    c.forest = HyperParams::from_json(config_section(md, "forest"), c.forest);
    c.gbdt_a = HyperParams::from_json(config_section(md, "gbdt_a"), c.gbdt_a);
    c.gbdt_b = HyperParams::from_json(config_section(md, "gbdt_b"), c.gbdt_b);
    const auto& au = config_section(root, "augment");
    expect_known_keys(au, {"enabled", "window", "per_pid", "malformed_rate", "generator", "live"},
                      "augment");
    c.augment = config_value(au, "enabled", c.augment);
    c.augment_window = config_value(au, "window", c.augment_window);
    c.augment_per_pid = config_value(au, "per_pid", c.augment_per_pid);
    c.mock_malformed_rate = config_value(au, "malformed_rate", c.mock_malformed_rate);
    if (c.top_k < 1) throw Error(Errc::kInvalidConfig, "top_k must be >= 1");
    return c;
  }

  json to_json() const {
    return {{"seed", seed},
            {"fixture", {{"participants", participants}, {"days", days},
                         {"noise_std", planted.noise_std},
                         {"missing_fraction", planted.missing_fraction},
                         {"outlier_fraction", planted.outlier_fraction}}},
            {"pipeline", pipeline.to_json()},
            {"split", {{"test_days", split.test_days},
                       {"val_fraction_of_remainder", split.val_fraction_of_remainder}}},
            {"models", {{"top_k", top_k}, {"hand_picked", hand_picked_or_default()},
                        {"tune_on_validation", tune_on_validation}, {"forest", forest.to_json()},
                        {"gbdt_a", gbdt_a.to_json()}, {"gbdt_b", gbdt_b.to_json()}}},
            {"augment", {{"enabled", augment}, {"window", augment_window}, {"per_pid", augment_per_pid},
                         {"malformed_rate", mock_malformed_rate}}}};
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
  }
};

struct EvalCell {
  std::string feature_set;
  std::string model;
  double rmse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
  bool operator==(const EvalCell&) const = default;
};

struct EvalReport {
  std::vector<EvalCell> cells;  // feature-set major, model minor
  json metadata = json::object();

  const EvalCell& cell(const std::string& feature_set, const std::string& model) const {
    for (const auto& c : cells) {
      if (c.feature_set == feature_set && c.model == model) return c;
    }
    throw Error(Errc::kBadRequest, "no such report cell", feature_set + "/" + model);
  }

  std::vector<std::string> feature_sets() const {
    std::vector<std::string> out;
    for (const auto& c : cells) {
      if (std::find(out.begin(), out.end(), c.feature_set) == out.end()) out.push_back(c.feature_set);
    }
    return out;
  }

  json to_json() const {
    json list = json::array();
    for (const auto& c : cells) {
      list.push_back({{"feature_set", c.feature_set}, {"model", c.model},
                      {"rmse", c.rmse}, {"mae", c.mae}, {"r2", c.r2}});
    }
    return {{"metadata", metadata}, {"cells", list}};
  }

  static EvalReport from_json(const json& j) {
    try {
      EvalReport r;
      r.metadata = j.at("metadata");
      for (const auto& c : j.at("cells")) {
        r.cells.push_back({c.at("feature_set").get<std::string>(), c.at("model").get<std::string>(),
                           c.at("rmse").get<double>(), c.at("mae").get<double>(),
                           c.at("r2").get<double>()});
      }
      return r;
    } catch (const json::exception& e) {
      throw Error(Errc::kBadRequest, "not an evaluation report", e.what());
    }
  }
};

namespace eval_detail {

inline std::vector<double> predict_all(const ModelArtifact& a, const Matrix& m) {
  return a.predict_matrix(m);
}

inline ModelArtifact fit_named(const std::string& model, const Matrix& m, const ExperimentConfig& cfg,
                               const HyperParams* override_hp = nullptr) {
  const auto idx = static_cast<std::uint64_t>(
      std::find(model_names().begin(), model_names().end(), model) - model_names().begin());
  const auto seed = derive_seed(cfg.seed, "experiment.model", idx);
  if (model == "mean") return fit_mean(m);
  if (model == "forest") return fit_forest(m, override_hp ? *override_hp : cfg.forest, seed);
  if (model == "gbdt-a") return fit_gbdt(m, override_hp ? *override_hp : cfg.gbdt_a, seed);
  if (model == "gbdt-b") return fit_gbdt(m, override_hp ? *override_hp : cfg.gbdt_b, seed);
  throw Error(Errc::kInvalidConfig, "unknown model", model);
}

// Small grid over depth (and learning rate for boosting), scored on validation.
inline HyperParams tune(const std::string& model, const Matrix& train, const Matrix& val,
                        const ExperimentConfig& cfg) {
  HyperParams base = model == "forest" ? cfg.forest : model == "gbdt-a" ? cfg.gbdt_a : cfg.gbdt_b;
  HyperParams best = base;
  double best_rmse = std::numeric_limits<double>::infinity();
  const std::vector<double> rates =
      model == "forest" ? std::vector<double>{base.learning_rate} : std::vector<double>{0.05, 0.1};
  for (int depth : {3, 4, 6}) {
    for (double lr : rates) {
      HyperParams hp = base;
      hp.max_depth = depth;
      hp.learning_rate = lr;
      auto a = fit_named(model, train, cfg, &hp);
      const double e = rmse(a.predict_matrix(val), val.y());
      if (e < best_rmse) {
        best_rmse = e;
        best = hp;
      }
    }
  }
  return best;
}

}  // namespace eval_detail

struct ExperimentOutputs {
  EvalReport report;
  PreprocessReport preprocess;
  std::vector<std::string> top_k_features;
  std::map<std::string, double> ranker_importances;
  std::optional<BatchLog> augment_log;
  SplitResult split;
  BehaviorTable augmented_train;
};

// preprocess -> split -> rank on train -> (optional) augment train -> fit the
// four models on each feature set -> test metrics.
inline ExperimentOutputs run_experiment_detailed(const BehaviorTable& raw, const ExperimentConfig& cfg,
                                                 GeneratorClient* client) {
  ExperimentOutputs out;
  auto pre = run_pipeline(raw, cfg.pipeline);
  out.preprocess = pre.report;
  out.split = chronological_split(pre.table, cfg.split);
  const auto& split = out.split;
  if (split.train.empty() || split.test.empty()) {
    throw Error(Errc::kEmptyTable, "train or test split is empty");
  }

  std::vector<std::string> hand;
  for (const auto& f : cfg.hand_picked_or_default()) {
    if (pre.table.has_column(f) && f != pre.table.target_column()) hand.push_back(f);
  }
  if (pre.table.has_column(cfg.pipeline.lag_feature_name) &&
      std::find(hand.begin(), hand.end(), cfg.pipeline.lag_feature_name) == hand.end()) {
    hand.push_back(cfg.pipeline.lag_feature_name);
  }
  if (hand.empty()) throw Error(Errc::kInvalidConfig, "no hand-picked feature survived preprocessing");

  const Matrix train_hand = to_matrix(split.train, hand);
  auto ranker = fit_gbdt(train_hand, cfg.gbdt_b, derive_seed(cfg.seed, "experiment.ranker"));
  out.ranker_importances = ranker.importances;
  out.top_k_features = select_top_k(ranker.importances, cfg.top_k);
  const auto& topk = out.top_k_features;

  out.augmented_train = split.train;
  if (cfg.augment) {
    std::unique_ptr<GeneratorClient> fallback;
    if (!client) {
      fallback = std::make_unique<MockGenerator>(derive_seed(cfg.seed, "experiment.mock"),
                                                 cfg.mock_malformed_rate);
      client = fallback.get();
    }
    AugmentConfig ac;
    ac.window = cfg.augment_window;
    ac.per_pid = cfg.augment_per_pid;
    ac.columns = topk;
    ac.reserved_until = split.holdout_end;
    auto aug = augment_training_set(split.train, *client, ac);
    out.augmented_train = std::move(aug.table);
    out.augment_log = std::move(aug.log);
  }

  struct SetSpec {
    std::string name;
    std::vector<std::string> features;
    const BehaviorTable* train;
  };
  std::vector<SetSpec> sets = {{"hand-picked", hand, &split.train}, {"top-k", topk, &split.train}};
  if (cfg.augment) sets.push_back({"top-k+G", topk, &out.augmented_train});

  std::vector<std::future<EvalCell>> jobs;
  for (const auto& s : sets) {
    for (const auto& model : model_names()) {
      jobs.push_back(std::async(std::launch::async, [&, s, model] {
        const Matrix tr = to_matrix(*s.train, s.features);
        const Matrix te = to_matrix(split.test, s.features);
        ModelArtifact a;
        if (cfg.tune_on_validation && model != "mean" && !split.val.empty()) {
          const Matrix va = to_matrix(split.val, s.features);
          const auto hp = eval_detail::tune(model, tr, va, cfg);
          a = eval_detail::fit_named(model, tr, cfg, &hp);
        } else {
          a = eval_detail::fit_named(model, tr, cfg);
        }
        const auto pred = a.predict_matrix(te);
        return EvalCell{s.name, model, rmse(pred, te.y()), mae(pred, te.y()), r2(pred, te.y())};
      }));
    }
  }
  for (auto& j : jobs) out.report.cells.push_back(j.get());

  json counts = json::object();
  for (const auto& s : sets) counts[s.name] = s.features.size();
  auto& md = out.report.metadata;
  md["seed"] = cfg.seed;
  md["config_hash"] = cfg.hash();
  md["rows"] = {{"input", raw.size()},
                {"preprocessed", pre.table.size()},
                {"train", split.train.size()},
                {"val", split.val.size()},
                {"test", split.test.size()},
                {"synthetic", out.augmented_train.size() - split.train.size()}};
  md["feature_counts"] = counts;
  md["top_k_features"] = topk;
  md["excluded_from_test"] = split.excluded_from_test;
  md["augmented"] = cfg.augment;
  if (out.augment_log) {
    md["augmentation"] = {{"eligible_participants", out.augment_log->eligible()},
                          {"appended_rows", out.augment_log->appended()},
                          {"rejected_rows", out.augment_log->rejected()}};
  }
  return out;
}

inline EvalReport run_experiment(const BehaviorTable& raw, const ExperimentConfig& cfg,
                                 GeneratorClient* client = nullptr) {
  return run_experiment_detailed(raw, cfg, client).report;
}

// ---------------------------------------------------------------------------
// Rendering

enum class ReportFormat { kMarkdown, kCsv, kJson };

namespace eval_detail {

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string set_label(const std::string& set, const json& md) {
  std::string label = set == "hand-picked" ? "Hand-picked" : set == "top-k" ? "Top-k" : "Top-k+G";
  if (md.contains("feature_counts") && md["feature_counts"].contains(set)) {
    label += " (" + std::to_string(md["feature_counts"][set].get<std::size_t>()) + ")";
  }
  return label;
}

}  // namespace eval_detail

inline std::string render_report(const EvalReport& report, ReportFormat format) {
  using namespace eval_detail;
  switch (format) {
    case ReportFormat::kJson:
      return report.to_json().dump(2) + "\n";
    case ReportFormat::kCsv: {
      std::string out = "feature_set,model,rmse,mae,r2\n";
      for (const auto& c : report.cells) {
        out += c.feature_set + "," + c.model + "," + exact(c.rmse) + "," + exact(c.mae) + "," +
               exact(c.r2) + "\n";
      }
      return out;
    }
    case ReportFormat::kMarkdown: {
      const auto sets = report.feature_sets();
      std::string out = "| Features (N) |";
      for (const auto& s : sets) out += " " + set_label(s, report.metadata) + " | | |";
      out += "\n|:--|";
      for (std::size_t i = 0; i < sets.size(); ++i) out += "--:|--:|--:|";
      out += "\n| Model/Metric |";
      for (std::size_t i = 0; i < sets.size(); ++i) out += " RMSE | MAE | R2 |";
      out += "\n";
      for (const auto& model : model_names()) {
        out += "| " + model + " |";
        for (const auto& s : sets) {
          const auto& c = report.cell(s, model);
          out += " " + fixed(c.rmse, 4) + " | " + fixed(c.mae, 4) + " | " + fixed(c.r2, 4) + " |";
        }
        out += "\n";
      }
      const auto& md = report.metadata;
      if (md.contains("seed") && md.contains("config_hash")) {
        out += "\nseed " + md["seed"].dump() + ", config " + md["config_hash"].get<std::string>() + "\n";
      }
      return out;
    }
  }
  return {};
}

inline std::vector<EvalCell> parse_report_csv(const std::string& text) {
  std::vector<EvalCell> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "feature_set,model,rmse,mae,r2") throw Error(Errc::kBadRequest, "bad report csv header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw Error(Errc::kBadRequest, "bad report csv row", line);
    out.push_back({f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
  }
  return out;
}

}  // namespace somnus
