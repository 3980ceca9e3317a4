#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace somnus;
using test::day;

namespace {

BehaviorTable participant_rows(const std::vector<std::pair<std::string, int>>& counts) {
  std::vector<BehaviorRow> rows;
  for (const auto& [pid, n] : counts) {
    for (int i = 0; i < n; ++i) {
      rows.push_back(test::row(pid, day(2018, 4, 2) + std::chrono::days{i}, {1.0 * i, 0.5}));
    }
  }
  return BehaviorTable({"x", "y"}, "y", rows);
}

// Direct formulas, written independently of the library.
struct Oracle {
  double rmse, mae, r2;
};

Oracle oracle(const std::vector<double>& p, const std::vector<double>& a) {
  const double n = static_cast<double>(p.size());
  long double se = 0, ae = 0, mean = 0, tot = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    se += (long double)(p[i] - a[i]) * (p[i] - a[i]);
    ae += std::fabs(p[i] - a[i]);
    mean += a[i];
  }
  mean /= n;
  for (double v : a) tot += (v - mean) * (v - mean);
  return {static_cast<double>(std::sqrt(se / n)), static_cast<double>(ae / n), static_cast<double>(1 - se / tot)};
}

const ExperimentOutputs& default_run() {
  static const ExperimentOutputs out = run_experiment_detailed(test::default_fixture(), ExperimentConfig{}, nullptr);
  return out;
}

}  // namespace

TEST(Split, SeventyEightRows) {
  const auto s = chronological_split(participant_rows({{"a", 78}}), SplitSpec{});
  EXPECT_EQ(s.train.size(), 48u);
  EXPECT_EQ(s.val.size(), 16u);
  EXPECT_EQ(s.test.size(), 14u);
  EXPECT_LT(s.train.rows().back().date, s.val.rows().front().date);
  EXPECT_LT(s.val.rows().back().date, s.test.rows().front().date);
}

TEST(Split, ShortParticipantSkipsTest) {
  const auto s = chronological_split(participant_rows({{"a", 78}, {"b", 14}}), SplitSpec{});
  EXPECT_EQ(s.excluded_from_test, std::vector<std::string>{"b"});
  std::size_t b_rows = 0;
  for (const auto* part : {&s.train, &s.val}) {
    for (const auto& r : part->rows()) b_rows += r.pid == "b";
  }
  EXPECT_EQ(b_rows, 14u);
  for (const auto& r : s.test.rows()) EXPECT_NE(r.pid, "b");
}

TEST(Split, PartitionAndPerParticipantOrderOnFixture) {
  const auto& t = test::default_preprocessed().table;
  const auto s = chronological_split(t, SplitSpec{});
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), t.size());
  std::vector<BehaviorRow> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->rows().begin(), part->rows().end());
  EXPECT_EQ(with_rows(t, all), t);

  std::map<std::string, Date> train_max, val_min, val_max, test_min;
  for (const auto& r : s.train.rows()) train_max[r.pid] = std::max(train_max[r.pid], r.date);
  for (const auto& r : s.val.rows()) {
    val_min.try_emplace(r.pid, r.date);
    val_max[r.pid] = std::max(val_max[r.pid], r.date);
  }
  for (const auto& r : s.test.rows()) test_min.try_emplace(r.pid, r.date);
  for (const auto& [pid, d] : val_min) EXPECT_LT(train_max[pid], d);
  for (const auto& [pid, d] : test_min) EXPECT_LT(val_max[pid], d);
  for (auto group : s.test.participant_groups()) EXPECT_EQ(group.size(), 14u);
}

TEST(Split, ErrorsAndSpecValidation) {
  EXPECT_THROW(chronological_split(BehaviorTable({"x", "y"}, "y", {}), SplitSpec{}), Error);
  EXPECT_THROW(chronological_split(participant_rows({{"a", 3}}), SplitSpec{0, 0.25}), Error);
  EXPECT_THROW(chronological_split(participant_rows({{"a", 3}}), SplitSpec{14, 1.0}), Error);
}

TEST(Metrics, PerfectPrediction) {
  const std::vector<double> a = {0.1, 0.5, 0.9};
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_EQ(mae(a, a), 0.0);
  EXPECT_EQ(r2(a, a), 1.0);
}

TEST(Metrics, ReferenceValues) {
  const std::vector<double> p = {0, 0}, a = {3, 4};
  EXPECT_NEAR(rmse(p, a), std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(rmse(p, a), 3.53553, 1e-5);
  EXPECT_DOUBLE_EQ(mae(p, a), 3.5);
}

TEST(Metrics, MatchDirectFormulasOnRandomVectors) {
  std::mt19937_64 rng(1000);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 200;
    std::vector<double> p(n), a(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = u(rng), a[i] = u(rng);
    const auto o = oracle(p, a);
    EXPECT_NEAR(rmse(p, a), o.rmse, 1e-12);
    EXPECT_NEAR(mae(p, a), o.mae, 1e-12);
    EXPECT_NEAR(r2(p, a), o.r2, 1e-12);
  }
}

TEST(Metrics, Errors) {
  const std::vector<double> one = {1.0}, two = {1.0, 2.0}, none;
  EXPECT_THROW(rmse(one, two), Error);
  EXPECT_THROW(mae(none, none), Error);
  try {
    r2(std::vector<double>{0.1, 0.2}, std::vector<double>{0.5, 0.5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDegenerateTarget);
  }
  EXPECT_EQ(r2(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}), 0.0);
}

TEST(Experiment, GridShapeAndMetadata) {
  const auto& r = default_run().report;
  ASSERT_EQ(r.cells.size(), 12u);
  EXPECT_EQ(r.feature_sets(), feature_set_names());
  for (const auto& fs : feature_set_names()) {
    for (const auto& m : model_names()) EXPECT_NO_THROW(r.cell(fs, m));
  }
  EXPECT_EQ(r.metadata["config_hash"], ExperimentConfig{}.hash());
  EXPECT_EQ(r.metadata["feature_counts"]["top-k"], 20);
  EXPECT_EQ(r.metadata["rows"]["synthetic"], default_run().augment_log->appended());
}

TEST(Experiment, BaselineTracksTestSpread) {
  const auto& out = default_run();
  std::vector<double> y;
  for (std::size_t i = 0; i < out.split.test.size(); ++i) y.push_back(*out.split.test.target(i));
  double m = 0, v = 0;
  for (double x : y) m += x;
  m /= static_cast<double>(y.size());
  for (double x : y) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / static_cast<double>(y.size()));
  const auto& base = out.report.cell("top-k", "mean");
  EXPECT_LT(std::abs(base.rmse - sd) / sd, 0.10);
  EXPECT_GT(base.r2, -0.2);
  EXPECT_LT(base.r2, 0.05);
}

TEST(Experiment, LearnedModelsBeatBaseline) {
  const auto& r = default_run().report;
  for (const std::string fs : {"top-k", "top-k+G"}) {
    const double base = r.cell(fs, "mean").rmse;
    for (const std::string m : {"forest", "gbdt-a", "gbdt-b"}) EXPECT_LT(r.cell(fs, m).rmse, base) << fs << " " << m;
  }
  EXPECT_LE(r.cell("top-k", "gbdt-b").rmse, r.cell("hand-picked", "gbdt-b").rmse);
}

TEST(Experiment, AugmentedSetOnlyAddsTrainingRows) {
  const auto& out = default_run();
  EXPECT_EQ(strip_synthetic(out.augmented_train), out.split.train);
  // both top-k groups are scored on the same test rows
  const auto te = to_matrix(out.split.test, out.top_k_features);
  const auto mean_b = fit_mean(to_matrix(out.split.train, out.top_k_features));
  EXPECT_DOUBLE_EQ(out.report.cell("top-k", "mean").rmse, rmse(mean_b.predict_matrix(te), te.y()));
}

TEST(Experiment, ByteIdenticalAcrossRuns) {
  ExperimentConfig cfg;
  cfg.participants = 12;
  cfg.days = 40;
  cfg.top_k = 8;
  for (auto* hp : {&cfg.forest, &cfg.gbdt_a, &cfg.gbdt_b}) hp->n_trees = 20;
  const auto raw = generate_fixture(cfg.seed, cfg.participants, cfg.days, cfg.planted);
  const auto a = run_experiment(raw, cfg);
  const auto b = run_experiment(raw, cfg);
  for (auto f : {ReportFormat::kMarkdown, ReportFormat::kCsv, ReportFormat::kJson}) {
    EXPECT_EQ(render_report(a, f), render_report(b, f));
  }
}

TEST(Experiment, NoAugmentDropsTheThirdGroup) {
  ExperimentConfig cfg;
  cfg.participants = 10;
  cfg.days = 40;
  cfg.augment = false;
  for (auto* hp : {&cfg.forest, &cfg.gbdt_a, &cfg.gbdt_b}) hp->n_trees = 10;
  const auto r = run_experiment(generate_fixture(cfg.seed, cfg.participants, cfg.days, cfg.planted), cfg);
  EXPECT_EQ(r.cells.size(), 8u);
  EXPECT_EQ(render_report(r, ReportFormat::kMarkdown).find("Top-k+G"), std::string::npos);
}

TEST(Experiment, ValidationTuningStaysOnTrainAndVal) {
  ExperimentConfig cfg;
  cfg.participants = 10;
  cfg.days = 40;
  cfg.augment = false;
  cfg.tune_on_validation = true;
  for (auto* hp : {&cfg.forest, &cfg.gbdt_a, &cfg.gbdt_b}) hp->n_trees = 10;
  const auto raw = generate_fixture(cfg.seed, cfg.participants, cfg.days, cfg.planted);
  const auto a = run_experiment(raw, cfg);
  EXPECT_EQ(a.cells.size(), 8u);
  EXPECT_EQ(render_report(a, ReportFormat::kCsv), render_report(run_experiment(raw, cfg), ReportFormat::kCsv));
}

TEST(Render, MarkdownHeadersAndRows) {
  const auto md = render_report(default_run().report, ReportFormat::kMarkdown);
  for (const char* h : {"Hand-picked", "Top-k", "Top-k+G", "RMSE", "MAE", "R2"}) EXPECT_NE(md.find(h), std::string::npos) << h;
  for (const auto& m : model_names()) EXPECT_NE(md.find("| " + m + " |"), std::string::npos) << m;
}

TEST(Render, CsvParsesBackToTheSameCells) {
  const auto& r = default_run().report;
  const auto cells = parse_report_csv(render_report(r, ReportFormat::kCsv));
  EXPECT_EQ(cells, r.cells);
}

TEST(Render, JsonCarriesConfigHashAndRoundTrips) {
  const auto& r = default_run().report;
  const auto j = json::parse(render_report(r, ReportFormat::kJson));
  EXPECT_TRUE(j["metadata"].contains("config_hash"));
  const auto back = EvalReport::from_json(j);
  EXPECT_EQ(back.cells, r.cells);
  EXPECT_EQ(render_report(back, ReportFormat::kMarkdown), render_report(r, ReportFormat::kMarkdown));
  EXPECT_THROW(EvalReport::from_json(json{{"cells", 1}}), Error);
}

TEST(Config, HashChangesWithConfig) {
  ExperimentConfig a, b;
  b.gbdt_b.l2_leaf_reg = 2.0;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash(), ExperimentConfig{}.hash());
  const auto parsed = ExperimentConfig::from_json(a.to_json());
  EXPECT_EQ(parsed.hash(), a.hash());
}
