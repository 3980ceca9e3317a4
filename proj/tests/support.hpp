#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "somnus/somnus.hpp"

namespace somnus::test {

inline Date day(int y, unsigned m, unsigned d) {
  return Date{std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d}};
}

inline BehaviorRow row(std::string pid, Date date, std::vector<std::optional<double>> values) {
  return BehaviorRow{std::move(pid), date, std::move(values), false};
}

// One participant, consecutive days from 2020-01-01, columns a.. then target.
inline BehaviorTable single_pid_table(const std::vector<std::string>& features,
                                      const std::vector<std::vector<std::optional<double>>>& rows,
                                      const std::string& pid = "p1") {
  auto cols = features;
  cols.push_back("y");
  std::vector<BehaviorRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back(row(pid, day(2020, 1, 1) + std::chrono::days{static_cast<int>(i)}, rows[i]));
  }
  return BehaviorTable(cols, "y", std::move(out));
}

// Default fixture, generated once per test binary.
inline const BehaviorTable& default_fixture() {
  static const BehaviorTable t = generate_fixture(7, 60, 80, default_planted_signal());
  return t;
}

inline const StageResult& default_preprocessed() {
  static const StageResult r = run_pipeline(default_fixture(), PipelineConfig{});
  return r;
}

// Hand-built boosted model over three fixture columns: less screen time is
// worth +0.05, at least 8000 steps +0.02, and sleep duration (not adjustable)
// +0.04 above 400 minutes.
inline ModelArtifact toy_artifact(double base = 0.80) {
  auto stump = [](int feature, double threshold, double left, double right) {
    RegressionTree t;
    t.nodes = {TreeNode{feature, threshold, 1, 2, 0.0, 1.0, 10},
               TreeNode{-1, 0, -1, -1, left, 0, 5}, TreeNode{-1, 0, -1, -1, right, 0, 5}};
    return t;
  };
  ModelArtifact a;
  a.kind = ModelKind::kGbdt;
  a.base_prediction = base;
  a.feature_names = {"screen_minutes", "steps_total", "sleep_duration_minutes"};
  a.hyperparams.learning_rate = 1.0;
  a.trees = {stump(0, 200, 0.05, 0.0), stump(1, 8000, 0.0, 0.02), stump(2, 400, 0.0, 0.04)};
  a.importances = importance(a);
  return a;
}

inline UserSnapshot toy_snapshot(double screen = 300, double steps = 5000, double sleep = 380) {
  return UserSnapshot{"p1", {{"screen_minutes", screen}, {"steps_total", steps}, {"sleep_duration_minutes", sleep}},
                      UserSnapshot::Source::kRequestSupplied};
}

// gbdt-b on the top-20 features of the default fixture's training split.
inline const ModelArtifact& fixture_model() {
  static const ModelArtifact a = [] {
    const auto split = chronological_split(default_preprocessed().table, SplitSpec{});
    HyperParams hp;
    hp.l2_leaf_reg = 3.0;
    const auto all = to_matrix(split.train, split.train.feature_columns());
    const auto top = select_top_k(fit_gbdt(all, hp, 1).importances, 20);
    return fit_gbdt(to_matrix(split.train, top), hp, 2);
  }();
  return a;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("somnus_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace somnus::test
