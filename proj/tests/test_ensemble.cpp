#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace somnus;

namespace {

struct Split {
  int feature = -1;
  double threshold = 0;
  double gain = 0;
};

double sse(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

// Every (feature, midpoint) candidate, scored by direct SSE reduction. Among
// candidates within `band` of the best, the lowest feature then threshold wins.
Split brute_force(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                  const std::vector<std::size_t>& rows, int min_leaf, double band) {
  std::vector<double> parent;
  for (auto r : rows) parent.push_back(y[r]);
  const double base = sse(parent);
  std::vector<Split> all;
  for (std::size_t f = 0; f < x[0].size(); ++f) {
    std::vector<double> vals;
    for (auto r : rows) vals.push_back(x[r][f]);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      const double thr = (vals[k] + vals[k + 1]) / 2;
      std::vector<double> l, r;
      for (auto i : rows) (x[i][f] <= thr ? l : r).push_back(y[i]);
      if (static_cast<int>(l.size()) < min_leaf || static_cast<int>(r.size()) < min_leaf) continue;
      all.push_back({static_cast<int>(f), thr, base - sse(l) - sse(r)});
    }
  }
  Split best;
  double top = -1;
  for (const auto& s : all) top = std::max(top, s.gain);
  if (top <= band) return best;
  for (const auto& s : all) {
    if (s.gain < top - band) continue;
    if (best.feature < 0 || s.feature < best.feature ||
        (s.feature == best.feature && s.threshold < best.threshold)) {
      best = s;
    }
  }
  return best;
}

Matrix step_matrix() {
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (int i = 0; i < 10; ++i) {
    rows.push_back({static_cast<double>(i)});
    y.push_back(i >= 5 ? 1.0 : 0.0);
  }
  return Matrix::from_rows({"x"}, rows, y);
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t n, std::size_t d, std::size_t informative = 1) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      rows[i][j] = u(rng);
      if (j < informative) s += rows[i][j];
    }
    y[i] = std::clamp(0.5 + 0.3 * (s / informative - 0.5) + 0.05 * (u(rng) - 0.5), 0.0, 1.0);
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("f" + std::to_string(j));
  return Matrix::from_rows(names, rows, y);
}

HyperParams small_gbdt() {
  HyperParams hp;
  hp.n_trees = 30;
  hp.max_depth = 3;
  hp.min_samples_leaf = 3;
  return hp;
}

}  // namespace

TEST(Matrix, RejectsBadInput) {
  EXPECT_THROW(Matrix({"a"}, {}, {}), Error);
  EXPECT_THROW(Matrix({}, {}, {0.5}), Error);
  EXPECT_THROW(Matrix({"a"}, {std::nan("")}, {0.5}), Error);
  EXPECT_THROW(Matrix({"a"}, {1.0}, {1.5}), Error);
  EXPECT_THROW(Matrix({"a", "b"}, {1.0}, {0.5}), Error);
}

TEST(Tree, StepFunctionSplitsAtFourPointFive) {
  const auto m = step_matrix();
  Rng rng(1);
  auto t = fit_tree(m, m.y(), TreeParams{1, 1, 0.0, 0}, rng);
  ASSERT_EQ(t.nodes.size(), 3u);
  EXPECT_EQ(t.nodes[0].feature, 0);
  EXPECT_DOUBLE_EQ(t.nodes[0].threshold, 4.5);
  EXPECT_DOUBLE_EQ(t.nodes[t.nodes[0].left].value, 0.0);
  EXPECT_DOUBLE_EQ(t.nodes[t.nodes[0].right].value, 1.0);

  std::vector<std::vector<double>> x;
  std::vector<double> y(m.y().begin(), m.y().end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < m.n(); ++i) x.push_back(m.row(i)), rows.push_back(i);
  const auto oracle = brute_force(x, y, rows, 1, 1e-12);
  EXPECT_EQ(oracle.feature, 0);
  EXPECT_DOUBLE_EQ(oracle.threshold, 4.5);
}

TEST(Tree, ConstantResidualsGiveOneLeaf) {
  const auto m = step_matrix();
  std::vector<double> r(m.n(), 0.3);
  Rng rng(1);
  auto t = fit_tree(m, r, TreeParams{3, 1, 0.0, 0}, rng);
  ASSERT_EQ(t.nodes.size(), 1u);
  EXPECT_NEAR(t.nodes[0].value, 0.3, 1e-15);
}

TEST(Tree, MinSamplesLeafOfNGivesMean) {
  const auto m = step_matrix();
  Rng rng(1);
  auto t = fit_tree(m, m.y(), TreeParams{3, 10, 0.0, 0}, rng);
  ASSERT_EQ(t.nodes.size(), 1u);
  EXPECT_DOUBLE_EQ(t.nodes[0].value, 0.5);
}

TEST(Tree, GreedySplitMatchesExhaustiveSearch) {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 29, d = 1 + rng() % 3;
    const bool discrete = trial % 2 == 0;
    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : x[i]) v = discrete ? static_cast<double>(rng() % 5) : std::uniform_real_distribution<double>(-3, 3)(rng);
      y[i] = discrete ? static_cast<double>(rng() % 9) / 8.0 : std::uniform_real_distribution<double>(0, 1)(rng);
    }
    std::vector<std::string> names;
    for (std::size_t j = 0; j < d; ++j) names.push_back("f" + std::to_string(j));
    const auto m = Matrix::from_rows(names, x, y);
    const int depth = 1 + trial % 2;
    const int min_leaf = 1 + static_cast<int>(trial % 3);
    Rng trng(1);
    const auto tree = fit_tree(m, m.y(), TreeParams{depth, static_cast<double>(min_leaf), 0.0, 0}, trng);

    // walk the tree, checking every node reached before max depth
    std::function<void(int, std::vector<std::size_t>, int)> visit = [&](int id, std::vector<std::size_t> rows, int level) {
      const auto& node = tree.nodes[id];
      double sq = 0;
      for (auto r : rows) sq += y[r] * y[r];
      const auto oracle = brute_force(x, y, rows, min_leaf, 1e-9 * std::max(sq, 1e-300));
      if (level >= depth) {
        EXPECT_TRUE(node.is_leaf());
        return;
      }
      ++checked;
      ASSERT_EQ(node.feature, oracle.feature) << "trial " << trial << " node " << id;
      if (node.is_leaf()) return;
      EXPECT_NEAR(node.threshold, oracle.threshold, 1e-12) << "trial " << trial;
      EXPECT_NEAR(node.gain, oracle.gain, 1e-9 * std::max(sq, 1.0));
      std::vector<std::size_t> l, r;
      for (auto i : rows) (x[i][node.feature] <= node.threshold ? l : r).push_back(i);
      visit(node.left, l, level + 1);
      visit(node.right, r, level + 1);
    };
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    visit(0, all, 0);
  }
  EXPECT_GT(checked, 200);
}

TEST(Tree, IntegerWeightsEqualDuplicatedRows) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_matrix(rng, 25, 3, 2);
    std::vector<double> w(m.n());
    std::vector<std::vector<double>> dup_rows;
    std::vector<double> dup_y;
    for (std::size_t i = 0; i < m.n(); ++i) {
      w[i] = static_cast<double>(rng() % 3);
      for (int k = 0; k < static_cast<int>(w[i]); ++k) dup_rows.push_back(m.row(i)), dup_y.push_back(m.y()[i]);
    }
    if (dup_y.empty()) continue;
    const auto dup = Matrix::from_rows(m.feature_names(), dup_rows, dup_y);
    Rng r1(1), r2(1);
    const TreeParams tp{3, 2, 0.5, 0};
    const auto a = fit_tree(m, m.y(), tp, r1, w);
    const auto b = fit_tree(dup, dup.y(), tp, r2);
    ASSERT_EQ(a.nodes.size(), b.nodes.size());
    for (std::size_t k = 0; k < a.nodes.size(); ++k) {
      EXPECT_EQ(a.nodes[k].feature, b.nodes[k].feature);
      EXPECT_NEAR(a.nodes[k].value, b.nodes[k].value, 1e-12);
    }
  }
}

TEST(Mean, PredictsAverage) {
  const auto m = Matrix::from_rows({"a"}, {{1}, {2}, {3}}, {0.8, 0.9, 1.0});
  const auto a = fit_mean(m);
  EXPECT_NEAR(a.predict_row(std::vector<double>{123.0}), 0.9, 1e-15);
  const auto one = fit_mean(Matrix::from_rows({"a"}, {{1}}, {0.7}));
  EXPECT_EQ(one.predict_row(std::vector<double>{5.0}), 0.7);
  EXPECT_EQ(predict(a, {{"a", -4.0}}), a.base_prediction);
  EXPECT_THROW(importance(a), Error);
}

TEST(Forest, SingleUnbaggedTreeEqualsFitTree) {
  std::mt19937_64 rng(4);
  const auto m = random_matrix(rng, 60, 3, 2);
  HyperParams hp;
  hp.n_trees = 1;
  hp.bootstrap = false;
  hp.max_features = 3;
  hp.max_depth = 4;
  hp.min_samples_leaf = 2;
  const auto forest = fit_forest(m, hp, 5);
  Rng trng(1);
  const auto tree = fit_tree(m, m.y(), TreeParams{4, 2, 0.0, 0}, trng);
  for (std::size_t i = 0; i < m.n(); ++i) {
    const auto x = m.row(i);
    EXPECT_EQ(forest.predict_row(x), tree.predict(x));
  }
}

TEST(Forest, SameSeedSameArtifact) {
  std::mt19937_64 rng(4);
  const auto m = random_matrix(rng, 80, 4, 2);
  HyperParams hp;
  hp.n_trees = 15;
  EXPECT_EQ(to_json(fit_forest(m, hp, 11)).dump(), to_json(fit_forest(m, hp, 11)).dump());
  EXPECT_NE(to_json(fit_forest(m, hp, 11)).dump(), to_json(fit_forest(m, hp, 12)).dump());
}

TEST(Gbdt, OneFullStepFitsTheStepExactly) {
  const auto m = step_matrix();
  HyperParams hp;
  hp.n_trees = 1;
  hp.learning_rate = 1.0;
  hp.max_depth = 1;
  hp.min_samples_leaf = 1;
  hp.l2_leaf_reg = 0.0;
  FitTrace trace;
  fit_gbdt(m, hp, 1, &trace);
  ASSERT_EQ(trace.train_rmse.size(), 2u);
  EXPECT_DOUBLE_EQ(trace.train_rmse[0], 0.5);
  EXPECT_EQ(trace.train_rmse[1], 0.0);
}

TEST(Gbdt, ZeroTreesIsTheMeanBaseline) {
  std::mt19937_64 rng(4);
  const auto m = random_matrix(rng, 40, 2);
  HyperParams hp;
  hp.n_trees = 0;
  const auto g = fit_gbdt(m, hp, 1);
  EXPECT_EQ(g.predict_matrix(m), fit_mean(m).predict_matrix(m));
}

TEST(Gbdt, TrainRmseNeverIncreases) {
  const auto& pre = test::default_preprocessed();
  const auto m = to_matrix(pre.table, pre.table.feature_columns());
  for (double l2 : {0.0, 1.0, 3.0}) {
    HyperParams hp = small_gbdt();
    hp.n_trees = 60;
    hp.l2_leaf_reg = l2;
    FitTrace trace;
    fit_gbdt(m, hp, 3, &trace);
    for (std::size_t t = 1; t < trace.train_rmse.size(); ++t) {
      EXPECT_LE(trace.train_rmse[t], trace.train_rmse[t - 1] + 1e-15) << "l2 " << l2 << " round " << t;
    }
  }
}

TEST(Gbdt, StoredTrainPredictionsMatchPredict) {
  std::mt19937_64 rng(8);
  const auto m = random_matrix(rng, 70, 3, 2);
  FitTrace trace;
  const auto a = fit_gbdt(m, small_gbdt(), 2, &trace);
  for (std::size_t i = 0; i < m.n(); ++i) {
    std::map<std::string, double> x;
    for (std::size_t j = 0; j < m.d(); ++j) x[m.feature_names()[j]] = m.at(i, j);
    EXPECT_EQ(predict(a, x), trace.train_predictions[i]);
  }
  EXPECT_THROW(predict(a, {{"f0", 1.0}}), Error);
}

TEST(Gbdt, RowPermutationLeavesPredictionsUnchanged) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_matrix(rng, 90, 3, 2);
    std::vector<std::size_t> perm(m.n());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (auto p : perm) rows.push_back(m.row(p)), y.push_back(m.y()[p]);
    const auto pm = Matrix::from_rows(m.feature_names(), rows, y);
    const auto a = fit_gbdt(m, small_gbdt(), 1);
    const auto b = fit_gbdt(pm, small_gbdt(), 1);
    for (std::size_t i = 0; i < m.n(); ++i) {
      const auto x = m.row(i);
      EXPECT_NEAR(a.predict_row(x), b.predict_row(x), 1e-12);
    }
  }
}

TEST(Gbdt, SubsampleIsSeeded) {
  std::mt19937_64 rng(3);
  const auto m = random_matrix(rng, 60, 3);
  auto hp = small_gbdt();
  hp.subsample = 0.6;
  EXPECT_EQ(fit_gbdt(m, hp, 4), fit_gbdt(m, hp, 4));
  EXPECT_NE(fit_gbdt(m, hp, 4), fit_gbdt(m, hp, 5));
}

TEST(Importance, OneInformativeFeatureDominates) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (int i = 0; i < 300; ++i) {
    const double f1 = u(rng);
    rows.push_back({f1, 1e-3 * u(rng), 1e-3 * u(rng), 1e-3 * u(rng)});
    y.push_back(0.2 + 0.6 * f1 + 0.001 * u(rng));
  }
  const auto m = Matrix::from_rows({"f1", "n1", "n2", "n3"}, rows, y);
  const auto a = fit_gbdt(m, small_gbdt(), 1);
  EXPECT_GT(importance(a).at("f1"), 0.9);
  EXPECT_EQ(select_top_k(a.importances, 1), std::vector<std::string>{"f1"});
}

TEST(Importance, SingleSplitIsOne) {
  HyperParams hp;
  hp.n_trees = 1;
  hp.max_depth = 1;
  hp.min_samples_leaf = 1;
  hp.l2_leaf_reg = 0;
  const auto m = Matrix::from_rows({"a", "b"}, {{0, 0}, {0, 1}, {1, 0}, {1, 1}}, {0.1, 0.1, 0.9, 0.9});
  const auto imp = importance(fit_gbdt(m, hp, 1));
  EXPECT_DOUBLE_EQ(imp.at("a"), 1.0);
  EXPECT_DOUBLE_EQ(imp.at("b"), 0.0);
}

TEST(Importance, SumsToOne) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_matrix(rng, 50, 1 + trial % 4, 1);
    HyperParams hp = small_gbdt();
    hp.n_trees = 5;
    for (const auto& a : {fit_gbdt(m, hp, trial), fit_forest(m, hp, trial)}) {
      double s = 0;
      for (const auto& [k, v] : importance(a)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(TopK, OrderAndTies) {
  EXPECT_EQ(select_top_k({{"a", .5}, {"b", .3}, {"c", .2}}, 1), std::vector<std::string>{"a"});
  EXPECT_EQ(select_top_k({{"b", .4}, {"a", .4}, {"c", .2}}, 2), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(select_top_k({{"a", .4}}, 5).size(), 1u);
  EXPECT_THROW(select_top_k({{"a", 1}}, 0), Error);
}

TEST(TopK, PlantedFeaturesRankInTopTwenty) {
  const auto& pre = test::default_preprocessed();
  const auto split = chronological_split(pre.table, SplitSpec{});
  const auto m = to_matrix(split.train, split.train.feature_columns());
  HyperParams hp;
  hp.l2_leaf_reg = 3.0;
  const auto top = select_top_k(fit_gbdt(m, hp, 1).importances, 20);
  for (const auto& [name, coef] : default_planted_signal().coefficients) {
    EXPECT_NE(std::find(top.begin(), top.end(), name), top.end()) << name;
    (void)coef;
  }
}

TEST(Artifact, RoundTripPredictsIdentically) {
  std::mt19937_64 rng(17);
  const auto m = random_matrix(rng, 80, 3, 2);
  test::TempDir dir("artifact");
  HyperParams hp = small_gbdt();
  for (const auto& a : {fit_mean(m), fit_forest(m, hp, 3), fit_gbdt(m, hp, 3)}) {
    save_artifact(a, dir.path / "m.json");
    const auto b = load_artifact(dir.path / "m.json");
    EXPECT_EQ(a, b);
    std::uniform_real_distribution<double> u(-1, 2);
    for (int i = 0; i < 100; ++i) {
      std::vector<double> x = {u(rng), u(rng), u(rng)};
      EXPECT_EQ(a.predict_row(x), b.predict_row(x));
    }
    EXPECT_EQ(to_json(b).dump(), to_json(a).dump());
  }
}

TEST(Artifact, CorruptionIsDetected) {
  std::mt19937_64 rng(17);
  const auto m = random_matrix(rng, 40, 2);
  const auto good = to_json(fit_gbdt(m, small_gbdt(), 1));
  auto expect_corrupt = [](const json& j) {
    try {
      artifact_from_json(j);
      ADD_FAILURE() << "accepted " << j.dump().substr(0, 80);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::kCorruptArtifact);
    }
  };
  auto j = good;
  j["format"] = "other";
  expect_corrupt(j);
  j = good;
  j["version"] = 2;
  expect_corrupt(j);
  j = good;
  j.erase("trees");
  expect_corrupt(j);
  j = good;
  j["trees"][0]["nodes"][0][2] = 999;
  expect_corrupt(j);
  j = good;
  j["trees"][0]["nodes"][0][0] = 7;
  expect_corrupt(j);
  j = good;
  j["kind"] = "svm";
  expect_corrupt(j);
  j = good;
  j["hyperparams"]["learning_rate"] = -1;
  expect_corrupt(j);

  test::TempDir dir("corrupt");
  std::ofstream(dir.path / "bad.json") << "{not json";
  try {
    load_artifact(dir.path / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kCorruptArtifact);
  }
}

TEST(HyperParams, StrictKeysAndRanges) {
  EXPECT_THROW(HyperParams::from_json(json{{"trees", 5}}), Error);
  EXPECT_THROW(HyperParams::from_json(json{{"learning_rate", 0.0}}), Error);
  EXPECT_THROW(HyperParams::from_json(json{{"max_depth", 0}}), Error);
  HyperParams hp;
  hp.l2_leaf_reg = 3;
  EXPECT_EQ(HyperParams::from_json(hp.to_json()), hp);
}
