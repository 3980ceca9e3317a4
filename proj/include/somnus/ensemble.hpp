#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "somnus/config.hpp"
#include "somnus/error.hpp"
#include "somnus/rng.hpp"
#include "somnus/tabular.hpp"

namespace somnus {

// Dense numeric view of a cleaned table. Column-major.
class Matrix {
 public:
  Matrix(std::vector<std::string> feature_names, std::vector<double> column_major,
         std::vector<double> y)
      : names_(std::move(feature_names)), data_(std::move(column_major)), y_(std::move(y)) {
    if (y_.empty()) throw Error(Errc::kEmptyMatrix, "matrix has no rows");
    if (names_.empty()) throw Error(Errc::kEmptyMatrix, "matrix has no feature columns");
    if (data_.size() != names_.size() * y_.size()) {
      throw Error(Errc::kLengthMismatch, "data size does not match n x d");
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw Error(Errc::kInvalidTable, "non-finite feature value");
    }
    for (double v : y_) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::kInvalidTable, "target outside [0, 1]");
    }
  }

  static Matrix from_rows(std::vector<std::string> names, const std::vector<std::vector<double>>& rows,
                          std::vector<double> y) {
    const std::size_t n = rows.size(), d = names.size();
    std::vector<double> data(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != d) throw Error(Errc::kLengthMismatch, "row width does not match names");
      for (std::size_t j = 0; j < d; ++j) data[j * n + i] = rows[i][j];
    }
    return Matrix(std::move(names), std::move(data), std::move(y));
  }

  std::size_t n() const { return y_.size(); }
  std::size_t d() const { return names_.size(); }
  const std::vector<std::string>& feature_names() const { return names_; }
  double at(std::size_t i, std::size_t j) const { return data_[j * n() + i]; }
  std::span<const double> column(std::size_t j) const { return {data_.data() + j * n(), n()}; }
  std::span<const double> y() const { return y_; }

  std::vector<double> row(std::size_t i) const {
    std::vector<double> out(d());
    for (std::size_t j = 0; j < d(); ++j) out[j] = at(i, j);
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<double> data_;
  std::vector<double> y_;
};

inline Matrix to_matrix(const BehaviorTable& table, std::span<const std::string> features) {
  std::vector<std::size_t> idx;
  for (const auto& f : features) idx.push_back(table.column_index(f));
  const std::size_t n = table.size();
  std::vector<double> data(n * idx.size());
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = table.rows()[i];
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& v = r.values[idx[j]];
      if (!v) throw Error(Errc::kInvalidTable, "missing value in model matrix", features[j]);
      data[j * n + i] = *v;
    }
    const auto& t = r.values[table.target_index()];
    if (!t) throw Error(Errc::kInvalidTable, "missing target in model matrix", r.pid);
    y[i] = *t;
  }
  return Matrix({features.begin(), features.end()}, std::move(data), std::move(y));
}

// ---------------------------------------------------------------------------
// Regression trees

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;  // x <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;
  double gain = 0.0;
  double cover = 0.0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // preorder, root at 0

  double predict(std::span<const double> x) const {
    int i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& nd = nodes[i];
      i = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[i].value;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

  bool operator==(const RegressionTree&) const = default;
};

struct TreeParams {
  int max_depth = 4;
  double min_samples_leaf = 5;
  double l2 = 0.0;        // leaf value = sum / (weight + l2)
  int max_features = 0;   // 0 or >= d: every feature at every node
};

// Relative tolerance used when comparing split gains; candidates within it of
// the incumbent are ties and resolve to the earlier (feature, threshold).
inline constexpr double kGainTolerance = 1e-12;

// Split score for a child with weight sum w and residual sum s. The split
// gain is score(L) + score(R) - score(parent), i.e. the reduction of
// sum w (r - v)^2 + l2 v^2 at the optimal leaf values.
inline double split_score(double s, double w, double l2) { return s * s / (w + l2); }

// Upper midpoint guard: the threshold must separate a from b under `<=`.
inline double split_threshold(double a, double b) {
  const double mid = std::midpoint(a, b);
  return mid < b ? mid : a;
}

// Exact greedy CART builder. Sorting is done once per matrix and reused for
// every tree fitted through the same builder.
class TreeBuilder {
 public:
  explicit TreeBuilder(const Matrix& m) : m_(m), sorted_(m.d()) {
    for (std::size_t j = 0; j < m.d(); ++j) {
      auto& order = sorted_[j];
      order.resize(m.n());
      std::iota(order.begin(), order.end(), 0u);
      auto col = m.column(j);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }
  }

  // `weights` empty means unit weights; zero-weight rows are ignored.
  RegressionTree fit(std::span<const double> residuals, std::span<const double> weights,
                     const TreeParams& params, Rng& rng) const {
    if (residuals.size() != m_.n()) throw Error(Errc::kLengthMismatch, "residuals length != n");
    if (!weights.empty() && weights.size() != m_.n()) {
      throw Error(Errc::kLengthMismatch, "weights length != n");
    }
    Work w{residuals, weights, params, rng, {}, std::vector<char>(m_.n(), 0)};
    std::vector<std::vector<std::uint32_t>> order(m_.d());
    for (std::size_t j = 0; j < m_.d(); ++j) {
      order[j].reserve(m_.n());
      for (auto r : sorted_[j]) {
        if (weight(w, r) > 0) order[j].push_back(r);
      }
    }
    RegressionTree tree;
    build(w, order, 0, tree);
    return tree;
  }

 private:
  struct Work {
    std::span<const double> residuals;
    std::span<const double> weights;
    const TreeParams& params;
    Rng& rng;
    std::vector<std::size_t> feature_pool;
    std::vector<char> goes_left;
  };

  static double weight(const Work& w, std::uint32_t r) {
    return w.weights.empty() ? 1.0 : w.weights[r];
  }

  std::vector<std::size_t> candidate_features(Work& w) const {
    const std::size_t d = m_.d();
    std::vector<std::size_t> idx(d);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto mf = static_cast<std::size_t>(std::max(0, w.params.max_features));
    if (mf == 0 || mf >= d) return idx;
    for (std::size_t k = 0; k < mf; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, d - 1);
      std::swap(idx[k], idx[pick(w.rng)]);
    }
    idx.resize(mf);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  int build(Work& w, std::vector<std::vector<std::uint32_t>>& order, int depth,
            RegressionTree& tree) const {
    const auto& p = w.params;
    double wsum = 0, ssum = 0, sq = 0;
    for (auto r : order[0]) {
      const double wt = weight(w, r), res = w.residuals[r];
      wsum += wt;
      ssum += wt * res;
      sq += wt * res * res;
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes[id].value = wsum + p.l2 > 0 ? ssum / (wsum + p.l2) : 0.0;
    tree.nodes[id].cover = wsum;
    if (depth >= p.max_depth || wsum < 2 * p.min_samples_leaf) return id;

    const double tol = kGainTolerance * std::max(sq, 1e-300);
    const double parent = split_score(ssum, wsum, p.l2);
    double best_gain = tol;
    int best_feature = -1;
    double best_threshold = 0;
    for (auto f : candidate_features(w)) {
      const auto& ord = order[f];
      auto col = m_.column(f);
      double wl = 0, sl = 0;
      for (std::size_t k = 0; k + 1 < ord.size(); ++k) {
        const auto r = ord[k];
        wl += weight(w, r);
        sl += weight(w, r) * w.residuals[r];
        const double a = col[r], b = col[ord[k + 1]];
        if (!(a < b)) continue;
        const double wr = wsum - wl;
        if (wl < p.min_samples_leaf || wr < p.min_samples_leaf) continue;
        const double gain = split_score(sl, wl, p.l2) + split_score(ssum - sl, wr, p.l2) - parent;
        if (gain > best_gain + (best_feature < 0 ? 0.0 : tol)) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = split_threshold(a, b);
        }
      }
    }
    if (best_feature < 0) return id;

    auto col = m_.column(static_cast<std::size_t>(best_feature));
    for (auto r : order[0]) w.goes_left[r] = col[r] <= best_threshold ? 1 : 0;
    std::vector<std::vector<std::uint32_t>> left(order.size()), right(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      for (auto r : order[j]) (w.goes_left[r] ? left[j] : right[j]).push_back(r);
      std::vector<std::uint32_t>().swap(order[j]);
    }
    const int l = build(w, left, depth + 1, tree);
    const int r = build(w, right, depth + 1, tree);
    auto& node = tree.nodes[id];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    node.gain = best_gain;
    return id;
  }

  const Matrix& m_;
  std::vector<std::vector<std::uint32_t>> sorted_;
};

inline RegressionTree fit_tree(const Matrix& m, std::span<const double> residuals,
                               const TreeParams& params, Rng& rng,
                               std::span<const double> weights = {}) {
  return TreeBuilder(m).fit(residuals, weights, params, rng);
}

// ---------------------------------------------------------------------------
// Models

enum class ModelKind { kMean, kForest, kGbdt };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kMean: return "mean";
    case ModelKind::kForest: return "forest";
    case ModelKind::kGbdt: return "gbdt";
  }
  return "mean";
}

inline ModelKind model_kind_from_string(std::string_view s) {
  if (s == "mean") return ModelKind::kMean;
  if (s == "forest") return ModelKind::kForest;
  if (s == "gbdt") return ModelKind::kGbdt;
  throw Error(Errc::kCorruptArtifact, "unknown model kind", std::string(s));
}

struct HyperParams {
  int n_trees = 200;
  int max_depth = 4;
  double learning_rate = 0.1;   // gbdt only
  int min_samples_leaf = 5;
  double subsample = 1.0;       // gbdt: row fraction per round; forest: bootstrap size fraction
  double l2_leaf_reg = 1.0;     // gbdt only
  bool bootstrap = true;        // forest only
  int max_features = 0;         // 0: sqrt(d) for forest, all for gbdt

  void validate() const {
    if (n_trees < 0) throw Error(Errc::kInvalidConfig, "n_trees must be >= 0");
    if (max_depth < 1) throw Error(Errc::kInvalidConfig, "max_depth must be >= 1");
    if (!(learning_rate > 0 && learning_rate <= 1)) {
      throw Error(Errc::kInvalidConfig, "learning_rate must be in (0, 1]");
    }
    if (min_samples_leaf < 1) throw Error(Errc::kInvalidConfig, "min_samples_leaf must be >= 1");
    if (!(subsample > 0 && subsample <= 1)) throw Error(Errc::kInvalidConfig, "subsample must be in (0, 1]");
    if (!(l2_leaf_reg >= 0)) throw Error(Errc::kInvalidConfig, "l2_leaf_reg must be >= 0");
    if (max_features < 0) throw Error(Errc::kInvalidConfig, "max_features must be >= 0");
  }

  json to_json() const {
    return {{"n_trees", n_trees},         {"max_depth", max_depth},
            {"learning_rate", learning_rate}, {"min_samples_leaf", min_samples_leaf},
            {"subsample", subsample},     {"l2_leaf_reg", l2_leaf_reg},
            {"bootstrap", bootstrap},     {"max_features", max_features}};
  }

  static HyperParams from_json(const json& j) { return from_json(j, HyperParams()); }

  static HyperParams from_json(const json& j, HyperParams base) {
    expect_known_keys(j,
                      {"n_trees", "max_depth", "learning_rate", "min_samples_leaf", "subsample",
                       "l2_leaf_reg", "bootstrap", "max_features"},
                      "hyperparams");
    base.n_trees = config_value(j, "n_trees", base.n_trees);
    base.max_depth = config_value(j, "max_depth", base.max_depth);
    base.learning_rate = config_value(j, "learning_rate", base.learning_rate);
    base.min_samples_leaf = config_value(j, "min_samples_leaf", base.min_samples_leaf);
    base.subsample = config_value(j, "subsample", base.subsample);
    base.l2_leaf_reg = config_value(j, "l2_leaf_reg", base.l2_leaf_reg);
    base.bootstrap = config_value(j, "bootstrap", base.bootstrap);
    base.max_features = config_value(j, "max_features", base.max_features);
    base.validate();
    return base;
  }

  bool operator==(const HyperParams&) const = default;
};

struct ModelArtifact {
  ModelKind kind = ModelKind::kMean;
  std::vector<RegressionTree> trees;
  double base_prediction = 0.0;
  std::vector<std::string> feature_names;
  std::map<std::string, double> importances;
  HyperParams hyperparams;
  std::uint64_t train_seed = 0;

  // Raw (unclamped) prediction; `x` follows feature_names order.
  double predict_row(std::span<const double> x) const {
    switch (kind) {
      case ModelKind::kMean:
        return base_prediction;
      case ModelKind::kForest: {
        if (trees.empty()) return base_prediction;
        double sum = 0;
        for (const auto& t : trees) sum += t.predict(x);
        return sum / static_cast<double>(trees.size());
      }
      case ModelKind::kGbdt: {
        double p = base_prediction;
        for (const auto& t : trees) p += hyperparams.learning_rate * t.predict(x);
        return p;
      }
    }
    return base_prediction;
  }

  std::vector<double> predict_matrix(const Matrix& m) const {
    std::vector<std::size_t> idx = column_mapping(m);
    std::vector<double> out(m.n()), x(feature_names.size());
    for (std::size_t i = 0; i < m.n(); ++i) {
      for (std::size_t j = 0; j < idx.size(); ++j) x[j] = m.at(i, idx[j]);
      out[i] = predict_row(x);
    }
    return out;
  }

  bool operator==(const ModelArtifact&) const = default;

 private:
  std::vector<std::size_t> column_mapping(const Matrix& m) const {
    std::vector<std::size_t> idx;
    for (const auto& f : feature_names) {
      auto it = std::find(m.feature_names().begin(), m.feature_names().end(), f);
      if (it == m.feature_names().end()) throw Error(Errc::kMissingFeature, "feature not in matrix", f);
      idx.push_back(static_cast<std::size_t>(it - m.feature_names().begin()));
    }
    return idx;
  }
};

inline double predict(const ModelArtifact& artifact, const std::map<std::string, double>& features) {
  std::vector<double> x;
  x.reserve(artifact.feature_names.size());
  for (const auto& f : artifact.feature_names) {
    auto it = features.find(f);
    if (it == features.end()) throw Error(Errc::kMissingFeature, "feature missing from input", f);
    x.push_back(it->second);
  }
  return artifact.predict_row(x);
}

// Gain-based importance: total split gain per feature, normalised to 1.
inline std::map<std::string, double> importance(const ModelArtifact& artifact) {
  if (artifact.kind == ModelKind::kMean) {
    throw Error(Errc::kWrongKind, "importance is undefined for the mean baseline");
  }
  std::vector<double> total(artifact.feature_names.size(), 0.0);
  for (const auto& t : artifact.trees) {
    for (const auto& n : t.nodes) {
      if (!n.is_leaf()) total[static_cast<std::size_t>(n.feature)] += n.gain;
    }
  }
  const double sum = std::accumulate(total.begin(), total.end(), 0.0);
  std::map<std::string, double> out;
  for (std::size_t j = 0; j < total.size(); ++j) {
    out[artifact.feature_names[j]] = sum > 0 ? total[j] / sum : 0.0;
  }
  return out;
}

// k highest-importance names, descending, ties lexicographic.
inline std::vector<std::string> select_top_k(const std::map<std::string, double>& importances,
                                             std::size_t k) {
  if (k < 1) throw Error(Errc::kInvalidConfig, "k must be >= 1");
  std::vector<std::pair<std::string, double>> items(importances.begin(), importances.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < items.size() && i < k; ++i) out.push_back(items[i].first);
  return out;
}

struct FitTrace {
  std::vector<double> train_rmse;          // index 0: before any tree
  std::vector<double> train_predictions;   // final, raw
};

namespace ensemble_detail {

inline double rmse_of(std::span<const double> pred, std::span<const double> y) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

inline double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace ensemble_detail

inline ModelArtifact fit_mean(const Matrix& m) {
  ModelArtifact a;
  a.kind = ModelKind::kMean;
  a.base_prediction = ensemble_detail::mean_of(m.y());
  a.feature_names = m.feature_names();
  for (const auto& f : a.feature_names) a.importances[f] = 0.0;
  a.hyperparams.n_trees = 0;
  return a;
}

inline ModelArtifact fit_forest(const Matrix& m, const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  if (hp.n_trees < 1) throw Error(Errc::kInvalidConfig, "forest needs n_trees >= 1");
  ModelArtifact a;
  a.kind = ModelKind::kForest;
  a.hyperparams = hp;
  a.train_seed = seed;
  a.feature_names = m.feature_names();
  a.base_prediction = ensemble_detail::mean_of(m.y());

  TreeParams tp;
  tp.max_depth = hp.max_depth;
  tp.min_samples_leaf = hp.min_samples_leaf;
  tp.l2 = 0.0;
  tp.max_features = hp.max_features > 0
                        ? hp.max_features
                        : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(m.d())))));
  const TreeBuilder builder(m);
  const std::size_t n = m.n();
  const auto draws = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hp.subsample * n)));
  std::vector<double> weights;
  for (int t = 0; t < hp.n_trees; ++t) {
    Rng rng = make_rng(seed, "forest.tree", static_cast<std::uint64_t>(t));
    if (hp.bootstrap) {
      weights.assign(n, 0.0);
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t k = 0; k < draws; ++k) weights[pick(rng)] += 1.0;
    } else {
      weights.clear();
    }
    a.trees.push_back(builder.fit(m.y(), weights, tp, rng));
  }
  a.importances = importance(a);
  return a;
}

inline ModelArtifact fit_gbdt(const Matrix& m, const HyperParams& hp, std::uint64_t seed,
                              FitTrace* trace = nullptr) {
  hp.validate();
  ModelArtifact a;
  a.kind = ModelKind::kGbdt;
  a.hyperparams = hp;
  a.train_seed = seed;
  a.feature_names = m.feature_names();
  a.base_prediction = ensemble_detail::mean_of(m.y());

  TreeParams tp;
  tp.max_depth = hp.max_depth;
  tp.min_samples_leaf = hp.min_samples_leaf;
  tp.l2 = hp.l2_leaf_reg;
  tp.max_features = hp.max_features;

  const std::size_t n = m.n();
  const auto y = m.y();
  std::vector<double> pred(n, a.base_prediction), residual(n), weights;
  if (trace) trace->train_rmse.push_back(ensemble_detail::rmse_of(pred, y));
  const TreeBuilder builder(m);
  const auto sample = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(hp.subsample * n)));
  for (int t = 0; t < hp.n_trees; ++t) {
    Rng rng = make_rng(seed, "gbdt.round", static_cast<std::uint64_t>(t));
    for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - pred[i];
    if (sample < n) {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t k = 0; k < sample; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n - 1);
        std::swap(idx[k], idx[pick(rng)]);
      }
      weights.assign(n, 0.0);
      for (std::size_t k = 0; k < sample; ++k) weights[idx[k]] = 1.0;
    }
    auto tree = builder.fit(residual, weights, tp, rng);
    std::vector<double> x(m.d());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m.d(); ++j) x[j] = m.at(i, j);
      pred[i] += hp.learning_rate * tree.predict(x);
    }
    a.trees.push_back(std::move(tree));
    if (trace) trace->train_rmse.push_back(ensemble_detail::rmse_of(pred, y));
  }
  if (trace) trace->train_predictions = pred;
  a.importances = importance(a);
  return a;
}

// ---------------------------------------------------------------------------
// Serialization. Schema "somnus-model" version 1:
//   {format, version, kind, base_prediction, feature_names[], importances{},
//    hyperparams{}, train_seed, trees: [{nodes: [[feature, threshold, left,
//    right, value, gain, cover], ...]}]}
// Doubles are written as shortest round-trip decimals.

inline constexpr int kArtifactVersion = 1;

inline json to_json(const ModelArtifact& a) {
  json trees = json::array();
  for (const auto& t : a.trees) {
    json nodes = json::array();
    for (const auto& n : t.nodes) {
      nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value, n.gain, n.cover});
    }
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  return {{"format", "somnus-model"},
          {"version", kArtifactVersion},
          {"kind", to_string(a.kind)},
          {"base_prediction", a.base_prediction},
          {"feature_names", a.feature_names},
          {"importances", a.importances},
          {"hyperparams", a.hyperparams.to_json()},
          {"train_seed", a.train_seed},
          {"trees", std::move(trees)}};
}

inline ModelArtifact artifact_from_json(const json& j) {
  auto corrupt = [](const std::string& why) { return Error(Errc::kCorruptArtifact, why); };
  try {
    if (!j.is_object() || j.value("format", "") != "somnus-model") throw corrupt("not a somnus model");
    if (j.at("version").get<int>() != kArtifactVersion) throw corrupt("unsupported version");
    ModelArtifact a;
    a.kind = model_kind_from_string(j.at("kind").get<std::string>());
    a.base_prediction = j.at("base_prediction").get<double>();
    a.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    a.importances = j.at("importances").get<std::map<std::string, double>>();
    a.hyperparams = HyperParams::from_json(j.at("hyperparams"));
    a.train_seed = j.at("train_seed").get<std::uint64_t>();
    if (!std::isfinite(a.base_prediction)) throw corrupt("non-finite base prediction");
    if (a.feature_names.empty()) throw corrupt("no features");
    const int d = static_cast<int>(a.feature_names.size());
    for (const auto& tj : j.at("trees")) {
      RegressionTree t;
      for (const auto& nj : tj.at("nodes")) {
        if (!nj.is_array() || nj.size() != 7) throw corrupt("bad node record");
        TreeNode n{nj[0].get<int>(),    nj[1].get<double>(), nj[2].get<int>(), nj[3].get<int>(),
                   nj[4].get<double>(), nj[5].get<double>(), nj[6].get<double>()};
        t.nodes.push_back(n);
      }
      const int size = static_cast<int>(t.nodes.size());
      if (size == 0) throw corrupt("empty tree");
      std::vector<int> refs(t.nodes.size(), 0);
      for (int i = 0; i < size; ++i) {
        const auto& n = t.nodes[i];
        if (!std::isfinite(n.value) || !std::isfinite(n.threshold)) throw corrupt("non-finite node");
        if (n.feature < -1) throw corrupt("bad feature index");
        if (n.is_leaf()) {
          if (n.left != -1 || n.right != -1) throw corrupt("leaf with children");
          continue;
        }
        if (n.feature >= d) throw corrupt("split feature out of range");
        if (n.left <= i || n.right <= i || n.left >= size || n.right >= size) {
          throw corrupt("bad child index");
        }
        ++refs[n.left];
        ++refs[n.right];
      }
      for (int i = 1; i < size; ++i) {
        if (refs[i] != 1) throw corrupt("unreachable or shared node");
      }
      a.trees.push_back(std::move(t));
    }
    return a;
  } catch (const json::exception& e) {
    throw Error(Errc::kCorruptArtifact, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::kCorruptArtifact) throw;
    throw Error(Errc::kCorruptArtifact, e.message(), e.detail());
  }
}

inline void save_artifact(const ModelArtifact& a, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kIo, "cannot write artifact", path.string());
  out << to_json(a).dump(1) << "\n";
}

inline ModelArtifact load_artifact(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, "cannot open artifact", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  json j;
  try {
    j = json::parse(buffer.str());
  } catch (const json::exception& e) {
    throw Error(Errc::kCorruptArtifact, e.what(), path.string());
  }
  return artifact_from_json(j);
}

}  // namespace somnus
