#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <optional>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dradvisor/cart.hpp"
#include "dradvisor/rng.hpp"

namespace dra {

struct ForestModel {
  std::vector<RegressionTree> trees;
  std::size_t mtry = 1;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::optional<double> oob_error;  // out-of-bag mean squared error

  const std::vector<std::string>& features() const { return trees.front().features(); }

  double predict(std::span<const double> x) const {
    double s = 0;
    for (const auto& t : trees) s += t.predict(x);
    return s / static_cast<double>(trees.size());
  }

  double predict(const FeatureVector& x) const { return predict(std::span<const double>(x.aligned(features()))); }

  nlohmann::json to_json() const {
    nlohmann::json trees_json = nlohmann::json::array();
    for (const auto& t : trees) trees_json.push_back(t.to_json());
    nlohmann::json meta = {{"mtry", mtry}, {"bootstrap", bootstrap}, {"seed", seed}, {"n_trees", trees.size()}};
    meta["oob_error"] = oob_error ? nlohmann::json(*oob_error) : nlohmann::json(nullptr);
    return {{"type", "forest"}, {"meta", meta}, {"trees", trees_json}};
  }

  static ForestModel from_json(const nlohmann::json& j) {
    try {
      ForestModel m;
      const auto& meta = j.at("meta");
      m.mtry = meta.at("mtry").get<std::size_t>();
      m.bootstrap = meta.at("bootstrap").get<bool>();
      m.seed = meta.at("seed").get<std::uint64_t>();
      if (meta.contains("oob_error") && !meta.at("oob_error").is_null()) m.oob_error = meta.at("oob_error").get<double>();
      for (const auto& t : j.at("trees")) m.trees.push_back(RegressionTree::from_json(t));
      require(!m.trees.empty(), ErrorCode::ParseError, "forest without trees");
      return m;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("malformed forest JSON: ") + e.what());
    }
  }
};

struct BoostedModel {
  struct Stage {
    RegressionTree tree;
    double weight = 0.1;
  };

  double init = 0.0;
  std::vector<Stage> stages;
  double shrinkage = 0.1;
  std::vector<std::string> schema;

  const std::vector<std::string>& features() const { return schema; }

  double predict(std::span<const double> x) const {
    double f = init;
    for (const auto& s : stages) f += s.weight * s.tree.predict(x);
    return f;
  }

  double predict(const FeatureVector& x) const { return predict(std::span<const double>(x.aligned(features()))); }

  nlohmann::json to_json() const {
    nlohmann::json trees = nlohmann::json::array(), weights = nlohmann::json::array();
    for (const auto& s : stages) {
      trees.push_back(s.tree.to_json());
      weights.push_back(s.weight);
    }
    return {{"type", "brt"},
            {"meta", {{"init", init}, {"shrinkage", shrinkage}, {"loss", "squared_error"}, {"features", schema}, {"weights", weights}}},
            {"trees", trees}};
  }

  static BoostedModel from_json(const nlohmann::json& j) {
    try {
      BoostedModel m;
      const auto& meta = j.at("meta");
      m.init = meta.at("init").get<double>();
      m.shrinkage = meta.at("shrinkage").get<double>();
      m.schema = meta.at("features").get<std::vector<std::string>>();
      const auto weights = meta.at("weights").get<std::vector<double>>();
      const auto& trees = j.at("trees");
      require(weights.size() == trees.size(), ErrorCode::ParseError, "brt weights/trees length mismatch");
      for (std::size_t i = 0; i < trees.size(); ++i) m.stages.push_back({RegressionTree::from_json(trees[i]), weights[i]});
      return m;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("malformed brt JSON: ") + e.what());
    }
  }
};

namespace detail {

/// Runs body(i) for i in [0, n) across hardware threads; results are written by index.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += workers) body(i);
    }));
  }
  for (auto& j : jobs) j.get();
}

}  // namespace detail

inline std::size_t default_mtry(std::size_t features) { return std::max<std::size_t>(1, (features + 2) / 3); }

/// Random forest: bootstrap rows per tree, mtry features drawn per node.
inline ForestModel fit_forest(const DesignMatrix& X, std::span<const double> y, std::size_t n_trees, std::size_t mtry,
                              const FitConfig& config = {}, std::uint64_t seed = 0, bool bootstrap = true) {
  detail::check_fit_inputs(X, y, config);
  require(n_trees >= 1, ErrorCode::InvalidArgument, "forest needs at least one tree");
  const std::size_t m = config.feature_whitelist ? config.feature_whitelist->size() : X.cols();
  if (mtry < 1 || mtry > m) fail(ErrorCode::InvalidArgument, "mtry " + std::to_string(mtry) + " outside [1, " + std::to_string(m) + "]");

  ForestModel model;
  model.mtry = mtry;
  model.bootstrap = bootstrap;
  model.seed = seed;
  model.trees.resize(n_trees);
  std::vector<std::vector<char>> in_bag(n_trees);

  const detail::Presort presort(X);
  detail::parallel_for(n_trees, [&](std::size_t t) {
    Rng rng(Rng::derive(seed, t));
    std::vector<std::size_t> rows(X.rows);
    in_bag[t].assign(X.rows, 0);
    if (bootstrap) {
      for (auto& r : rows) {
        r = static_cast<std::size_t>(rng.below(X.rows));
        in_bag[t][r] = 1;
      }
      std::sort(rows.begin(), rows.end());
    } else {
      std::iota(rows.begin(), rows.end(), 0);
      std::fill(in_bag[t].begin(), in_bag[t].end(), 1);
    }
    detail::FeatureSampler sampler;
    if (mtry < m) {
      sampler = [&rng, mtry](const std::vector<std::size_t>& allowed) {
        std::vector<std::size_t> pool = allowed;
        for (std::size_t i = 0; i < mtry; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
        pool.resize(mtry);
        std::sort(pool.begin(), pool.end());
        return pool;
      };
    }
    model.trees[t] = detail::TreeGrower(X, y, config, std::move(sampler), &presort).grow(rows);
  });

  if (bootstrap) {
    double sse = 0;
    std::size_t counted = 0;
    std::vector<double> row(X.cols());
    for (std::size_t r = 0; r < X.rows; ++r) {
      double s = 0;
      std::size_t k = 0;
      for (std::size_t t = 0; t < n_trees; ++t) {
        if (in_bag[t][r]) continue;
        s += model.trees[t].predict(X.row(r));
        ++k;
      }
      if (k == 0) continue;
      const double e = y[r] - s / static_cast<double>(k);
      sse += e * e;
      ++counted;
    }
    if (counted) model.oob_error = sse / static_cast<double>(counted);
  }
  return model;
}

inline double predict_forest(const ForestModel& model, const FeatureVector& x) { return model.predict(x); }

inline FitConfig brt_default_config() {
  FitConfig c;
  c.max_depth = 4;
  return c;
}

/// Gradient boosting with squared-error loss: each stage fits the current residuals.
inline BoostedModel fit_brt(const DesignMatrix& X, std::span<const double> y, std::size_t n_stages = 200, double shrinkage = 0.1,
                            const FitConfig& config = brt_default_config()) {
  detail::check_fit_inputs(X, y, config);
  require(n_stages >= 1, ErrorCode::InvalidArgument, "boosting needs at least one stage");
  if (!(shrinkage > 0.0 && shrinkage <= 1.0)) fail(ErrorCode::InvalidArgument, "shrinkage must be in (0, 1]");
  BoostedModel model;
  model.shrinkage = shrinkage;
  model.schema = X.names;
  model.init = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  std::vector<double> fitted(y.size(), model.init), residual(y.size());
  const detail::Presort presort(X);
  std::vector<std::size_t> rows(X.rows);
  std::iota(rows.begin(), rows.end(), 0);
  for (std::size_t s = 0; s < n_stages; ++s) {
    for (std::size_t i = 0; i < y.size(); ++i) residual[i] = y[i] - fitted[i];
    auto tree = detail::TreeGrower(X, residual, config, {}, &presort).grow(rows);
    for (std::size_t i = 0; i < y.size(); ++i) fitted[i] += shrinkage * tree.predict(X.row(i));
    model.stages.push_back({std::move(tree), shrinkage});
  }
  return model;
}

inline double predict_brt(const BoostedModel& model, const FeatureVector& x) { return model.predict(x); }

// ---------------------------------------------------------------------------
// Learner selection shared by baselines and auto-regressive models

enum class LearnerKind { Tree, CvTree, Forest, Brt };

inline std::string_view to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::Tree: return "tree";
    case LearnerKind::CvTree: return "cvtree";
    case LearnerKind::Forest: return "forest";
    case LearnerKind::Brt: return "brt";
  }
  return "tree";
}

inline LearnerKind parse_learner(std::string_view s) {
  if (s == "tree") return LearnerKind::Tree;
  if (s == "cvtree") return LearnerKind::CvTree;
  if (s == "forest") return LearnerKind::Forest;
  if (s == "brt") return LearnerKind::Brt;
  fail(ErrorCode::InvalidArgument, "unknown learner '" + std::string(s) + "'");
}

struct LearnerConfig {
  LearnerKind kind = LearnerKind::Tree;
  FitConfig tree;
  std::size_t cv_folds = 5;
  std::size_t n_trees = 100;
  std::optional<std::size_t> mtry;  // default ceil(m/3)
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t n_stages = 200;
  double shrinkage = 0.1;
  std::optional<FitConfig> brt_tree;  // default depth-4 trees
};

/// One of the baseline learners behind a common predict interface.
class Regressor {
 public:
  using Model = std::variant<RegressionTree, ForestModel, BoostedModel>;

  Regressor() = default;
  explicit Regressor(Model m) : model_(std::move(m)) {}

  const Model& model() const { return model_; }

  const std::vector<std::string>& features() const {
    return std::visit([](const auto& m) -> const std::vector<std::string>& { return m.features(); }, model_);
  }

  double predict(std::span<const double> x) const {
    return std::visit([&](const auto& m) { return m.predict(x); }, model_);
  }

  double predict(const FeatureVector& x) const { return predict(std::span<const double>(x.aligned(features()))); }

  std::vector<double> predict(const DesignMatrix& X) const {
    const auto& names = features();
    std::vector<std::size_t> cols;
    for (const auto& n : names) {
      auto c = X.index_of(n);
      if (!c) fail(ErrorCode::SchemaMismatch, "input lacks model feature '" + n + "'");
      cols.push_back(*c);
    }
    std::vector<double> out(X.rows), row(names.size());
    for (std::size_t r = 0; r < X.rows; ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) row[c] = X.at(r, cols[c]);
      out[r] = predict(std::span<const double>(row));
    }
    return out;
  }

  std::string_view type() const {
    switch (model_.index()) {
      case 0: return "tree";
      case 1: return "forest";
      default: return "brt";
    }
  }

  nlohmann::json to_json() const {
    return std::visit([](const auto& m) { return m.to_json(); }, model_);
  }

  static Regressor from_json(const nlohmann::json& j) {
    const auto type = j.value("type", std::string());
    if (type == "tree") return Regressor(RegressionTree::from_json(j));
    if (type == "forest") return Regressor(ForestModel::from_json(j));
    if (type == "brt") return Regressor(BoostedModel::from_json(j));
    fail(ErrorCode::ParseError, "unknown model type '" + type + "'");
  }

 private:
  Model model_;
};

inline Regressor fit_learner(const DesignMatrix& X, std::span<const double> y, const LearnerConfig& config) {
  switch (config.kind) {
    case LearnerKind::Tree:
      return Regressor(fit_tree(X, y, config.tree));
    case LearnerKind::CvTree:
      return Regressor(prune_cv(fit_tree(X, y, config.tree), X, y, config.cv_folds));
    case LearnerKind::Forest: {
      const std::size_t m = config.tree.feature_whitelist ? config.tree.feature_whitelist->size() : X.cols();
      return Regressor(fit_forest(X, y, config.n_trees, config.mtry.value_or(default_mtry(m)), config.tree, config.seed, config.bootstrap));
    }
    case LearnerKind::Brt:
      return Regressor(fit_brt(X, y, config.n_stages, config.shrinkage, config.brt_tree.value_or(brt_default_config())));
  }
  fail(ErrorCode::InvalidArgument, "unknown learner");
}

}  // namespace dra
