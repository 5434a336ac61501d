#include <numeric>

#include "support.hpp"

using namespace dra;
using namespace dra::test;

namespace {

struct Problem {
  DesignMatrix X;
  std::vector<double> y;
};

Problem friedman(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(5);
    for (auto& v : x) v = rng.uniform();
    y.push_back(10 * std::sin(3.14159 * x[0] * x[1]) + 20 * (x[2] - 0.5) * (x[2] - 0.5) + 10 * x[3] + 5 * x[4] + rng.normal());
    rows.push_back(std::move(x));
  }
  return {DesignMatrix::from_rows(rows), std::move(y)};
}

RegressionTree constant_tree(double value) {
  TreeNode leaf;
  leaf.model.intercept = value;
  return RegressionTree({"x1"}, {ColumnKind::Continuous}, {leaf});
}

FitConfig deep() {
  FitConfig c;
  c.min_leaf = 1;
  c.max_depth = 30;
  return c;
}

}  // namespace

TEST(Forest, DegenerateForestEqualsSingleTree) {
  const auto p = friedman(1, 200);
  FitConfig cfg;
  const auto tree = fit_tree(p.X, p.y, cfg);
  const auto forest = fit_forest(p.X, p.y, 1, p.X.cols(), cfg, 42, false);
  ASSERT_EQ(forest.trees.size(), 1u);
  EXPECT_TRUE(forest.trees.front() == tree);
  const auto q = friedman(2, 100);
  for (std::size_t r = 0; r < q.X.rows; ++r) EXPECT_EQ(forest.predict(q.X.row(r)), tree.predict(q.X.row(r)));
  EXPECT_FALSE(forest.oob_error.has_value());
}

TEST(Forest, IdenticalTreesAverageToOne) {
  const auto p = friedman(3, 150);
  const auto tree = fit_tree(p.X, p.y);
  const auto forest = fit_forest(p.X, p.y, 3, p.X.cols(), {}, 0, false);
  for (const auto& t : forest.trees) EXPECT_TRUE(t == tree);
  for (std::size_t r = 0; r < p.X.rows; ++r) EXPECT_DOUBLE_EQ(forest.predict(p.X.row(r)), tree.predict(p.X.row(r)));
}

TEST(Forest, MeanOfMembers) {
  ForestModel f;
  f.trees = {constant_tree(2), constant_tree(4), constant_tree(6)};
  FeatureVector x;
  x.set("x1", 0);
  EXPECT_DOUBLE_EQ(predict_forest(f, x), 4.0);
  ForestModel single;
  single.trees = {constant_tree(2.5)};
  EXPECT_DOUBLE_EQ(predict_forest(single, x), 2.5);
}

TEST(Forest, FixedSeedIsDeterministic) {
  const auto p = friedman(4, 300);
  const auto a = fit_forest(p.X, p.y, 12, 2, {}, 7);
  const auto b = fit_forest(p.X, p.y, 12, 2, {}, 7);
  ASSERT_EQ(a.trees.size(), b.trees.size());
  for (std::size_t t = 0; t < a.trees.size(); ++t) EXPECT_TRUE(a.trees[t] == b.trees[t]) << "tree " << t;
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  const auto c = fit_forest(p.X, p.y, 12, 2, {}, 8);
  EXPECT_NE(a.to_json().dump(), c.to_json().dump());
}

TEST(Forest, PredictionWithinMemberRange) {
  const auto p = friedman(5, 300);
  const auto forest = fit_forest(p.X, p.y, 25, 2, {}, 11);
  const auto q = friedman(6, 200);
  for (std::size_t r = 0; r < q.X.rows; ++r) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& t : forest.trees) {
      lo = std::min(lo, t.predict(q.X.row(r)));
      hi = std::max(hi, t.predict(q.X.row(r)));
    }
    const double v = forest.predict(q.X.row(r));
    EXPECT_GE(v, lo - 1e-12);
    EXPECT_LE(v, hi + 1e-12);
  }
}

TEST(Forest, OutOfBagErrorIsRecorded) {
  const auto p = friedman(7, 400);
  const auto forest = fit_forest(p.X, p.y, 30, 2, {}, 3);
  ASSERT_TRUE(forest.oob_error.has_value());
  EXPECT_GT(*forest.oob_error, 0.5);  // at least the noise variance
  double var = 0;
  const double mean = std::accumulate(p.y.begin(), p.y.end(), 0.0) / static_cast<double>(p.y.size());
  for (double v : p.y) var += (v - mean) * (v - mean);
  EXPECT_LT(*forest.oob_error, var / static_cast<double>(p.y.size()));
}

TEST(Forest, Errors) {
  const auto p = friedman(8, 50);
  expect_error(ErrorCode::InvalidArgument, [&] { fit_forest(p.X, p.y, 0, 2); });
  expect_error(ErrorCode::InvalidArgument, [&] { fit_forest(p.X, p.y, 3, 0); });
  expect_error(ErrorCode::InvalidArgument, [&] { fit_forest(p.X, p.y, 3, 6); });
}

TEST(Forest, BeatsPrunedTreeOnTestbedData) {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    testbed::RcBuildingConfig building;
    building.seed = seed;
    testbed::GenerationOptions gen;
    gen.nominal_days = 7;  // held-out week runs the normal schedule, as for a baseline
    const auto ds = testbed::generate_dataset(building, 28, gen);
    const auto [train, test] = chronological_split(ds, 21.0 / 28.0);
    const std::vector<std::string> features{"oat", "solar", "day_of_week", "time_of_day", "is_weekend", "is_holiday",
                                            "chw_setpoint", "zone_setpoint", "lighting"};
    const auto Xtr = train.matrix(features), Xte = test.matrix(features);
    const auto ytr = train.values("kW"), yte = test.values("kW");
    const auto forest = fit_forest(Xtr, ytr, 100, default_mtry(features.size()), {}, seed);
    const auto pruned = prune_cv(fit_tree(Xtr, ytr), Xtr, ytr, 5);
    std::vector<double> pf, pt;
    for (std::size_t r = 0; r < Xte.rows; ++r) {
      pf.push_back(forest.predict(Xte.row(r)));
      pt.push_back(pruned.predict(Xte.row(r)));
    }
    const double af = accuracy(yte, pf).accuracy, at = accuracy(yte, pt).accuracy;
    wins += af >= at ? 1 : 0;
    RecordProperty("seed_" + std::to_string(seed), std::to_string(af) + " vs " + std::to_string(at));
  }
  EXPECT_GE(wins, 8);
}

TEST(Brt, OneFullStepEqualsCart) {
  const auto p = friedman(9, 200);
  const auto brt = fit_brt(p.X, p.y, 1, 1.0, deep());
  const auto tree = fit_tree(p.X, p.y, deep());
  for (std::size_t r = 0; r < p.X.rows; ++r) EXPECT_NEAR(brt.predict(p.X.row(r)), tree.predict(p.X.row(r)), 1e-9);
}

TEST(Brt, StageArithmetic) {
  BoostedModel m;
  m.init = 1.0;
  m.schema = {"x1"};
  m.stages.push_back({constant_tree(2.0), 0.5});
  FeatureVector x;
  x.set("x1", 3);
  EXPECT_DOUBLE_EQ(predict_brt(m, x), 2.0);
}

TEST(Brt, PredictionIsInitPlusWeightedStages) {
  const auto p = friedman(10, 300);
  const auto brt = fit_brt(p.X, p.y, 25, 0.3);
  EXPECT_EQ(brt.stages.size(), 25u);
  EXPECT_DOUBLE_EQ(brt.init, std::accumulate(p.y.begin(), p.y.end(), 0.0) / 300.0);
  for (const auto& s : brt.stages) EXPECT_LE(s.tree.depth(), 4u);
  for (std::size_t r = 0; r < 20; ++r) {
    double f = brt.init;
    for (const auto& s : brt.stages) f += 0.3 * s.tree.predict(p.X.row(r));
    EXPECT_DOUBLE_EQ(brt.predict(p.X.row(r)), f);
  }
}

TEST(Brt, TrainingErrorDecreasesWithStages) {
  const auto p = friedman(11, 300);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t stages : {1u, 5u, 25u, 100u}) {
    const auto brt = fit_brt(p.X, p.y, stages, 0.1);
    double sse = 0;
    for (std::size_t r = 0; r < p.X.rows; ++r) sse += std::pow(p.y[r] - brt.predict(p.X.row(r)), 2);
    EXPECT_LT(sse, prev);
    prev = sse;
  }
}

TEST(Brt, Errors) {
  const auto p = friedman(12, 50);
  expect_error(ErrorCode::InvalidArgument, [&] { fit_brt(p.X, p.y, 0); });
  expect_error(ErrorCode::InvalidArgument, [&] { fit_brt(p.X, p.y, 5, 0.0); });
  expect_error(ErrorCode::InvalidArgument, [&] { fit_brt(p.X, p.y, 5, 1.5); });
}

TEST(EnsembleJson, RoundTrips) {
  const auto p = friedman(13, 200);
  const auto forest = fit_forest(p.X, p.y, 5, 2, {}, 1);
  const auto brt = fit_brt(p.X, p.y, 10, 0.2);
  const auto f2 = ForestModel::from_json(nlohmann::json::parse(forest.to_json().dump()));
  const auto b2 = BoostedModel::from_json(nlohmann::json::parse(brt.to_json().dump()));
  EXPECT_EQ(f2.oob_error, forest.oob_error);
  for (std::size_t r = 0; r < p.X.rows; ++r) {
    EXPECT_EQ(f2.predict(p.X.row(r)), forest.predict(p.X.row(r)));
    EXPECT_EQ(b2.predict(p.X.row(r)), brt.predict(p.X.row(r)));
  }
  EXPECT_EQ(forest.to_json()["type"], "forest");
  EXPECT_EQ(brt.to_json()["type"], "brt");
  expect_error(ErrorCode::ParseError, [] { Regressor::from_json(nlohmann::json{{"type", "svm"}}); });
  expect_error(ErrorCode::ParseError, [] { ForestModel::from_json(nlohmann::json{{"type", "forest"}}); });
}

TEST(Learner, EveryKindFitsAndRoundTrips) {
  const auto p = friedman(14, 300);
  const auto q = friedman(15, 100);
  for (auto kind : {LearnerKind::Tree, LearnerKind::CvTree, LearnerKind::Forest, LearnerKind::Brt}) {
    LearnerConfig cfg;
    cfg.kind = kind;
    cfg.n_trees = 20;
    cfg.n_stages = 50;
    const auto model = fit_learner(p.X, p.y, cfg);
    const auto back = Regressor::from_json(nlohmann::json::parse(model.to_json().dump()));
    const auto pred = model.predict(q.X);
    EXPECT_EQ(back.predict(q.X), pred) << to_string(kind);
    EXPECT_GT(accuracy(q.y, pred).accuracy, 0.75) << to_string(kind);
    EXPECT_EQ(parse_learner(to_string(kind)), kind);
  }
  expect_error(ErrorCode::InvalidArgument, [] { parse_learner("svm"); });
}

TEST(Learner, FeatureVectorNeedsEverySchemaColumn) {
  const auto p = friedman(16, 100);
  const auto model = fit_learner(p.X, p.y, {});
  FeatureVector x;
  x.set("x1", 0.5);
  expect_error(ErrorCode::SchemaMismatch, [&] { model.predict(x); });
}
