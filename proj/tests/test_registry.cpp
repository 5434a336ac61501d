#include <thread>

#include "dradvisor/service/registry.hpp"
#include "support.hpp"

using namespace dra;
using namespace dra::service;
using namespace dra::test;

namespace {

DesignMatrix small_matrix(std::vector<double>& y) {
  Rng rng(4);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 120; ++i) {
    rows.push_back({rng.uniform(0, 10), rng.uniform(0, 1)});
    y.push_back(3 * rows.back()[0] + 10 * rows.back()[1] + rng.normal());
  }
  return DesignMatrix::from_rows(rows, {"oat", "lighting"});
}

ModelRecord record_for(const std::string& name, const AnyModel& m) {
  ModelRecord r;
  r.name = name;
  r.model = model_to_json(m);
  r.schema = {"oat", "lighting"};
  r.metrics = {{"rows", 120}};
  return r;
}

std::vector<AnyModel> every_kind() {
  std::vector<double> y;
  const auto X = small_matrix(y);
  std::vector<AnyModel> out;
  out.emplace_back(Regressor(fit_tree(X, y)));
  out.emplace_back(Regressor(fit_forest(X, y, 4, 1, {}, 2)));
  out.emplace_back(Regressor(fit_brt(X, y, 8, 0.3)));
  testbed::RcBuildingConfig building;
  const auto ds = testbed::generate_dataset(building, 1);
  LearnerConfig cfg;
  cfg.tree.min_leaf = 20;
  out.emplace_back(fit_ar(ds, "kW", 2, {"oat", "lighting"}, cfg));
  out.emplace_back(fit_mbcrt(ds, {{"chw_setpoint", "zone_setpoint", "lighting"}, {"oat", "time_of_day"}}, "kW", {"T_zone1"}));
  return out;
}

}  // namespace

TEST(ModelRegistry, EmptyDirectory) {
  TempDir dir;
  ModelRegistry reg(dir.path());
  EXPECT_TRUE(reg.list().empty());
  expect_error(ErrorCode::NotFound, [&] { reg.get("nope"); });
}

TEST(ModelRegistry, EveryModelTypeRoundTripsThroughDisk) {
  TempDir dir;
  const auto models = every_kind();
  {
    ModelRegistry reg(dir.path());
    for (std::size_t i = 0; i < models.size(); ++i) reg.put(record_for("m" + std::to_string(i), models[i]));
  }
  ModelRegistry reopened(dir.path());
  ASSERT_EQ(reopened.list().size(), models.size());
  const std::vector<std::string> types{"tree", "forest", "brt", "ar", "mbcrt"};
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto m = reopened.get("m" + std::to_string(i));
    EXPECT_EQ(m->record.type, types[i]);
    EXPECT_EQ(model_to_json(m->model), model_to_json(models[i]));
    EXPECT_EQ(m->record.schema, (nlohmann::json{"oat", "lighting"}));
    EXPECT_FALSE(m->record.trained_at.empty());
  }
  const auto& tree = std::get<Regressor>(reopened.get("m0")->model);
  const std::vector<double> x{4.2, 0.3};
  EXPECT_EQ(tree.predict(x), std::get<Regressor>(models[0]).predict(x));
}

TEST(ModelRegistry, VersionsIncreasePerName) {
  TempDir dir;
  ModelRegistry reg(dir.path());
  const auto models = every_kind();
  EXPECT_EQ(reg.put(record_for("power", models[0]))->record.version, 1);
  EXPECT_EQ(reg.put(record_for("power", models[1]))->record.version, 2);
  EXPECT_EQ(reg.get("power")->record.type, "forest");
  EXPECT_EQ(reg.list().size(), 1u);
  ModelRegistry reopened(dir.path());
  EXPECT_EQ(reopened.get("power")->record.version, 2);
}

TEST(ModelRegistry, RejectsBadInput) {
  TempDir dir;
  ModelRegistry reg(dir.path());
  const auto models = every_kind();
  for (std::string bad : {"", "../escape", ".hidden", "a b"})
    expect_error(ErrorCode::InvalidArgument, [&] { reg.put(record_for(bad, models[0])); });
  ModelRecord junk;
  junk.name = "junk";
  junk.model = {{"type", "svm"}};
  expect_error(ErrorCode::ParseError, [&] { reg.put(junk); });
  EXPECT_TRUE(reg.list().empty());
  expect_error(ErrorCode::IoError, [&] { ModelRegistry(dir / "missing"); });
  write_file(dir / "broken.json", "{");
  expect_error(ErrorCode::ParseError, [&] { ModelRegistry again(dir.path()); });
}

TEST(ModelRegistry, ReadersSeeConsistentSnapshotsDuringUploads) {
  TempDir dir;
  ModelRegistry reg(dir.path());
  const auto models = every_kind();
  reg.put(record_for("base", models[0]));
  std::atomic<bool> done{false};
  std::atomic<int> failures{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&] {
      while (!done) {
        const auto snap = reg.snapshot();
        if (!snap->contains("base")) ++failures;
        for (const auto& [name, m] : *snap)
          if (m->record.name != name) ++failures;
      }
    });
  }
  for (int i = 0; i < 20; ++i) reg.put(record_for("up" + std::to_string(i % 5), models[static_cast<std::size_t>(i) % 3]));
  done = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(failures.load(), 0);
  EXPECT_EQ(reg.list().size(), 6u);
  EXPECT_EQ(reg.get("up0")->record.version, 4);
}
