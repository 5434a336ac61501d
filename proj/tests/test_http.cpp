#include <cstdlib>
#include <thread>

#include "dradvisor/service/http.hpp"
#include "support.hpp"

using namespace dra;
using namespace dra::service;
using namespace dra::test;

#ifndef DRADVISOR_CLI
#define DRADVISOR_CLI "dradvisor"
#endif

namespace {

using json = nlohmann::json;

class Api : public ::testing::Test {
 protected:
  void SetUp() override {
    registry_ = std::make_unique<ModelRegistry>(dir_.path());
    server_ = std::make_unique<ApiServer>(*registry_);
    port_ = server_->bind_any();
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(60);
  }

  void TearDown() override {
    server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  std::pair<int, json> get(const std::string& path) {
    auto res = client_->Get(path);
    if (!res) throw std::runtime_error("no response for GET " + path);
    return {res->status, json::parse(res->body)};
  }

  std::pair<int, json> post(const std::string& path, const json& body) { return post_raw(path, body.dump()); }

  std::pair<int, json> post_raw(const std::string& path, const std::string& body) {
    auto res = client_->Post(path, body, "application/json");
    if (!res) throw std::runtime_error("no response for POST " + path);
    last_body_ = res->body;
    return {res->status, json::parse(res->body)};
  }

  void upload(const std::string& name, const json& model) {
    const auto [status, body] = post("/models", {{"name", name}, {"model", model}});
    ASSERT_EQ(status, 201) << body.dump();
  }

  TempDir dir_;
  std::unique_ptr<ModelRegistry> registry_;
  std::unique_ptr<ApiServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
  std::string last_body_;
};

// Single-leaf mbCRT: kŴ = intercept + slope·u with u in [0, 1]; optional zone T̂ = 20 + u.
json single_leaf_mbcrt(double intercept, double slope, bool with_zone) {
  const VariablePartition p{{"u"}, {"oat"}};
  auto tree = [&](double a, double b) {
    TreeNode leaf;
    leaf.model.kind = LeafKind::Linear;
    leaf.model.intercept = a;
    leaf.model.features = {1};
    leaf.model.coefficients = {b};
    return RegressionTree({"oat", "u"}, {ColumnKind::Continuous, ColumnKind::Continuous}, {leaf});
  };
  MbcrtModel m;
  m.partition = p;
  m.power_tree = tree(intercept, slope);
  m.x_safe = {{0, 1}};
  m.power_response = "kW";
  if (with_zone) {
    m.zone_trees.push_back(tree(20, 1));
    m.zone_responses = {"T_zone1"};
  }
  return m.to_json();
}

json hour_event() { return DrEvent::sustained(ts("2013-07-17T15:00"), ts("2013-07-17T16:00")).to_json(); }

json oat_rows(std::size_t n) {
  json rows = json::array();
  for (std::size_t i = 0; i < n; ++i) rows.push_back({{"oat", 30.0 + static_cast<double>(i)}});
  return rows;
}

}  // namespace

TEST_F(Api, EmptyRegistryListsNothing) {
  const auto [status, body] = get("/models");
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body, json::array());
}

TEST_F(Api, UnknownModelIs404) {
  const auto [status, body] = get("/models/nope");
  EXPECT_EQ(status, 404);
  EXPECT_EQ(body.at("code"), "NotFound");
  EXPECT_TRUE(body.contains("message"));
  EXPECT_TRUE(body.contains("detail"));
  EXPECT_EQ(post("/synthesize/step", {{"model", "nope"}, {"x_d_forecast", {{"oat", 1}}}}).first, 404);
  EXPECT_EQ(get("/events/evt-99/trace").first, 404);
}

TEST_F(Api, MalformedBodyIs400) {
  const auto [status, body] = post_raw("/synthesize/step", "{nope");
  EXPECT_EQ(status, 400);
  EXPECT_EQ(body.at("code"), "ParseError");
  EXPECT_EQ(post("/models", {{"name", "x"}, {"model", {{"type", "svm"}}}}).first, 400);
}

TEST_F(Api, UploadListAndFetch) {
  upload("leaf", single_leaf_mbcrt(10, 2, false));
  const auto [s1, list] = get("/models");
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].at("name"), "leaf");
  EXPECT_EQ(list[0].at("type"), "mbcrt");
  const auto [s2, one] = get("/models/leaf");
  EXPECT_EQ(s2, 200);
  EXPECT_EQ(one.at("model"), single_leaf_mbcrt(10, 2, false));
  // persisted: a second registry on the same directory sees it
  EXPECT_EQ(ModelRegistry(dir_.path()).get("leaf")->record.type, "mbcrt");
}

TEST_F(Api, SynthesizeStepSingleLeafVertex) {
  upload("leaf", single_leaf_mbcrt(10, 2, false));
  const auto [status, body] = post("/synthesize/step", {{"model", "leaf"}, {"x_d_forecast", {{"oat", 30}}}, {"config", {{"lambda", 0}}}});
  ASSERT_EQ(status, 200) << body.dump();
  EXPECT_EQ(body.at("u*").at("u"), 0.0);
  EXPECT_EQ(body.at("kW_hat"), 10.0);
  EXPECT_EQ(body.at("status"), "optimal");
}

TEST_F(Api, InfeasibleComfortIsADomainOutcome) {
  upload("zone", single_leaf_mbcrt(10, -2, true));
  const json config{{"lambda", 1}, {"t_ref", {21.7}}, {"comfort_bounds", {{21.5, 22}}}};
  const auto [status, body] = post("/synthesize/step", {{"model", "zone"}, {"x_d_forecast", {{"oat", 30}}}, {"config", config}});
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body.at("status"), "infeasible_comfort");
  EXPECT_EQ(body.at("u*").at("u"), 1.0);
}

TEST_F(Api, SchemaMismatchIs422) {
  std::vector<double> y{1, 2, 3, 4, 5, 6};
  const auto X = DesignMatrix::from_rows({{1, 0}, {2, 1}, {3, 0}, {4, 1}, {5, 0}, {6, 1}}, {"oat", "lighting"});
  upload("tree", Regressor(fit_tree(X, y, {1, 10, 1e-12, std::nullopt})).to_json());
  const auto [status, body] = post("/predict/baseline", {{"model", "tree"}, {"forecast", oat_rows(3)}});
  EXPECT_EQ(status, 422);
  EXPECT_EQ(body.at("code"), "SchemaMismatch");
  const auto [ok, pred] = post("/predict/baseline", {{"model", "tree"}, {"forecast", {{{"oat", 2.5}, {"lighting", 1}}}}});
  EXPECT_EQ(ok, 200);
  EXPECT_EQ(pred.at("predictions").size(), 1u);
}

TEST_F(Api, ReplayEventReturnsFullTrace) {
  upload("leaf", single_leaf_mbcrt(10, 2, false));
  const auto [status, created] = post("/events", {{"model", "leaf"}, {"event", hour_event()}, {"forecast", oat_rows(12)}, {"config", {{"lambda", 0}}}});
  ASSERT_EQ(status, 201) << created.dump();
  EXPECT_EQ(created.at("steps"), 12);
  const std::string id = created.at("id");
  const auto [s1, trace] = get("/events/" + id + "/trace");
  EXPECT_EQ(trace.at("status"), "complete");
  ASSERT_EQ(trace.at("entries").size(), 12u);
  EXPECT_EQ(trace.at("entries")[0].at("t"), "2013-07-17T15:00:00");
  EXPECT_EQ(trace.at("entries")[11].at("kW_hat"), 10.0);
  const auto [s2, tail] = get("/events/" + id + "/trace?since=10");
  EXPECT_EQ(tail.at("entries").size(), 2u);
  EXPECT_EQ(tail.at("entries")[0].at("step"), 10);
  // replayable: a second GET is identical
  EXPECT_EQ(get("/events/" + id + "/trace").second, trace);
  EXPECT_EQ(post("/events", {{"model", "leaf"}, {"event", hour_event()}, {"forecast", oat_rows(5)}}).first, 422);
}

TEST_F(Api, LiveEventAdvancesAndAcceptsConfig) {
  upload("zone", single_leaf_mbcrt(10, -2, true));
  const json event = DrEvent::sustained(ts("2013-07-17T15:00"), ts("2013-07-17T15:30")).to_json();
  const auto [status, created] = post("/events", {{"model", "zone"},
                                                  {"event", event},
                                                  {"forecast", oat_rows(6)},
                                                  {"mode", "live"},
                                                  {"step_seconds", 0.05},
                                                  {"config", {{"lambda", 1}, {"t_ref", {20}}}}});
  ASSERT_EQ(status, 201) << created.dump();
  const std::string id = created.at("id");
  const auto [cs, cfg] = post("/events/" + id + "/config", {{"lambda", 3}, {"t_ref", {20}}});
  EXPECT_EQ(cs, 200) << cfg.dump();
  json trace;
  for (int i = 0; i < 200; ++i) {
    trace = get("/events/" + id + "/trace").second;
    if (trace.at("status") == "complete") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ASSERT_EQ(trace.at("status"), "complete");
  ASSERT_EQ(trace.at("entries").size(), 6u);
  EXPECT_EQ(trace.at("entries").back().at("u*").at("u"), 0.0);  // λ = 3 outweighs the 2 kW gain
  EXPECT_EQ(trace.at("config").at("lambda"), 3.0);
}

TEST_F(Api, WhatIfMatchesGroundTruth) {
  const auto strategy = Strategy::constant("S1", {9, 25, 0.7}, 12);
  json weather = json::array();
  std::vector<testbed::Weather> w;
  for (int i = 0; i < 12; ++i) {
    w.push_back({32.0 + 0.1 * i, 600});
    weather.push_back({{"t_out", w.back().t_out}, {"solar", w.back().solar}});
  }
  const json req{{"strategy", strategy.to_json()}, {"initial", {{"temps", {24, 24, 24}}, {"time", "2013-07-17T15:00"}}}, {"weather", weather}};
  const auto [status, body] = post("/simulate/whatif", req);
  ASSERT_EQ(status, 200) << body.dump();
  const testbed::RcBuildingConfig c;
  const auto direct = testbed::ground_truth_strategy_energy(c, {{24, 24, 24}, ts("2013-07-17T15:00"), 0}, strategy, w);
  EXPECT_EQ(body.at("energy_kwh").get<double>(), direct.energy_kwh);
  EXPECT_EQ(body.at("power").get<std::vector<double>>(), direct.power);
}

TEST_F(Api, EvaluateStrategiesMatchesCliByteForByte) {
  testbed::RcBuildingConfig building;
  const auto ds = testbed::generate_dataset(building, 2);
  LearnerConfig cfg;
  cfg.tree.min_leaf = 20;
  const std::vector<std::string> base{"oat", "solar", "time_of_day", "chw_setpoint", "zone_setpoint", "lighting"};
  auto with_zones = base;
  for (const auto& z : testbed::zone_names(building)) {
    upload(z, fit_ar(ds, z, 6, base, cfg).to_json());
    with_zones.push_back(z);
  }
  upload("power", fit_ar(ds, "kW", 6, with_zones, cfg).to_json());

  TempDir data;
  const auto csv = data / "forecast.csv";
  write_csv(csv, ds);
  const auto loaded = load_csv(csv, Schema::load(sidecar_path(csv)));
  const std::size_t begin = 288 + 180;  // 15:00 on day two
  const std::string from = format_timestamp(loaded.timestamps()[begin]);
  const std::filesystem::path strategies = DRADVISOR_DATA_DIR "/strategies";

  json strategy_list = json::array();
  for (auto name : {"S1", "S2", "S3"}) strategy_list.push_back(Strategy::load(strategies / (std::string(name) + ".json")).to_json());
  json models = json::array({"power", "T_zone1", "T_zone2", "T_zone3"});
  const auto [status, body] = post("/evaluate/strategies", {{"models", models},
                                                            {"strategies", strategy_list},
                                                            {"forecast", rows_to_json(loaded, begin, begin + 12)},
                                                            {"history", lag_history_json(history_from_dataset(loaded, begin))}});
  ASSERT_EQ(status, 200) << body.dump();
  const std::string api = last_body_;

  const auto out = data / "cli.json";
  const std::string cmd = std::string(DRADVISOR_CLI) + " evaluate-strategies --registry " + dir_.path().string() +
                          " --models power T_zone1 T_zone2 T_zone3 --strategies " + strategies.string() + " --forecast " +
                          csv.string() + " --from " + from + " --out " + out.string() + " > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0) << cmd;
  std::ifstream in(out);
  std::string cli((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ASSERT_FALSE(cli.empty());
  EXPECT_EQ(cli, api + "\n");
  EXPECT_EQ(json::parse(cli).at("chosen"), body.at("chosen"));
}
