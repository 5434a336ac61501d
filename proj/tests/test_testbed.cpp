#include <sstream>

#include "support.hpp"

using namespace dra;
using namespace dra::test;
using namespace dra::testbed;

namespace {

RcBuildingConfig one_zone(double R, double C, int interval_minutes) {
  RcBuildingConfig c;
  c.zones = 1;
  c.interval_minutes = interval_minutes;
  c.resistance = {R};
  c.capacitance = {C};
  c.hvac_gain = {20};
  c.internal_gain = {0};
  c.solar_aperture = {0};
  c.lighting_heat_fraction = 0;
  return c;
}

SimState state_at(std::vector<double> temps, const std::string& when = "2013-07-06T12:00") {
  return {std::move(temps), ts(when), 0};
}

std::string csv_text(const TimeStampedDataset& ds) {
  std::ostringstream out;
  write_csv(out, ds);
  return out.str();
}

}  // namespace

TEST(SimulateStep, Equilibrium) {
  auto c = one_zone(2, 10, 5);
  // Saturday: unoccupied, internal gains zero anyway; set-point above T keeps the coil off.
  const auto r = simulate_step(c, state_at({27}), {7, 28, 0}, {27, 0});
  EXPECT_DOUBLE_EQ(r.temps[0], 27.0);
  EXPECT_DOUBLE_EQ(r.power_kw, c.base_load_unoccupied_kw);
  EXPECT_EQ(r.hvac_kw, 0.0);
  EXPECT_EQ(r.lighting_kw, 0.0);
}

TEST(SimulateStep, EnvelopeFormula) {
  const auto c = one_zone(2, 10, 60);
  const auto r = simulate_step(c, state_at({20}), {7, 28, 0}, {30, 0});
  // T' = T + (dt / C) * (T_out - T) / R
  const double expected = 20 + (1.0 / 10.0) * ((30.0 - 20.0) / 2.0);
  EXPECT_DOUBLE_EQ(r.temps[0], expected);
  EXPECT_DOUBLE_EQ(r.temps[0], 20.5);
  EXPECT_EQ(r.next.time, ts("2013-07-06T13:00"));
  EXPECT_EQ(r.next.step, 1u);
}

TEST(SimulateStep, FullBalanceByHand) {
  RcBuildingConfig c;
  const auto holidays = c.holiday_dates();
  const SimState s = state_at({25, 24, 26}, "2013-07-17T14:00");  // Wednesday, occupied
  const Controls u{6, 23, 0.8};
  const Weather w{33, 700};
  const auto r = simulate_step(c, s, u, w, holidays);
  const double dt = 5.0 / 60.0;
  const double factor = 1 + c.chw_efficiency * (c.chw_nominal - 6);
  const double light = 0.8 * c.lighting_peak_kw;
  double thermal = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double T = s.temps[k];
    const double q_hvac = c.hvac_gain[k] * std::max(0.0, T - 23) * factor;
    thermal += q_hvac;
    const double gains = c.internal_gain[k] + c.solar_aperture[k] * 0.7 + light * c.lighting_heat_fraction / 3.0;
    EXPECT_NEAR(r.temps[k], T + dt / c.capacitance[k] * ((33 - T) / c.resistance[k] + gains - q_hvac), 1e-12);
    EXPECT_NEAR(r.q_hvac[k], q_hvac, 1e-12);
  }
  EXPECT_NEAR(r.power_kw, c.hvac_electric * thermal + light + c.base_load_occupied_kw, 1e-9);
  EXPECT_FALSE(r.clamped);
}

TEST(SimulateStep, OutOfRangeControlsAreClampedAndFlagged) {
  RcBuildingConfig c;
  const auto a = simulate_step(c, state_at({25, 25, 25}), {2, 10, 1.5}, {30, 0});
  const auto b = simulate_step(c, state_at({25, 25, 25}), c.bounds.clamp({2, 10, 1.5}), {30, 0});
  EXPECT_TRUE(a.clamped);
  EXPECT_EQ(a.power_kw, b.power_kw);
  EXPECT_EQ(a.temps, b.temps);
  expect_error(ErrorCode::InvalidArgument, [&] { simulate_step(c, state_at({25}), {}, {}); });
}

TEST(SimulateStep, RaisingZoneSetpointNeverIncreasesPower) {
  RcBuildingConfig c;
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const SimState s = state_at({rng.uniform(18, 32), rng.uniform(18, 32), rng.uniform(18, 32)}, "2013-07-17T10:00");
    const double chw = rng.uniform(5, 12), light = rng.uniform(0, 1);
    const double sp = rng.uniform(19, 27);
    const Weather w{rng.uniform(15, 40), rng.uniform(0, 900)};
    const double lo = simulate_step(c, s, {chw, sp, light}, w).power_kw;
    const double hi = simulate_step(c, s, {chw, sp + rng.uniform(0, 1), light}, w).power_kw;
    EXPECT_LE(hi, lo + 1e-12);
  }
}

TEST(SimulateStep, RelaxesMonotonicallyTowardOutside) {
  const auto c = one_zone(0.5, 8, 5);
  SimState s = state_at({18}, "2013-07-06T00:00");
  double prev = 18;
  for (int i = 0; i < 2000; ++i) {
    const auto r = simulate_step(c, s, {7, 28, 0}, {27, 0});  // outside stays below the set-point: coil idle
    EXPECT_EQ(r.hvac_kw, 0.0);
    EXPECT_GE(r.temps[0], prev);
    EXPECT_LE(r.temps[0], 27.0);
    prev = r.temps[0];
    s = r.next;
  }
  EXPECT_NEAR(prev, 27.0, 1e-6);
}

TEST(GenerateDataset, SixtyDaysShape) {
  RcBuildingConfig c;
  const auto ds = generate_dataset(c, 60);
  EXPECT_EQ(ds.size(), 17280u);
  EXPECT_EQ(ds.interval_minutes(), 5);
  const auto responses = ds.names_with_role(Role::Response);
  EXPECT_EQ(responses.size(), 1 + c.zones);
  EXPECT_EQ(std::count(responses.begin(), responses.end(), "kW"), 1);
  EXPECT_EQ(ds.names_with_role(Role::Control), (std::vector<std::string>{"chw_setpoint", "zone_setpoint", "lighting"}));
  EXPECT_EQ(ds.names_with_role(Role::Proxy).size(), 4u);
  EXPECT_EQ(ds.names_with_role(Role::Disturbance), (std::vector<std::string>{"oat", "solar"}));
}

TEST(GenerateDataset, PerturbationExcitesEveryControl) {
  RcBuildingConfig c;
  const auto ds = generate_dataset(c, 5);
  for (auto name : {"chw_setpoint", "zone_setpoint", "lighting"}) {
    const auto v = ds.values(name);
    std::set<double> distinct(v.begin(), v.end());
    EXPECT_GT(distinct.size(), 20u) << name;
    for (double x : v) {
      EXPECT_TRUE(std::isfinite(x));
    }
  }
  for (double p : ds.values("kW")) EXPECT_GT(p, 0);
}

TEST(GenerateDataset, NominalTailFollowsSchedule) {
  RcBuildingConfig c;
  GenerationOptions g;
  g.nominal_days = 2;
  const auto ds = generate_dataset(c, 4, g);
  const auto holidays = c.holiday_dates();
  for (std::size_t r = 2 * 288; r < ds.size(); ++r) {
    const auto nominal = nominal_controls(c, ds.timestamps()[r], holidays);
    ASSERT_EQ(ds.column("zone_setpoint")[r], nominal.zone_setpoint);
    ASSERT_EQ(ds.column("lighting")[r], nominal.lighting);
  }
  expect_error(ErrorCode::InvalidArgument, [&] {
    g.nominal_days = 5;
    generate_dataset(c, 4, g);
  });
}

TEST(GenerateDataset, ZeroPerturbationFlatScheduleGivesConstantControls) {
  RcBuildingConfig c;
  c.unoccupied = c.occupied;
  GenerationOptions g;
  g.setpoint_perturbation = 0;
  g.lighting_perturbation = 0;
  const auto ds = generate_dataset(c, 2, g);
  for (auto name : {"chw_setpoint", "zone_setpoint", "lighting"}) {
    const auto v = ds.values(name);
    EXPECT_TRUE(std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) << name;
  }
}

TEST(GenerateDataset, FixedSeedIsBitIdentical) {
  RcBuildingConfig c;
  c.seed = 99;
  const auto a = csv_text(generate_dataset(c, 3)), b = csv_text(generate_dataset(c, 3));
  EXPECT_EQ(a, b);
  c.seed = 100;
  EXPECT_NE(a, csv_text(generate_dataset(c, 3)));
}

TEST(GenerateDataset, Errors) {
  RcBuildingConfig c;
  expect_error(ErrorCode::InvalidArgument, [&] { generate_dataset(c, 0); });
  GenerationOptions g;
  g.start = "yesterday";
  expect_error(ErrorCode::InvalidArgument, [&] { generate_dataset(c, 1, g); });
  c.resistance = {1, 2};
  expect_error(ErrorCode::InvalidArgument, [&] { generate_dataset(c, 1); });
}

TEST(Weather, DailyShape) {
  const WeatherModel m;
  const auto w = generate_weather(m, ts("2013-07-01T00:00"), 288, 5, 1);
  ASSERT_EQ(w.size(), 288u);
  EXPECT_EQ(w[0].solar, 0.0);      // midnight
  EXPECT_EQ(w[12 * 3].solar, 0.0);  // 03:00
  EXPECT_GT(w[12 * 12].solar, 0.0);
  const double afternoon = w[12 * 15].t_out, predawn = w[12 * 4].t_out;
  EXPECT_GT(afternoon, predawn);
  const auto again = generate_weather(m, ts("2013-07-01T00:00"), 288, 5, 1);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(w[i].t_out, again[i].t_out);
}

TEST(GroundTruth, ZeroLengthStrategy) {
  RcBuildingConfig c;
  const auto r = ground_truth_strategy_energy(c, state_at({24, 24, 24}), Strategy{"empty", 5, {}}, {});
  EXPECT_EQ(r.energy_kwh, 0.0);
  EXPECT_TRUE(r.power.empty());
}

TEST(GroundTruth, LowerLightingUsesLessEnergy) {
  RcBuildingConfig c;
  const auto s0 = state_at({25, 25, 25}, "2013-07-17T15:00");
  const std::vector<Weather> w(12, Weather{32, 600});
  const auto full = ground_truth_strategy_energy(c, s0, Strategy::constant("L1", {8, 24, 1.0}, 12), w);
  const auto half = ground_truth_strategy_energy(c, s0, Strategy::constant("L05", {8, 24, 0.5}, 12), w);
  EXPECT_LT(half.energy_kwh, full.energy_kwh);
}

TEST(GroundTruth, EnergyIsHandSummedTrajectory) {
  RcBuildingConfig c;
  const auto holidays = c.holiday_dates();
  const auto w = generate_weather(WeatherModel{}, ts("2013-07-17T15:00"), 12, 5, 3);
  Strategy s{"ramp", 5, {}};
  for (int i = 0; i < 12; ++i) s.steps.push_back({7.0 + 0.2 * i, 23.5 + 0.1 * i, 0.9 - 0.03 * i});
  const auto s0 = state_at({24, 24.5, 25}, "2013-07-17T15:00");
  const auto r = ground_truth_strategy_energy(c, s0, s, w);
  SimState state = s0;
  double kwh = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    auto step = simulate_step(c, state, s.steps[i], w[i], holidays);
    EXPECT_EQ(step.power_kw, r.power[i]);
    kwh += step.power_kw * (5.0 / 60.0);
    state = step.next;
  }
  EXPECT_NEAR(r.energy_kwh, kwh, 1e-9);
  double from_trajectory = 0;
  for (double p : r.power) from_trajectory += p * c.dt_hours();
  EXPECT_NEAR(r.energy_kwh, from_trajectory, 1e-9);
  EXPECT_EQ(r.final_state.temps, state.temps);
  expect_error(ErrorCode::InvalidArgument, [&] { ground_truth_strategy_energy(c, s0, s, std::vector<Weather>(11)); });
}

TEST(ClosedLoopPlant, MatchesDirectSimulation) {
  RcBuildingConfig c;
  const auto w = generate_weather(WeatherModel{}, ts("2013-07-17T15:00"), 6, 5, 4);
  auto plant = std::make_shared<ClosedLoopPlant>(c, state_at({24, 24, 24}, "2013-07-17T15:00"), w);
  const auto fn = ClosedLoopPlant::bind(plant);
  const auto holidays = c.holiday_dates();
  SimState s = state_at({24, 24, 24}, "2013-07-17T15:00");
  for (std::size_t i = 0; i < 6; ++i) {
    FeatureVector u;
    u.set("zone_setpoint", 25.0);  // the other knobs stay on schedule
    const auto out = fn(i, u);
    Controls expected = nominal_controls(c, s.time, holidays);
    expected.zone_setpoint = 25.0;
    auto r = simulate_step(c, s, expected, w[i], holidays);
    EXPECT_EQ(out.at("kW"), r.power_kw);
    EXPECT_EQ(out.at("T_zone2"), r.temps[1]);
    s = r.next;
  }
  EXPECT_EQ(plant->record.power.size(), 6u);
  expect_error(ErrorCode::InsufficientHistory, [&] { fn(6, FeatureVector{}); });
}

TEST(SimulateNominal, HistoryEndsWhereStateBegins) {
  RcBuildingConfig c;
  const auto w = generate_weather(WeatherModel{}, ts("2013-08-05T00:00"), 200, 5, 2);
  const auto h = simulate_nominal(c, ts("2013-08-05T00:00"), 180, w);
  EXPECT_EQ(h.data.size(), 180u);
  EXPECT_EQ(h.state.time, ts("2013-08-05T15:00"));
  EXPECT_EQ(h.data.column("T_zone1")[179], h.state.temps[0]);
  expect_error(ErrorCode::InvalidArgument, [&] { simulate_nominal(c, ts("2013-08-05T00:00"), 300, w); });
}

TEST(TestbedConfig, JsonRoundTripAndValidation) {
  RcBuildingConfig c;
  c.seed = 42;
  c.zones = 2;
  c.resistance = {0.3, 0.4};
  c.capacitance = {9, 10};
  c.hvac_gain = {20, 21};
  c.internal_gain = {5, 6};
  c.solar_aperture = {1, 2};
  const auto back = nlohmann::json(c).get<RcBuildingConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  auto j = nlohmann::json(c);
  j["capacitance"] = {9, -1};
  expect_error(ErrorCode::InvalidArgument, [&] { (void)j.get<RcBuildingConfig>(); });
  j = nlohmann::json(c);
  j["zones"] = 0;
  expect_error(ErrorCode::InvalidArgument, [&] { (void)j.get<RcBuildingConfig>(); });
  const auto g = nlohmann::json{{"nominal_days", 3}, {"dwell_minutes", 30}}.get<GenerationOptions>();
  EXPECT_EQ(g.nominal_days, 3u);
  EXPECT_EQ(g.dwell_minutes, 30);
  EXPECT_EQ(g.setpoint_perturbation, 2.0);
}
