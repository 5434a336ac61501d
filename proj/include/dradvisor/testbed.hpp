#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dradvisor/data.hpp"
#include "dradvisor/error.hpp"
#include "dradvisor/rng.hpp"
#include "dradvisor/strategy.hpp"

namespace dra::testbed {

/// Multi-zone RC building. Zones are thermally independent (no wall coupling)
/// and share the plant-level set-points.
struct RcBuildingConfig {
  std::size_t zones = 3;
  int interval_minutes = 5;
  std::vector<double> resistance{0.35, 0.45, 0.30};   // °C/kW, envelope
  std::vector<double> capacitance{9.0, 12.0, 7.5};    // kWh/°C
  std::vector<double> hvac_gain{25.0, 20.0, 28.0};    // kW thermal per °C above set-point
  double hvac_electric = 0.35;                        // kW electric per kW thermal
  double chw_nominal = 7.0;                           // °C
  double chw_efficiency = 0.08;                       // capacity change per °C below nominal
  double lighting_peak_kw = 50.0;
  double lighting_heat_fraction = 0.6;                // share of lighting power entering zones
  std::vector<double> internal_gain{10.0, 12.0, 8.0};  // kW per zone when occupied
  double unoccupied_gain_fraction = 0.2;
  std::vector<double> solar_aperture{8.0, 4.0, 10.0};  // kW per kW/m² of solar flux
  double base_load_occupied_kw = 120.0;
  double base_load_unoccupied_kw = 80.0;
  int occupied_start_hour = 7;
  int occupied_end_hour = 19;
  ControlBounds bounds{};
  Controls occupied{7.0, 23.5, 0.9};
  Controls unoccupied{9.0, 26.0, 0.15};
  std::vector<std::string> holidays{"2013-07-04"};
  std::uint64_t seed = 1;

  void validate() const {
    require(zones >= 1, ErrorCode::InvalidArgument, "testbed needs at least one zone");
    require(interval_minutes > 0, ErrorCode::InvalidArgument, "interval must be positive");
    for (const auto* v : {&resistance, &capacitance, &hvac_gain, &internal_gain, &solar_aperture})
      require(v->size() == zones, ErrorCode::InvalidArgument, "per-zone parameter list length != zones");
    for (std::size_t k = 0; k < zones; ++k)
      require(resistance[k] > 0 && capacitance[k] > 0 && hvac_gain[k] > 0 && internal_gain[k] >= 0 && solar_aperture[k] >= 0,
              ErrorCode::InvalidArgument, "physical constants must be positive");
    require(hvac_electric > 0 && lighting_peak_kw >= 0 && chw_efficiency >= 0, ErrorCode::InvalidArgument, "physical constants must be positive");
  }

  double dt_hours() const { return interval_minutes / 60.0; }

  std::set<Date> holiday_dates() const {
    std::set<Date> out;
    for (const auto& h : holidays) {
      auto d = parse_date(h);
      if (!d) fail(ErrorCode::InvalidArgument, "bad holiday date '" + h + "'");
      out.insert(*d);
    }
    return out;
  }
};

inline void to_json(nlohmann::json& j, const RcBuildingConfig& c) {
  j = {{"zones", c.zones},
       {"interval_minutes", c.interval_minutes},
       {"resistance", c.resistance},
       {"capacitance", c.capacitance},
       {"hvac_gain", c.hvac_gain},
       {"hvac_electric", c.hvac_electric},
       {"chw_nominal", c.chw_nominal},
       {"chw_efficiency", c.chw_efficiency},
       {"lighting_peak_kw", c.lighting_peak_kw},
       {"lighting_heat_fraction", c.lighting_heat_fraction},
       {"internal_gain", c.internal_gain},
       {"unoccupied_gain_fraction", c.unoccupied_gain_fraction},
       {"solar_aperture", c.solar_aperture},
       {"base_load_occupied_kw", c.base_load_occupied_kw},
       {"base_load_unoccupied_kw", c.base_load_unoccupied_kw},
       {"occupied_start_hour", c.occupied_start_hour},
       {"occupied_end_hour", c.occupied_end_hour},
       {"bounds", c.bounds},
       {"occupied", c.occupied},
       {"unoccupied", c.unoccupied},
       {"holidays", c.holidays},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, RcBuildingConfig& c) {
  RcBuildingConfig d;
  c.zones = j.value("zones", d.zones);
  c.interval_minutes = j.value("interval_minutes", d.interval_minutes);
  c.resistance = j.value("resistance", d.resistance);
  c.capacitance = j.value("capacitance", d.capacitance);
  c.hvac_gain = j.value("hvac_gain", d.hvac_gain);
  c.hvac_electric = j.value("hvac_electric", d.hvac_electric);
  c.chw_nominal = j.value("chw_nominal", d.chw_nominal);
  c.chw_efficiency = j.value("chw_efficiency", d.chw_efficiency);
  c.lighting_peak_kw = j.value("lighting_peak_kw", d.lighting_peak_kw);
  c.lighting_heat_fraction = j.value("lighting_heat_fraction", d.lighting_heat_fraction);
  c.internal_gain = j.value("internal_gain", d.internal_gain);
  c.unoccupied_gain_fraction = j.value("unoccupied_gain_fraction", d.unoccupied_gain_fraction);
  c.solar_aperture = j.value("solar_aperture", d.solar_aperture);
  c.base_load_occupied_kw = j.value("base_load_occupied_kw", d.base_load_occupied_kw);
  c.base_load_unoccupied_kw = j.value("base_load_unoccupied_kw", d.base_load_unoccupied_kw);
  c.occupied_start_hour = j.value("occupied_start_hour", d.occupied_start_hour);
  c.occupied_end_hour = j.value("occupied_end_hour", d.occupied_end_hour);
  c.bounds = j.contains("bounds") ? j.at("bounds").get<ControlBounds>() : d.bounds;
  c.occupied = j.contains("occupied") ? j.at("occupied").get<Controls>() : d.occupied;
  c.unoccupied = j.contains("unoccupied") ? j.at("unoccupied").get<Controls>() : d.unoccupied;
  c.holidays = j.value("holidays", d.holidays);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

struct Weather {
  double t_out = 25.0;  // °C
  double solar = 0.0;   // W/m²
};

struct SimState {
  std::vector<double> temps;  // °C per zone
  Timestamp time{};
  std::size_t step = 0;
};

struct StepResult {
  SimState next;
  double power_kw = 0.0;
  std::vector<double> temps;  // zone temperatures at the end of the step
  // logged terms
  double hvac_kw = 0.0;
  double lighting_kw = 0.0;
  double base_kw = 0.0;
  std::vector<double> q_hvac;  // thermal extraction per zone, kW
  bool clamped = false;
};

inline bool occupied(const RcBuildingConfig& c, Timestamp t, const std::set<Date>& holidays) {
  const auto f = calendar_features(t, holidays);
  const double hour = f.time_of_day / 60.0;
  return !f.is_weekend && !f.is_holiday && hour >= c.occupied_start_hour && hour < c.occupied_end_hour;
}

inline Controls nominal_controls(const RcBuildingConfig& c, Timestamp t, const std::set<Date>& holidays) {
  return occupied(c, t, holidays) ? c.occupied : c.unoccupied;
}

/// Capacity multiplier of the cooling coil; colder chilled water extracts more heat.
inline double chw_factor(const RcBuildingConfig& c, double chw_setpoint) {
  return std::max(0.1, 1.0 + c.chw_efficiency * (c.chw_nominal - chw_setpoint));
}

/// One explicit-Euler step of every zone plus the electrical bookkeeping.
inline StepResult simulate_step(const RcBuildingConfig& c, const SimState& state, Controls u, Weather w,
                                const std::set<Date>& holidays = {}) {
  require(state.temps.size() == c.zones, ErrorCode::InvalidArgument, "state has wrong zone count");
  StepResult out;
  const Controls clamped = c.bounds.clamp(u);
  out.clamped = !(clamped == u);
  u = clamped;

  const bool occ = occupied(c, state.time, holidays);
  const double dt = c.dt_hours();
  const double factor = chw_factor(c, u.chw_setpoint);
  out.lighting_kw = u.lighting * c.lighting_peak_kw;
  out.base_kw = occ ? c.base_load_occupied_kw : c.base_load_unoccupied_kw;
  const double light_heat = out.lighting_kw * c.lighting_heat_fraction / static_cast<double>(c.zones);

  out.next.temps.resize(c.zones);
  out.q_hvac.resize(c.zones);
  double thermal = 0.0;
  for (std::size_t k = 0; k < c.zones; ++k) {
    const double T = state.temps[k];
    const double q_int = c.internal_gain[k] * (occ ? 1.0 : c.unoccupied_gain_fraction);
    const double q_solar = c.solar_aperture[k] * w.solar / 1000.0;
    const double q_hvac = c.hvac_gain[k] * std::max(0.0, T - u.zone_setpoint) * factor;
    out.q_hvac[k] = q_hvac;
    thermal += q_hvac;
    out.next.temps[k] = T + dt / c.capacitance[k] * ((w.t_out - T) / c.resistance[k] + q_int + q_solar + light_heat - q_hvac);
  }
  out.hvac_kw = c.hvac_electric * thermal;
  out.power_kw = out.hvac_kw + out.lighting_kw + out.base_kw;
  out.next.time = state.time + std::chrono::minutes{c.interval_minutes};
  out.next.step = state.step + 1;
  out.temps = out.next.temps;
  return out;
}

// ---------------------------------------------------------------------------
// Weather

struct WeatherModel {
  double mean_t_out = 26.0;
  double daily_amplitude = 6.0;
  double peak_hour = 15.0;
  double day_to_day_sd = 2.0;       // daily mean offset
  double noise_sd = 0.3;            // AR(1) innovation per step
  double noise_persistence = 0.98;
  double solar_peak = 900.0;        // W/m², clear sky at noon
  double cloudiness_min = 0.5;      // daily clear-sky fraction drawn in [min, 1]
};

inline void to_json(nlohmann::json& j, const WeatherModel& w) {
  j = {{"mean_t_out", w.mean_t_out},         {"daily_amplitude", w.daily_amplitude},     {"peak_hour", w.peak_hour},
       {"day_to_day_sd", w.day_to_day_sd},   {"noise_sd", w.noise_sd},                   {"noise_persistence", w.noise_persistence},
       {"solar_peak", w.solar_peak},         {"cloudiness_min", w.cloudiness_min}};
}

inline void from_json(const nlohmann::json& j, WeatherModel& w) {
  WeatherModel d;
  w.mean_t_out = j.value("mean_t_out", d.mean_t_out);
  w.daily_amplitude = j.value("daily_amplitude", d.daily_amplitude);
  w.peak_hour = j.value("peak_hour", d.peak_hour);
  w.day_to_day_sd = j.value("day_to_day_sd", d.day_to_day_sd);
  w.noise_sd = j.value("noise_sd", d.noise_sd);
  w.noise_persistence = j.value("noise_persistence", d.noise_persistence);
  w.solar_peak = j.value("solar_peak", d.solar_peak);
  w.cloudiness_min = j.value("cloudiness_min", d.cloudiness_min);
}

/// Sinusoidal daily temperature with seeded day-level offsets and AR(1) noise; half-sine solar.
inline std::vector<Weather> generate_weather(const WeatherModel& m, Timestamp start, std::size_t steps, int interval_minutes,
                                             std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x77656174));
  std::vector<Weather> out(steps);
  double noise = 0.0, offset = 0.0, cloud = 1.0;
  std::int64_t current_day = std::numeric_limits<std::int64_t>::min();
  for (std::size_t i = 0; i < steps; ++i) {
    const Timestamp t = start + std::chrono::minutes{interval_minutes * static_cast<std::int64_t>(i)};
    const auto day = std::chrono::floor<std::chrono::days>(t);
    if (day.time_since_epoch().count() != current_day) {
      current_day = day.time_since_epoch().count();
      offset = rng.normal(0.0, m.day_to_day_sd);
      cloud = rng.uniform(m.cloudiness_min, 1.0);
    }
    noise = m.noise_persistence * noise + rng.normal(0.0, m.noise_sd);
    const double hour = std::chrono::duration<double, std::ratio<3600>>(t - day).count();
    out[i].t_out = m.mean_t_out + offset + m.daily_amplitude * std::cos(2.0 * std::numbers::pi * (hour - m.peak_hour) / 24.0) + noise;
    out[i].solar = std::max(0.0, std::sin(std::numbers::pi * (hour - 6.0) / 12.0)) * m.solar_peak * cloud;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation

struct GenerationOptions {
  std::string start = "2013-06-01T00:00";
  WeatherModel weather{};
  double setpoint_perturbation = 2.0;   // ± °C on both set-points
  double lighting_perturbation = 0.3;   // ± fraction
  int dwell_minutes = 60;
  std::vector<double> initial_temps{};  // default: unoccupied set-point
  std::size_t nominal_days = 0;         // trailing days run the unperturbed schedule
};

inline void to_json(nlohmann::json& j, const GenerationOptions& g) {
  j = {{"start", g.start},
       {"weather", g.weather},
       {"setpoint_perturbation", g.setpoint_perturbation},
       {"lighting_perturbation", g.lighting_perturbation},
       {"dwell_minutes", g.dwell_minutes},
       {"nominal_days", g.nominal_days}};
}

inline void from_json(const nlohmann::json& j, GenerationOptions& g) {
  GenerationOptions d;
  g.start = j.value("start", d.start);
  g.weather = j.contains("weather") ? j.at("weather").get<WeatherModel>() : d.weather;
  g.setpoint_perturbation = j.value("setpoint_perturbation", d.setpoint_perturbation);
  g.lighting_perturbation = j.value("lighting_perturbation", d.lighting_perturbation);
  g.dwell_minutes = j.value("dwell_minutes", d.dwell_minutes);
  g.initial_temps = j.value("initial_temps", d.initial_temps);
  g.nominal_days = j.value("nominal_days", d.nominal_days);
}

inline std::string zone_name(std::size_t k) { return "T_zone" + std::to_string(k + 1); }
inline constexpr std::string_view kPower = "kW";
inline constexpr std::string_view kOutsideTemp = "oat";
inline constexpr std::string_view kSolar = "solar";

inline std::vector<std::string> zone_names(const RcBuildingConfig& c) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < c.zones; ++k) out.push_back(zone_name(k));
  return out;
}

/// Builds the dataset layout shared by generated data and recorded rollouts.
inline TimeStampedDataset make_dataset(const RcBuildingConfig& c, std::vector<Timestamp> ts, const std::vector<Weather>& weather,
                                       const std::vector<Controls>& controls, const std::vector<double>& power,
                                       const std::vector<std::vector<double>>& temps) {
  const std::size_t n = ts.size();
  std::vector<double> oat(n), solar(n), chw(n), sp(n), light(n);
  for (std::size_t i = 0; i < n; ++i) {
    oat[i] = weather[i].t_out;
    solar[i] = weather[i].solar;
    chw[i] = controls[i].chw_setpoint;
    sp[i] = controls[i].zone_setpoint;
    light[i] = controls[i].lighting;
  }
  std::vector<Column> cols;
  cols.emplace_back(ColumnSpec{std::string(kOutsideTemp), ColumnKind::Continuous, Role::Disturbance, "degC", {}}, std::move(oat));
  cols.emplace_back(ColumnSpec{std::string(kSolar), ColumnKind::Continuous, Role::Disturbance, "W/m2", {}}, std::move(solar));
  cols.emplace_back(ColumnSpec{std::string(kChwSetpoint), ColumnKind::Continuous, Role::Control, "degC", {}}, std::move(chw));
  cols.emplace_back(ColumnSpec{std::string(kZoneSetpoint), ColumnKind::Continuous, Role::Control, "degC", {}}, std::move(sp));
  cols.emplace_back(ColumnSpec{std::string(kLighting), ColumnKind::Continuous, Role::Control, "fraction", {}}, std::move(light));
  for (std::size_t k = 0; k < c.zones; ++k) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = temps[i][k];
    cols.emplace_back(ColumnSpec{zone_name(k), ColumnKind::Continuous, Role::Response, "degC", {}}, std::move(v));
  }
  cols.emplace_back(ColumnSpec{std::string(kPower), ColumnKind::Continuous, Role::Response, "kW", {}}, power);
  TimeStampedDataset ds(std::move(ts), std::move(cols), c.interval_minutes);
  return derive_proxy_features(ds, c.holiday_dates());
}

/// Simulates `days` of operation with seeded set-point excitation around the nominal schedule.
inline TimeStampedDataset generate_dataset(const RcBuildingConfig& c, std::size_t days, const GenerationOptions& options = {}) {
  c.validate();
  require(days >= 1, ErrorCode::InvalidArgument, "days must be >= 1");
  const auto start = parse_timestamp(options.start);
  if (!start) fail(ErrorCode::InvalidArgument, "bad start timestamp '" + options.start + "'");
  const std::size_t steps_per_day = static_cast<std::size_t>(24 * 60 / c.interval_minutes);
  const std::size_t n = days * steps_per_day;
  const auto holidays = c.holiday_dates();
  const auto weather = generate_weather(options.weather, *start, n, c.interval_minutes, c.seed);

  Rng rng(Rng::derive(c.seed, 0x6578636974));
  SimState state;
  state.time = *start;
  state.temps = options.initial_temps.empty() ? std::vector<double>(c.zones, c.unoccupied.zone_setpoint) : options.initial_temps;
  require(state.temps.size() == c.zones, ErrorCode::InvalidArgument, "initial_temps length != zones");
  require(options.nominal_days <= days, ErrorCode::InvalidArgument, "nominal_days exceeds days");
  const std::size_t perturbed = (days - options.nominal_days) * steps_per_day;

  const std::size_t dwell = static_cast<std::size_t>(std::max(1, options.dwell_minutes / c.interval_minutes));
  Controls offset{0, 0, 0};
  std::vector<Timestamp> ts(n);
  std::vector<Controls> controls(n);
  std::vector<double> power(n);
  std::vector<std::vector<double>> temps(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == perturbed) offset = {0, 0, 0};
    if (i % dwell == 0 && i < perturbed) {
      offset.chw_setpoint = rng.uniform(-1.0, 1.0) * options.setpoint_perturbation;
      offset.zone_setpoint = rng.uniform(-1.0, 1.0) * options.setpoint_perturbation;
      offset.lighting = rng.uniform(-1.0, 1.0) * options.lighting_perturbation;
    }
    const Controls nominal = nominal_controls(c, state.time, holidays);
    const Controls u = c.bounds.clamp({nominal.chw_setpoint + offset.chw_setpoint, nominal.zone_setpoint + offset.zone_setpoint,
                                       nominal.lighting + offset.lighting});
    ts[i] = state.time;
    controls[i] = u;
    auto r = simulate_step(c, state, u, weather[i], holidays);
    power[i] = r.power_kw;
    temps[i] = r.temps;
    state = std::move(r.next);
  }
  return make_dataset(c, std::move(ts), weather, controls, power, temps);
}

// ---------------------------------------------------------------------------
// Rollouts

struct Rollout {
  std::vector<double> power;               // kW per step
  std::vector<std::vector<double>> temps;  // per step, per zone (end of step)
  double energy_kwh = 0.0;
  SimState final_state;
};

/// Closed-loop rollout of a fixed schedule; energy = sum(power * dt).
inline Rollout ground_truth_strategy_energy(const RcBuildingConfig& c, const SimState& initial, const Strategy& strategy,
                                            const std::vector<Weather>& weather) {
  if (strategy.horizon() != weather.size())
    fail(ErrorCode::InvalidArgument, "strategy horizon " + std::to_string(strategy.horizon()) + " != weather trace " + std::to_string(weather.size()));
  const auto holidays = c.holiday_dates();
  Rollout out;
  SimState state = initial;
  for (std::size_t i = 0; i < strategy.horizon(); ++i) {
    auto r = simulate_step(c, state, strategy.steps[i], weather[i], holidays);
    out.power.push_back(r.power_kw);
    out.temps.push_back(r.temps);
    out.energy_kwh += r.power_kw * c.dt_hours();
    state = std::move(r.next);
  }
  out.final_state = std::move(state);
  return out;
}

/// Plant for closed-loop synthesis: named controls in, measured power and zone temperatures out.
/// Controls missing from the input keep their nominal schedule value.
struct ClosedLoopPlant {
  RcBuildingConfig config;
  SimState state;
  std::vector<Weather> weather;
  Rollout record;

  ClosedLoopPlant(RcBuildingConfig c, SimState initial, std::vector<Weather> w)
      : config(std::move(c)), state(std::move(initial)), weather(std::move(w)), holidays_(config.holiday_dates()) {}

  std::map<std::string, double, std::less<>> apply(std::size_t step, const FeatureVector& u) {
    require(step < weather.size(), ErrorCode::InsufficientHistory, "plant weather trace exhausted at step " + std::to_string(step));
    Controls c = nominal_controls(config, state.time, holidays_);
    if (auto v = u.get(kChwSetpoint)) c.chw_setpoint = *v;
    if (auto v = u.get(kZoneSetpoint)) c.zone_setpoint = *v;
    if (auto v = u.get(kLighting)) c.lighting = *v;
    auto r = simulate_step(config, state, c, weather[step], holidays_);
    record.power.push_back(r.power_kw);
    record.temps.push_back(r.temps);
    record.energy_kwh += r.power_kw * config.dt_hours();
    state = r.next;
    record.final_state = state;
    std::map<std::string, double, std::less<>> out{{std::string(kPower), r.power_kw}};
    for (std::size_t k = 0; k < config.zones; ++k) out[zone_name(k)] = r.temps[k];
    return out;
  }

  /// Callable view sharing this plant's state.
  static std::function<std::map<std::string, double, std::less<>>(std::size_t, const FeatureVector&)> bind(std::shared_ptr<ClosedLoopPlant> p) {
    return [p](std::size_t step, const FeatureVector& u) { return p->apply(step, u); };
  }

 private:
  std::set<Date> holidays_;
};

/// Simulated history under the nominal schedule: the state a DR event starts from.
struct History {
  TimeStampedDataset data;
  SimState state;  // plant state right after the last recorded row
};

inline History simulate_nominal(const RcBuildingConfig& c, Timestamp start, std::size_t steps, const std::vector<Weather>& weather,
                                std::vector<double> initial_temps = {}) {
  require(weather.size() >= steps, ErrorCode::InvalidArgument, "weather trace shorter than history");
  const auto holidays = c.holiday_dates();
  SimState state{initial_temps.empty() ? std::vector<double>(c.zones, c.unoccupied.zone_setpoint) : std::move(initial_temps), start, 0};
  std::vector<Timestamp> ts;
  std::vector<Controls> controls;
  std::vector<double> power;
  std::vector<std::vector<double>> temps;
  for (std::size_t i = 0; i < steps; ++i) {
    const Controls u = nominal_controls(c, state.time, holidays);
    ts.push_back(state.time);
    controls.push_back(u);
    auto r = simulate_step(c, state, u, weather[i], holidays);
    power.push_back(r.power_kw);
    temps.push_back(r.temps);
    state = std::move(r.next);
  }
  std::vector<Weather> w(weather.begin(), weather.begin() + static_cast<std::ptrdiff_t>(steps));
  return {make_dataset(c, std::move(ts), w, controls, power, temps), std::move(state)};
}

}  // namespace dra::testbed
