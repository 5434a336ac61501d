#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dradvisor/data.hpp"
#include "dradvisor/evaluate.hpp"
#include "dradvisor/horizon.hpp"
#include "dradvisor/mbcrt.hpp"
#include "dradvisor/service/registry.hpp"
#include "dradvisor/strategy.hpp"
#include "dradvisor/testbed.hpp"

// JSON-level operations shared by the CLI and the HTTP API, so both produce identical numbers.
namespace dra::service {

struct ForecastRows {
  std::vector<FeatureVector> rows;
  std::vector<std::optional<Timestamp>> timestamps;
};

inline void add_calendar(FeatureVector& fv, Timestamp t, const std::set<Date>& holidays) {
  const auto f = calendar_features(t, holidays);
  if (!fv.get(kDayOfWeek)) fv.set(kDayOfWeek, f.day_of_week);
  if (!fv.get(kTimeOfDay)) fv.set(kTimeOfDay, f.time_of_day);
  if (!fv.get(kIsWeekend)) fv.set(kIsWeekend, f.is_weekend);
  if (!fv.get(kIsHoliday)) fv.set(kIsHoliday, f.is_holiday);
}

/// Array of {timestamp?, name: number...}; proxies are derived from timestamps when absent.
inline ForecastRows rows_from_json(const nlohmann::json& j, const std::set<Date>& holidays = {}) {
  if (!j.is_array()) fail(ErrorCode::InvalidArgument, "forecast must be an array of rows");
  ForecastRows out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& row = j[i];
    if (!row.is_object()) fail(ErrorCode::InvalidArgument, "forecast row " + std::to_string(i) + " is not an object");
    FeatureVector fv;
    std::optional<Timestamp> ts;
    for (const auto& [key, value] : row.items()) {
      if (key == "timestamp") {
        ts = parse_timestamp(value.get<std::string>());
        if (!ts) fail(ErrorCode::ParseError, "bad timestamp in forecast row " + std::to_string(i));
      } else if (value.is_number()) {
        fv.set(key, value.get<double>());
      } else {
        fail(ErrorCode::InvalidArgument, "forecast field '" + key + "' in row " + std::to_string(i) + " is not numeric");
      }
    }
    if (ts) add_calendar(fv, *ts, holidays);
    out.rows.push_back(std::move(fv));
    out.timestamps.push_back(ts);
  }
  return out;
}

inline nlohmann::json rows_to_json(const TimeStampedDataset& ds, std::size_t begin, std::size_t end) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t r = begin; r < end; ++r) {
    nlohmann::json row = {{"timestamp", format_timestamp(ds.timestamps()[r])}};
    for (const auto& c : ds.columns()) row[c.name()] = c[r];
    out.push_back(std::move(row));
  }
  return out;
}

inline ForecastRows rows_from_dataset(const TimeStampedDataset& ds, std::size_t begin, std::size_t end) {
  ForecastRows out;
  for (std::size_t r = begin; r < end; ++r) {
    out.rows.push_back(ds.row(r));
    out.timestamps.push_back(ds.timestamps()[r]);
  }
  return out;
}

inline LagHistory history_from_json(const nlohmann::json& j) {
  LagHistory h;
  if (j.is_null()) return h;
  if (!j.is_object()) fail(ErrorCode::InvalidArgument, "history must map response names to most-recent-first arrays");
  for (const auto& [name, values] : j.items()) h[name] = values.get<std::vector<double>>();
  return h;
}

/// Most-recent-first values of every response column in rows [0, end).
inline LagHistory history_from_dataset(const TimeStampedDataset& ds, std::size_t end, std::size_t depth = 48) {
  LagHistory h;
  for (const auto& c : ds.columns()) {
    if (c.role() != Role::Response) continue;
    auto& v = h[c.name()];
    for (std::size_t i = 0; i < depth && i < end; ++i) v.push_back(c[end - 1 - i]);
  }
  return h;
}

inline nlohmann::json lag_history_json(const LagHistory& h) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : h) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------
// Baseline prediction

inline std::vector<double> predict_baseline(const AnyModel& model, const ForecastRows& forecast, const LagHistory& history) {
  if (const auto* r = std::get_if<Regressor>(&model)) {
    std::vector<double> out;
    for (const auto& row : forecast.rows) out.push_back(r->predict(row));
    return out;
  }
  if (const auto* ar = std::get_if<AutoRegressiveTreeModel>(&model))
    return forecast_recursive(*ar, forecast.rows, initial_lags_for(history, *ar));
  fail(ErrorCode::InvalidArgument, "baseline prediction needs a tree, forest, brt or ar model");
}

inline nlohmann::json baseline_json(const std::string& name, const ForecastRows& forecast, const std::vector<double>& predictions) {
  nlohmann::json ts = nlohmann::json::array();
  for (const auto& t : forecast.timestamps) ts.push_back(t ? nlohmann::json(format_timestamp(*t)) : nlohmann::json(nullptr));
  return {{"model", name}, {"timestamps", ts}, {"predictions", predictions}};
}

// ---------------------------------------------------------------------------
// Strategy evaluation

struct ModelSet {
  AutoRegressiveTreeModel power;
  std::vector<AutoRegressiveTreeModel> zones;  // in the order the power model consumes them
};

/// The power model is the one consuming the other models' responses as exogenous inputs.
inline ModelSet arrange_models(const std::vector<AutoRegressiveTreeModel>& models) {
  require(!models.empty(), ErrorCode::InvalidArgument, "strategy evaluation needs at least one ar model");
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& candidate = models[i];
    std::vector<AutoRegressiveTreeModel> zones;
    bool all = true;
    for (std::size_t k = 0; k < models.size() && all; ++k) {
      if (k == i) continue;
      all = std::find(candidate.exogenous.begin(), candidate.exogenous.end(), models[k].response) != candidate.exogenous.end();
    }
    if (!all) continue;
    for (const auto& e : candidate.exogenous)
      for (std::size_t k = 0; k < models.size(); ++k)
        if (k != i && models[k].response == e) zones.push_back(models[k]);
    return {candidate, std::move(zones)};
  }
  fail(ErrorCode::InvalidArgument, "no model consumes the other models' responses; cannot identify the power model");
}

inline nlohmann::json evaluate_json(const std::vector<AutoRegressiveTreeModel>& models, const std::vector<Strategy>& strategies,
                                    const ForecastRows& forecast, const LagHistory& history) {
  require(!strategies.empty(), ErrorCode::InvalidArgument, "no strategies to evaluate");
  const auto set = arrange_models(models);
  const auto report = evaluate_strategies(set.power, set.zones, strategies, forecast.rows, history, strategies.front().interval_minutes);
  auto j = report.to_json();
  j["power_model"] = set.power.response;
  nlohmann::json zones = nlohmann::json::array();
  for (const auto& z : set.zones) zones.push_back(z.response);
  j["zone_models"] = zones;
  return j;
}

// ---------------------------------------------------------------------------
// Synthesis

inline nlohmann::json step_json(const std::vector<std::string>& controls, const SynthesisStep& s) {
  nlohmann::json u = nlohmann::json::object();
  for (std::size_t j = 0; j < controls.size(); ++j) u[controls[j]] = s.u[j];
  return {{"u*", u},
          {"kW_hat", s.kw_hat},
          {"T_hat", s.t_hat},
          {"region_ids", s.region_ids},
          {"objective", s.objective},
          {"status", to_string(s.status)},
          {"violated_rows", s.violated_rows}};
}

inline SynthesisConfig synthesis_config_from(const nlohmann::json& j, const MbcrtModel& model) {
  SynthesisConfig c = j.is_null() ? SynthesisConfig{} : j.get<SynthesisConfig>();
  if (c.t_ref.empty()) c.t_ref.assign(model.zones(), 23.5);
  c.validate(model.zones());
  return c;
}

inline nlohmann::json synthesize_step_json(const MbcrtModel& model, const FeatureVector& x_d, const SynthesisConfig& config) {
  return step_json(model.partition.controls, synthesize_step(model, x_d, config));
}

/// Closed-loop plant on the built-in testbed, started from the supplied zone temperatures.
inline std::shared_ptr<testbed::ClosedLoopPlant> make_testbed_plant(const testbed::RcBuildingConfig& config, std::vector<double> temps,
                                                                    Timestamp start, const ForecastRows& forecast) {
  require(temps.size() == config.zones, ErrorCode::InvalidArgument, "initial temperatures needed for every testbed zone");
  std::vector<testbed::Weather> weather;
  for (const auto& row : forecast.rows) {
    auto t = row.get(testbed::kOutsideTemp);
    auto s = row.get(testbed::kSolar);
    if (!t || !s) fail(ErrorCode::SchemaMismatch, "closed-loop forecast rows need oat and solar");
    weather.push_back({*t, *s});
  }
  return std::make_shared<testbed::ClosedLoopPlant>(config, testbed::SimState{std::move(temps), start, 0}, std::move(weather));
}

// ---------------------------------------------------------------------------
// What-if rollouts on the testbed

inline nlohmann::json rollout_json(const testbed::Rollout& r) {
  return {{"power", r.power}, {"temps", r.temps}, {"energy_kwh", r.energy_kwh}};
}

/// {strategy, config?, initial: {temps, time}, weather: [{t_out, solar}]} -> ground-truth trajectory.
inline nlohmann::json whatif_json(const nlohmann::json& req) {
  const auto strategy = Strategy::from_json(req.at("strategy"));
  testbed::RcBuildingConfig config = req.contains("config") ? req.at("config").get<testbed::RcBuildingConfig>() : testbed::RcBuildingConfig{};
  config.validate();
  testbed::SimState state;
  const auto& init = req.value("initial", nlohmann::json::object());
  state.temps = init.value("temps", std::vector<double>(config.zones, config.occupied.zone_setpoint));
  require(state.temps.size() == config.zones, ErrorCode::InvalidArgument, "initial temps must cover every zone");
  if (init.contains("time")) {
    auto t = parse_timestamp(init.at("time").get<std::string>());
    if (!t) fail(ErrorCode::ParseError, "bad initial time");
    state.time = *t;
  }
  std::vector<testbed::Weather> weather;
  for (const auto& w : req.at("weather")) weather.push_back({w.at("t_out").get<double>(), w.at("solar").get<double>()});
  return rollout_json(testbed::ground_truth_strategy_energy(config, state, strategy, weather));
}

// ---------------------------------------------------------------------------
// Reporting

inline nlohmann::json report_json(std::span<const double> baseline, std::span<const double> actual, int interval_minutes, const Tariff& tariff) {
  const auto c = curtailment_report(baseline, actual, interval_minutes);
  auto j = nlohmann::json{{"curtailment", c.to_json()}};
  const double kw = std::max(0.0, c.avg_kw);
  j["revenue"] = revenue(kw, tariff).to_json();
  j["tariff"] = tariff;
  return j;
}

}  // namespace dra::service
