#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "dradvisor/data.hpp"
#include "dradvisor/ensemble.hpp"
#include "dradvisor/error.hpp"
#include "dradvisor/strategy.hpp"

namespace dra {

/// Learner trained on exogenous features plus <response>_lag_1..delta.
struct AutoRegressiveTreeModel {
  Regressor base;
  std::size_t delta = 1;
  std::string response;
  std::vector<std::string> exogenous;

  /// One prediction; `lags` most-recent-first, at least delta long.
  double predict_one(const FeatureVector& exo, std::span<const double> lags) const {
    if (lags.size() < delta)
      fail(ErrorCode::InsufficientHistory, response + " needs " + std::to_string(delta) + " lags, got " + std::to_string(lags.size()));
    const auto& names = base.features();
    std::vector<double> x(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (auto lag = parse_lag_name(names[i]); lag && lag->first == response && lag->second <= delta) {
        x[i] = lags[lag->second - 1];
      } else if (auto v = exo.get(names[i])) {
        x[i] = *v;
      } else {
        fail(ErrorCode::SchemaMismatch, "forecast lacks feature '" + names[i] + "'");
      }
    }
    return base.predict(std::span<const double>(x));
  }

  nlohmann::json to_json() const {
    return {{"type", "ar"}, {"response", response}, {"delta", delta}, {"exogenous", exogenous}, {"base", base.to_json()}};
  }

  static AutoRegressiveTreeModel from_json(const nlohmann::json& j) {
    try {
      AutoRegressiveTreeModel m;
      m.response = j.at("response").get<std::string>();
      m.delta = j.at("delta").get<std::size_t>();
      m.exogenous = j.at("exogenous").get<std::vector<std::string>>();
      m.base = Regressor::from_json(j.at("base"));
      return m;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("malformed ar model: ") + e.what());
    }
  }
};

inline AutoRegressiveTreeModel fit_ar(const TimeStampedDataset& ds, std::string_view response, std::size_t delta,
                                      std::vector<std::string> exogenous, const LearnerConfig& learner = {}) {
  ds.column(response);
  for (const auto& e : exogenous) {
    ds.column(e);
    require(e != response, ErrorCode::InvalidArgument, "the response cannot also be exogenous");
  }
  const auto lagged = add_lagged_response(ds, response, delta);
  std::vector<std::string> features = exogenous;
  for (std::size_t j = 1; j <= delta; ++j) features.push_back(lag_name(response, j));
  const auto X = lagged.matrix(features);
  const auto y = lagged.values(response);
  AutoRegressiveTreeModel m;
  m.base = fit_learner(X, y, learner);
  m.delta = delta;
  m.response = std::string(response);
  m.exogenous = std::move(exogenous);
  return m;
}

/// Most-recent-first window of a response, fed by predictions during recursion.
class LagWindow {
 public:
  LagWindow() = default;
  explicit LagWindow(std::span<const double> most_recent_first) : values_(most_recent_first.begin(), most_recent_first.end()) {}

  void push(double v) {
    values_.push_front(v);
    if (values_.size() > capacity_) values_.pop_back();
  }

  void reserve(std::size_t n) { capacity_ = std::max(n, values_.size()); }
  std::size_t size() const { return values_.size(); }
  std::vector<double> values() const { return {values_.begin(), values_.end()}; }

 private:
  std::deque<double> values_;
  std::size_t capacity_ = std::numeric_limits<std::size_t>::max();
};

/// ŷ(t) = f(exo(t), ŷ(t-1)..ŷ(t-δ)), predictions standing in for unavailable truth.
inline std::vector<double> forecast_recursive(const AutoRegressiveTreeModel& model, const std::vector<FeatureVector>& exo,
                                              std::span<const double> initial_lags) {
  if (initial_lags.size() < model.delta)
    fail(ErrorCode::InsufficientHistory,
         "need " + std::to_string(model.delta) + " initial lags of " + model.response + ", got " + std::to_string(initial_lags.size()));
  LagWindow lags(initial_lags.first(model.delta));
  std::vector<double> out;
  out.reserve(exo.size());
  for (const auto& row : exo) {
    const auto window = lags.values();
    const double y = model.predict_one(row, window);
    out.push_back(y);
    lags.push(y);
  }
  return out;
}

struct StrategyForecast {
  std::string name;
  std::vector<double> kw;                       // per step
  std::vector<std::vector<double>> zone_temps;  // per step, per zone
  double energy_kwh = 0.0;
};

struct EvaluationReport {
  std::vector<StrategyForecast> strategies;  // input order
  std::vector<std::string> ranking;          // ascending predicted energy, ties in input order
  std::string chosen;

  nlohmann::json to_json() const {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& f : strategies)
      s.push_back({{"name", f.name}, {"kw", f.kw}, {"zone_temps", f.zone_temps}, {"energy_kwh", f.energy_kwh}});
    return {{"strategies", s}, {"ranking", ranking}, {"chosen", chosen}};
  }
};

/// Recent history of each response, most-recent-first, keyed by response name.
using LagHistory = std::map<std::string, std::vector<double>, std::less<>>;

inline std::vector<double> initial_lags_for(const LagHistory& history, const AutoRegressiveTreeModel& m) {
  auto it = history.find(m.response);
  if (it == history.end()) fail(ErrorCode::InsufficientHistory, "no history supplied for " + m.response);
  if (it->second.size() < m.delta)
    fail(ErrorCode::InsufficientHistory,
         "need " + std::to_string(m.delta) + " lags of " + m.response + ", got " + std::to_string(it->second.size()));
  return {it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(m.delta)};
}

/// Zone temperatures first, then power from the temperature forecast, per step and strategy.
inline StrategyForecast forecast_strategy(const AutoRegressiveTreeModel& power, const std::vector<AutoRegressiveTreeModel>& zones,
                                          const Strategy& strategy, const std::vector<FeatureVector>& weather, const LagHistory& history,
                                          int interval_minutes) {
  std::vector<LagWindow> zone_lags;
  for (const auto& z : zones) zone_lags.emplace_back(initial_lags_for(history, z));
  LagWindow power_lags(initial_lags_for(history, power));
  StrategyForecast out;
  out.name = strategy.name;
  for (std::size_t t = 0; t < strategy.horizon(); ++t) {
    FeatureVector row = weather[t];
    strategy.steps[t].write_to(row);
    std::vector<double> temps(zones.size());
    for (std::size_t k = 0; k < zones.size(); ++k) {
      temps[k] = zones[k].predict_one(row, zone_lags[k].values());
      zone_lags[k].push(temps[k]);
    }
    for (std::size_t k = 0; k < zones.size(); ++k) row.set(zones[k].response, temps[k]);
    const double kw = power.predict_one(row, power_lags.values());
    power_lags.push(kw);
    out.kw.push_back(kw);
    out.zone_temps.push_back(std::move(temps));
    out.energy_kwh += kw * interval_minutes / 60.0;
  }
  return out;
}

inline EvaluationReport evaluate_strategies(const AutoRegressiveTreeModel& power, const std::vector<AutoRegressiveTreeModel>& zones,
                                            const std::vector<Strategy>& strategies, const std::vector<FeatureVector>& weather,
                                            const LagHistory& history, int interval_minutes = 5) {
  require(!strategies.empty(), ErrorCode::InvalidArgument, "no strategies to evaluate");
  const std::size_t H = strategies.front().horizon();
  for (const auto& s : strategies) {
    if (s.horizon() != H)
      fail(ErrorCode::InvalidArgument, "strategy '" + s.name + "' has horizon " + std::to_string(s.horizon()) + ", expected " + std::to_string(H));
    if (s.interval_minutes != interval_minutes)
      fail(ErrorCode::InvalidArgument, "strategy '" + s.name + "' interval differs from the model interval");
  }
  if (weather.size() < H)
    fail(ErrorCode::InvalidArgument, "weather forecast covers " + std::to_string(weather.size()) + " of " + std::to_string(H) + " steps");

  EvaluationReport report;
  report.strategies.resize(strategies.size());
  detail::parallel_for(strategies.size(), [&](std::size_t i) {
    report.strategies[i] = forecast_strategy(power, zones, strategies[i], weather, history, interval_minutes);
  });
  std::vector<std::size_t> order(strategies.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return report.strategies[a].energy_kwh < report.strategies[b].energy_kwh; });
  for (auto i : order) report.ranking.push_back(report.strategies[i].name);
  report.chosen = report.ranking.front();
  return report;
}

}  // namespace dra
