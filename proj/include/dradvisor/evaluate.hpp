#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dradvisor/error.hpp"

namespace dra {

struct AccuracyReport {
  double rmse = 0.0;
  double mean = 0.0;
  double nrmse = 0.0;
  double accuracy = 0.0;  // 1 - nrmse
  std::size_t n = 0;

  nlohmann::json to_json() const { return {{"rmse", rmse}, {"mean", mean}, {"nrmse", nrmse}, {"accuracy", accuracy}, {"n", n}}; }
};

/// RMSE normalized by the mean of the actuals.
inline AccuracyReport accuracy(std::span<const double> actual, std::span<const double> predicted) {
  require(actual.size() == predicted.size(), ErrorCode::InvalidArgument,
          "actual has " + std::to_string(actual.size()) + " values, predicted " + std::to_string(predicted.size()));
  require(!actual.empty(), ErrorCode::InvalidArgument, "accuracy needs at least one point");
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    sum += actual[i];
    const double e = actual[i] - predicted[i];
    sq += e * e;
  }
  AccuracyReport r;
  r.n = actual.size();
  r.mean = sum / static_cast<double>(r.n);
  if (r.mean == 0.0) fail(ErrorCode::UndefinedMetric, "NRMSE is undefined for zero-mean actuals");
  r.rmse = std::sqrt(sq / static_cast<double>(r.n));
  r.nrmse = r.rmse / r.mean;
  r.accuracy = 1.0 - r.nrmse;
  return r;
}

/// Coefficient of variation in percent, normalized by the mean of the given actuals.
inline double cv_statistic(std::span<const double> actual, std::span<const double> predicted) {
  return 100.0 * accuracy(actual, predicted).nrmse;
}

struct Tariff {
  double reservation_rate = 25.0;  // $/kW/month
  double energy_rate = 1.0;        // $/kWh
  double months = 4.0;
  double events_per_month = 5.0;
  double event_hours = 1.0;

  void validate() const {
    for (double v : {reservation_rate, energy_rate, months, events_per_month, event_hours})
      require(v >= 0.0 && std::isfinite(v), ErrorCode::InvalidArgument, "tariff terms must be nonnegative");
  }
};

inline void to_json(nlohmann::json& j, const Tariff& t) {
  j = {{"reservation_rate", t.reservation_rate}, {"energy_rate", t.energy_rate}, {"months", t.months},
       {"events_per_month", t.events_per_month}, {"event_hours", t.event_hours}};
}

inline void from_json(const nlohmann::json& j, Tariff& t) {
  Tariff d;
  t.reservation_rate = j.value("reservation_rate", d.reservation_rate);
  t.energy_rate = j.value("energy_rate", d.energy_rate);
  t.months = j.value("months", d.months);
  t.events_per_month = j.value("events_per_month", d.events_per_month);
  t.event_hours = j.value("event_hours", d.event_hours);
  t.validate();
}

struct Revenue {
  double curtailed_kw = 0.0;
  double reservation = 0.0;
  double energy = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const {
    return {{"curtailed_kw", curtailed_kw}, {"reservation", reservation}, {"energy", energy}, {"total", total}};
  }
};

inline Revenue revenue(double curtailed_kw, const Tariff& tariff) {
  tariff.validate();
  require(curtailed_kw >= 0.0, ErrorCode::InvalidArgument, "curtailed kW must be nonnegative");
  Revenue r;
  r.curtailed_kw = curtailed_kw;
  r.reservation = curtailed_kw * tariff.reservation_rate * tariff.months;
  r.energy = curtailed_kw * tariff.event_hours * tariff.events_per_month * tariff.months * tariff.energy_rate;
  r.total = r.reservation + r.energy;
  return r;
}

struct CurtailmentReport {
  std::vector<double> curtailment_kw;  // baseline - actual, negative when above baseline
  double avg_kw = 0.0;
  double total_kwh = 0.0;
  double baseline_kwh = 0.0;
  double percent = 0.0;  // of baseline energy

  nlohmann::json to_json() const {
    return {{"curtailment_kw", curtailment_kw}, {"avg_kw", avg_kw}, {"total_kwh", total_kwh}, {"baseline_kwh", baseline_kwh}, {"percent", percent}};
  }
};

inline CurtailmentReport curtailment_report(std::span<const double> baseline, std::span<const double> actual, int interval_minutes) {
  require(baseline.size() == actual.size(), ErrorCode::InvalidArgument,
          "baseline has " + std::to_string(baseline.size()) + " steps, actual " + std::to_string(actual.size()));
  require(interval_minutes > 0, ErrorCode::InvalidArgument, "interval must be positive");
  const double dt = interval_minutes / 60.0;
  CurtailmentReport r;
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    r.curtailment_kw.push_back(baseline[i] - actual[i]);
    r.total_kwh += r.curtailment_kw.back() * dt;
    r.baseline_kwh += baseline[i] * dt;
  }
  if (!baseline.empty()) r.avg_kw = r.total_kwh / (dt * static_cast<double>(baseline.size()));
  r.percent = r.baseline_kwh != 0.0 ? 100.0 * r.total_kwh / r.baseline_kwh : 0.0;
  return r;
}

/// Aligned plain-text table; numeric cells right-aligned.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    require(row.size() == header_.size(), ErrorCode::InvalidArgument, "table row width mismatch");
    rows_.push_back(std::move(row));
  }

  static std::string num(double v, int precision = 2) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
  }

  std::string render() const {
    std::vector<std::size_t> width(header_.size());
    for (std::size_t c = 0; c < header_.size(); ++c) {
      width[c] = header_[c].size();
      for (const auto& r : rows_) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells, bool left_first) {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c) out << "  ";
        if (c == 0 && left_first)
          out << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
        else
          out << std::right << std::setw(static_cast<int>(width[c])) << cells[c];
      }
      out << '\n';
    };
    line(header_, true);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& r : rows_) line(r, true);
    return out.str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace dra
