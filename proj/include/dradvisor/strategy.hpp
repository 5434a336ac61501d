#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dradvisor/data.hpp"
#include "dradvisor/error.hpp"

namespace dra {

inline constexpr std::string_view kChwSetpoint = "chw_setpoint";
inline constexpr std::string_view kZoneSetpoint = "zone_setpoint";
inline constexpr std::string_view kLighting = "lighting";

/// One step of set-points: chilled water (°C), zone cooling (°C), lighting fraction.
struct Controls {
  double chw_setpoint = 7.0;
  double zone_setpoint = 23.5;
  double lighting = 1.0;

  void write_to(FeatureVector& fv) const {
    fv.set(kChwSetpoint, chw_setpoint);
    fv.set(kZoneSetpoint, zone_setpoint);
    fv.set(kLighting, lighting);
  }

  friend bool operator==(const Controls&, const Controls&) = default;
};

inline void to_json(nlohmann::json& j, const Controls& c) {
  j = {{kChwSetpoint, c.chw_setpoint}, {kZoneSetpoint, c.zone_setpoint}, {kLighting, c.lighting}};
}

inline void from_json(const nlohmann::json& j, Controls& c) {
  c.chw_setpoint = j.at(kChwSetpoint).get<double>();
  c.zone_setpoint = j.at(kZoneSetpoint).get<double>();
  c.lighting = j.at(kLighting).get<double>();
}

/// Safe range of each control knob.
struct ControlBounds {
  double chw_lo = 5.0, chw_hi = 12.0;
  double zone_lo = 19.0, zone_hi = 28.0;
  double lighting_lo = 0.0, lighting_hi = 1.0;

  bool contains(const Controls& c) const {
    return c.chw_setpoint >= chw_lo && c.chw_setpoint <= chw_hi && c.zone_setpoint >= zone_lo && c.zone_setpoint <= zone_hi &&
           c.lighting >= lighting_lo && c.lighting <= lighting_hi;
  }

  Controls clamp(const Controls& c) const {
    return {std::clamp(c.chw_setpoint, chw_lo, chw_hi), std::clamp(c.zone_setpoint, zone_lo, zone_hi),
            std::clamp(c.lighting, lighting_lo, lighting_hi)};
  }
};

inline void to_json(nlohmann::json& j, const ControlBounds& b) {
  j = {{kChwSetpoint, {b.chw_lo, b.chw_hi}}, {kZoneSetpoint, {b.zone_lo, b.zone_hi}}, {kLighting, {b.lighting_lo, b.lighting_hi}}};
}

inline void from_json(const nlohmann::json& j, ControlBounds& b) {
  auto pair = [&](std::string_view key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    require(v.size() == 2 && v[0] <= v[1], ErrorCode::InvalidArgument, "bounds for " + std::string(key) + " must be [lo, hi]");
    lo = v[0];
    hi = v[1];
  };
  pair(kChwSetpoint, b.chw_lo, b.chw_hi);
  pair(kZoneSetpoint, b.zone_lo, b.zone_hi);
  pair(kLighting, b.lighting_lo, b.lighting_hi);
}

/// A fixed rule-based DR schedule over H steps.
struct Strategy {
  std::string name;
  int interval_minutes = 5;
  std::vector<Controls> steps;

  std::size_t horizon() const { return steps.size(); }

  /// Constant set-points for `steps` steps.
  static Strategy constant(std::string name, Controls c, std::size_t steps, int interval_minutes = 5) {
    return {std::move(name), interval_minutes, std::vector<Controls>(steps, c)};
  }

  void validate(const ControlBounds& bounds) const {
    for (std::size_t i = 0; i < steps.size(); ++i)
      if (!bounds.contains(steps[i])) fail(ErrorCode::InvalidArgument, "strategy '" + name + "' step " + std::to_string(i) + " outside safe range");
  }

  nlohmann::json to_json() const { return {{"name", name}, {"interval_minutes", interval_minutes}, {"steps", steps}}; }

  static Strategy from_json(const nlohmann::json& j) {
    try {
      Strategy s;
      s.name = j.at("name").get<std::string>();
      s.interval_minutes = j.value("interval_minutes", 5);
      s.steps = j.at("steps").get<std::vector<Controls>>();
      return s;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("malformed strategy: ") + e.what());
    }
  }

  static Strategy load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
  }
};

}  // namespace dra
