#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dradvisor/error.hpp"

namespace dra {

using Timestamp = std::chrono::sys_seconds;  // timezone-naive local wall time
using Date = std::chrono::year_month_day;

enum class ColumnKind { Continuous, Categorical };
enum class Role { Disturbance, Control, Proxy, Response, LaggedResponse };

inline std::string_view to_string(ColumnKind kind) { return kind == ColumnKind::Continuous ? "continuous" : "categorical"; }

inline std::string_view to_string(Role role) {
  switch (role) {
    case Role::Disturbance: return "disturbance";
    case Role::Control: return "control";
    case Role::Proxy: return "proxy";
    case Role::Response: return "response";
    case Role::LaggedResponse: return "lagged_response";
  }
  return "disturbance";
}

inline ColumnKind parse_kind(std::string_view s) {
  if (s == "continuous") return ColumnKind::Continuous;
  if (s == "categorical") return ColumnKind::Categorical;
  fail(ErrorCode::SchemaMismatch, "unknown column kind '" + std::string(s) + "'");
}

inline Role parse_role(std::string_view s) {
  if (s == "disturbance") return Role::Disturbance;
  if (s == "control") return Role::Control;
  if (s == "proxy") return Role::Proxy;
  if (s == "response") return Role::Response;
  if (s == "lagged_response") return Role::LaggedResponse;
  fail(ErrorCode::SchemaMismatch, "unknown column role '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Timestamps

inline std::optional<Timestamp> parse_timestamp(std::string_view text) {
  // YYYY-MM-DDTHH:MM[:SS] with 'T' or ' ' separator; a trailing 'Z' is ignored.
  auto digits = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > text.size()) return false;
    auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
    return ec == std::errc{} && p == text.data() + pos + len;
  };
  while (!text.empty() && (text.back() == 'Z' || text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (text.size() < 16 || !digits(0, 4, y) || text[4] != '-' || !digits(5, 2, mo) || text[7] != '-' || !digits(8, 2, d) ||
      (text[10] != 'T' && text[10] != ' ') || !digits(11, 2, h) || text[13] != ':' || !digits(14, 2, mi)) {
    return std::nullopt;
  }
  if (text.size() > 16) {
    if (text.size() != 19 || text[16] != ':' || !digits(17, 2, s)) return std::nullopt;
  }
  const Date date{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)}, std::chrono::day{static_cast<unsigned>(d)}};
  if (!date.ok() || h > 23 || mi > 59 || s > 59) return std::nullopt;
  return std::chrono::sys_days{date} + std::chrono::hours{h} + std::chrono::minutes{mi} + std::chrono::seconds{s};
}

inline std::string format_timestamp(Timestamp t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const Date date{day};
  const std::chrono::hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(date.year()), static_cast<unsigned>(date.month()),
                static_cast<unsigned>(date.day()), static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

inline std::optional<Date> parse_date(std::string_view text) {
  auto ts = parse_timestamp(std::string(text) + "T00:00");
  if (!ts) return std::nullopt;
  return Date{std::chrono::floor<std::chrono::days>(*ts)};
}

/// 17 significant digits; parses back to the same double.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Schema

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  Role role = Role::Disturbance;
  std::string units;
  std::vector<int> codes;  // declared code set for categorical columns; empty = any integer
};

inline void to_json(nlohmann::json& j, const ColumnSpec& c) {
  j = {{"name", c.name}, {"kind", to_string(c.kind)}, {"role", to_string(c.role)}, {"units", c.units}};
  if (!c.codes.empty()) j["codes"] = c.codes;
}

inline void from_json(const nlohmann::json& j, ColumnSpec& c) {
  if (!j.is_object() || !j.contains("name")) fail(ErrorCode::SchemaMismatch, "schema entry without a name");
  c.name = j.at("name").get<std::string>();
  c.kind = parse_kind(j.value("kind", std::string("continuous")));
  c.role = parse_role(j.value("role", std::string("disturbance")));
  c.units = j.value("units", std::string());
  c.codes = j.value("codes", std::vector<int>{});
}

/// Sidecar schema: a JSON list of {name, kind, role, units, codes?}.
struct Schema {
  std::vector<ColumnSpec> columns;

  const ColumnSpec* find(std::string_view name) const {
    for (const auto& c : columns)
      if (c.name == name) return &c;
    return nullptr;
  }

  static Schema from_json(const nlohmann::json& j) {
    Schema s;
    const auto& list = j.is_object() && j.contains("columns") ? j.at("columns") : j;
    if (!list.is_array()) fail(ErrorCode::SchemaMismatch, "schema must be a JSON list of column declarations");
    for (const auto& entry : list) s.columns.push_back(entry.get<ColumnSpec>());
    return s;
  }

  nlohmann::json to_json() const { return nlohmann::json(columns); }

  static Schema load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::SchemaMismatch, "cannot open schema file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::SchemaMismatch, "malformed schema " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
    out << to_json().dump(2) << "\n";
  }
};

/// Conventional sidecar location: data.csv -> data.schema.json
inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".schema.json");
  return p;
}

// ---------------------------------------------------------------------------
// Columns and datasets

class Column {
 public:
  Column(ColumnSpec spec, std::vector<double> values) : spec_(std::move(spec)), values_(std::move(values)) {
    if (spec_.kind == ColumnKind::Categorical) {
      for (std::size_t i = 0; i < values_.size(); ++i) {
        const double v = values_[i];
        if (v != std::floor(v)) fail(ErrorCode::SchemaMismatch, "categorical column '" + spec_.name + "' has non-integer value");
        if (!spec_.codes.empty() &&
            std::find(spec_.codes.begin(), spec_.codes.end(), static_cast<int>(v)) == spec_.codes.end()) {
          fail(ErrorCode::SchemaMismatch, "categorical column '" + spec_.name + "' value " + format_number(v) + " outside code set");
        }
      }
    }
  }

  const ColumnSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }
  ColumnKind kind() const { return spec_.kind; }
  Role role() const { return spec_.role; }
  const std::string& units() const { return spec_.units; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  ColumnSpec spec_;
  std::vector<double> values_;
};

/// Row-major numeric matrix with named columns; the input to every learner.
struct DesignMatrix {
  std::vector<std::string> names;
  std::vector<ColumnKind> kinds;
  std::size_t rows = 0;
  std::vector<double> data;

  DesignMatrix() = default;
  DesignMatrix(std::vector<std::string> names_, std::vector<ColumnKind> kinds_, std::size_t rows_)
      : names(std::move(names_)), kinds(std::move(kinds_)), rows(rows_), data(rows_ * names.size(), 0.0) {}

  /// Continuous matrix from nested rows.
  static DesignMatrix from_rows(const std::vector<std::vector<double>>& values, std::vector<std::string> names_ = {}) {
    const std::size_t cols = values.empty() ? names_.size() : values.front().size();
    if (names_.empty())
      for (std::size_t c = 0; c < cols; ++c) names_.push_back("x" + std::to_string(c + 1));
    DesignMatrix m(std::move(names_), std::vector<ColumnKind>(cols, ColumnKind::Continuous), values.size());
    for (std::size_t r = 0; r < values.size(); ++r) {
      require(values[r].size() == cols, ErrorCode::InvalidArgument, "ragged design matrix");
      std::copy(values[r].begin(), values[r].end(), m.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
    }
    return m;
  }

  std::size_t cols() const { return names.size(); }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }
};

/// Named feature values, e.g. one forecast row.
struct FeatureVector {
  std::vector<std::string> names;
  std::vector<double> values;

  void set(std::string_view name, double v) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) {
        values[i] = v;
        return;
      }
    }
    names.emplace_back(name);
    values.push_back(v);
  }

  std::optional<double> get(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return values[i];
    return std::nullopt;
  }

  /// Values aligned to `schema`; missing names throw SchemaMismatch.
  std::vector<double> aligned(std::span<const std::string> schema) const {
    std::vector<double> out(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
      auto v = get(schema[i]);
      if (!v) fail(ErrorCode::SchemaMismatch, "feature '" + schema[i] + "' missing from input");
      out[i] = *v;
    }
    return out;
  }
};

class TimeStampedDataset {
 public:
  TimeStampedDataset() = default;

  TimeStampedDataset(std::vector<Timestamp> timestamps, std::vector<Column> columns, int interval_minutes)
      : timestamps_(std::move(timestamps)), columns_(std::move(columns)), interval_minutes_(interval_minutes) {
    require(interval_minutes_ > 0, ErrorCode::InvalidArgument, "interval_minutes must be positive");
    const auto step = std::chrono::minutes{interval_minutes_};
    for (std::size_t i = 1; i < timestamps_.size(); ++i) {
      if (timestamps_[i] - timestamps_[i - 1] != step) {
        fail(ErrorCode::IrregularInterval, "row " + std::to_string(i + 1) + " (" + format_timestamp(timestamps_[i]) +
                                               ") breaks the " + std::to_string(interval_minutes_) + "-minute interval");
      }
    }
    std::set<std::string> seen;
    for (const auto& c : columns_) {
      require(c.size() == timestamps_.size(), ErrorCode::InvalidArgument, "column '" + c.name() + "' length mismatch");
      require(seen.insert(c.name()).second, ErrorCode::SchemaMismatch, "duplicate column '" + c.name() + "'");
      require(c.name() != "timestamp", ErrorCode::SchemaMismatch, "'timestamp' is reserved");
    }
  }

  std::size_t size() const { return timestamps_.size(); }
  bool empty() const { return timestamps_.empty(); }
  int interval_minutes() const { return interval_minutes_; }
  double interval_hours() const { return interval_minutes_ / 60.0; }
  std::span<const Timestamp> timestamps() const { return timestamps_; }
  std::span<const Column> columns() const { return columns_; }

  bool has_column(std::string_view name) const { return find(name) != nullptr; }

  const Column* find(std::string_view name) const {
    for (const auto& c : columns_)
      if (c.name() == name) return &c;
    return nullptr;
  }

  const Column& column(std::string_view name) const {
    if (const auto* c = find(name)) return *c;
    fail(ErrorCode::SchemaMismatch, "no column '" + std::string(name) + "'");
  }

  std::vector<std::string> names_with_role(Role role) const {
    std::vector<std::string> out;
    for (const auto& c : columns_)
      if (c.role() == role) out.push_back(c.name());
    return out;
  }

  Schema schema() const {
    Schema s;
    for (const auto& c : columns_) s.columns.push_back(c.spec());
    return s;
  }

  /// New dataset with extra columns appended (same timestamps).
  TimeStampedDataset with_columns(std::vector<Column> extra) const {
    std::vector<Column> cols = columns_;
    for (auto& c : extra) {
      if (has_column(c.name())) fail(ErrorCode::SchemaMismatch, "column '" + c.name() + "' already exists");
      cols.push_back(std::move(c));
    }
    return TimeStampedDataset(timestamps_, std::move(cols), interval_minutes_);
  }

  /// Rows [begin, end).
  TimeStampedDataset slice(std::size_t begin, std::size_t end) const {
    require(begin <= end && end <= size(), ErrorCode::InvalidArgument, "slice out of range");
    std::vector<Timestamp> ts(timestamps_.begin() + static_cast<std::ptrdiff_t>(begin), timestamps_.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<Column> cols;
    cols.reserve(columns_.size());
    for (const auto& c : columns_) {
      auto v = c.values();
      cols.emplace_back(c.spec(), std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end)));
    }
    return TimeStampedDataset(std::move(ts), std::move(cols), interval_minutes_);
  }

  /// Row index of timestamp `t`, if present.
  std::optional<std::size_t> row_at(Timestamp t) const {
    auto it = std::lower_bound(timestamps_.begin(), timestamps_.end(), t);
    if (it == timestamps_.end() || *it != t) return std::nullopt;
    return static_cast<std::size_t>(it - timestamps_.begin());
  }

  DesignMatrix matrix(std::span<const std::string> features) const {
    std::vector<const Column*> cols;
    std::vector<ColumnKind> kinds;
    for (const auto& f : features) {
      cols.push_back(&column(f));
      kinds.push_back(cols.back()->kind());
    }
    DesignMatrix m(std::vector<std::string>(features.begin(), features.end()), std::move(kinds), size());
    for (std::size_t r = 0; r < size(); ++r)
      for (std::size_t c = 0; c < cols.size(); ++c) m.at(r, c) = (*cols[c])[r];
    return m;
  }

  std::vector<double> values(std::string_view name) const {
    auto v = column(name).values();
    return {v.begin(), v.end()};
  }

  FeatureVector row(std::size_t r) const {
    FeatureVector fv;
    for (const auto& c : columns_) {
      fv.names.push_back(c.name());
      fv.values.push_back(c[r]);
    }
    return fv;
  }

 private:
  std::vector<Timestamp> timestamps_;
  std::vector<Column> columns_;
  int interval_minutes_ = 1;
};

/// Row-wise concatenation; `tail` must continue `head` at the same interval.
inline TimeStampedDataset concat(const TimeStampedDataset& head, const TimeStampedDataset& tail) {
  require(head.interval_minutes() == tail.interval_minutes(), ErrorCode::InvalidArgument, "interval mismatch");
  require(head.columns().size() == tail.columns().size(), ErrorCode::SchemaMismatch, "column count mismatch");
  std::vector<Timestamp> ts(head.timestamps().begin(), head.timestamps().end());
  ts.insert(ts.end(), tail.timestamps().begin(), tail.timestamps().end());
  std::vector<Column> cols;
  for (const auto& c : head.columns()) {
    std::vector<double> v(c.values().begin(), c.values().end());
    auto other = tail.column(c.name()).values();
    v.insert(v.end(), other.begin(), other.end());
    cols.emplace_back(c.spec(), std::move(v));
  }
  return TimeStampedDataset(std::move(ts), std::move(cols), head.interval_minutes());
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct LoadOptions {
  bool require_response = true;
  int interval_minutes = 0;  // only consulted for single-row files
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  out.push_back(cell);
  for (auto& c : out) {
    auto b = c.find_first_not_of(" \t");
    auto e = c.find_last_not_of(" \t");
    c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string row_list(const std::vector<std::size_t>& rows) {
  std::string out;
  for (std::size_t i = 0; i < rows.size() && i < 20; ++i) out += (i ? ", " : "") + std::to_string(rows[i]);
  if (rows.size() > 20) out += ", ... (" + std::to_string(rows.size()) + " rows)";
  return out;
}

}  // namespace detail

inline TimeStampedDataset parse_csv(std::istream& in, const Schema& schema, const LoadOptions& options = {}) {
  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos) fail(ErrorCode::EmptyData, "empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = detail::split_csv_line(line);
  if (header.empty() || header.front() != "timestamp") fail(ErrorCode::SchemaMismatch, "first column must be 'timestamp'");

  std::vector<ColumnSpec> specs;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto* spec = schema.find(header[c]);
    if (!spec) fail(ErrorCode::SchemaMismatch, "unknown column '" + header[c] + "' not declared in schema");
    specs.push_back(*spec);
  }
  for (const auto& spec : schema.columns) {
    if (std::find(header.begin() + 1, header.end(), spec.name) == header.end())
      fail(ErrorCode::SchemaMismatch, "schema column '" + spec.name + "' missing from file header");
  }

  std::vector<Timestamp> ts;
  std::vector<std::vector<double>> values(specs.size());
  std::vector<std::size_t> bad_rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    bool ok = cells.size() == header.size();
    std::optional<Timestamp> t;
    std::vector<double> parsed(specs.size());
    if (ok) {
      t = parse_timestamp(cells[0]);
      ok = t.has_value();
      for (std::size_t c = 0; ok && c < specs.size(); ++c) {
        auto v = detail::parse_double(cells[c + 1]);
        ok = v.has_value();
        if (ok) parsed[c] = *v;
      }
    }
    if (!ok) {
      bad_rows.push_back(row);
      continue;
    }
    ts.push_back(*t);
    for (std::size_t c = 0; c < specs.size(); ++c) values[c].push_back(parsed[c]);
  }
  if (!bad_rows.empty()) fail(ErrorCode::ParseError, "unparseable or missing cells in rows " + detail::row_list(bad_rows));
  if (ts.empty()) fail(ErrorCode::EmptyData, "no data rows");

  int interval = options.interval_minutes;
  if (ts.size() >= 2) {
    // Smallest gap is the nominal interval, so a skip at row 2 is reported at row 2.
    long long smallest = 0;
    for (std::size_t i = 1; i < ts.size(); ++i) {
      const auto diff = std::chrono::duration_cast<std::chrono::seconds>(ts[i] - ts[i - 1]).count();
      if (diff <= 0 || diff % 60 != 0)
        fail(ErrorCode::IrregularInterval, "row " + std::to_string(i + 1) + " is not a whole number of minutes after row " + std::to_string(i));
      if (smallest == 0 || diff < smallest) smallest = diff;
    }
    interval = static_cast<int>(smallest / 60);
  }
  require(interval > 0, ErrorCode::IrregularInterval, "cannot infer interval from a single row");

  std::vector<Column> cols;
  for (std::size_t c = 0; c < specs.size(); ++c) cols.emplace_back(specs[c], std::move(values[c]));
  TimeStampedDataset ds(std::move(ts), std::move(cols), interval);
  if (options.require_response && ds.names_with_role(Role::Response).empty())
    fail(ErrorCode::SchemaMismatch, "dataset has no response column");
  return ds;
}

inline TimeStampedDataset load_csv(const std::filesystem::path& path, const Schema& schema, const LoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return parse_csv(in, schema, options);
}

/// Schema that declares every non-timestamp header column continuous/disturbance;
/// for forecast files that come without a sidecar.
inline Schema infer_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::EmptyData, "empty file");
  Schema s;
  const auto header = detail::split_csv_line(line);
  for (std::size_t c = 1; c < header.size(); ++c) s.columns.push_back({header[c], ColumnKind::Continuous, Role::Disturbance, "", {}});
  return s;
}

inline void write_csv(std::ostream& out, const TimeStampedDataset& ds) {
  out << "timestamp";
  for (const auto& c : ds.columns()) out << ',' << c.name();
  out << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out << format_timestamp(ds.timestamps()[r]);
    for (const auto& c : ds.columns()) out << ',' << format_number(c[r]);
    out << '\n';
  }
}

inline void write_csv(const std::filesystem::path& path, const TimeStampedDataset& ds, bool with_sidecar = true) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  write_csv(out, ds);
  if (with_sidecar) ds.schema().save(sidecar_path(path));
}

// ---------------------------------------------------------------------------
// Feature derivation

inline constexpr std::string_view kDayOfWeek = "day_of_week";
inline constexpr std::string_view kTimeOfDay = "time_of_day";
inline constexpr std::string_view kIsWeekend = "is_weekend";
inline constexpr std::string_view kIsHoliday = "is_holiday";

struct CalendarFeatures {
  int day_of_week;     // Monday = 1 ... Sunday = 7
  double time_of_day;  // minutes since midnight
  int is_weekend;
  int is_holiday;
};

inline CalendarFeatures calendar_features(Timestamp t, const std::set<Date>& holidays = {}) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::weekday wd{day};
  const int dow = static_cast<int>(wd.iso_encoding());
  const double minutes = std::chrono::duration<double, std::ratio<60>>(t - day).count();
  return {dow, minutes, dow >= 6 ? 1 : 0, holidays.count(Date{day}) ? 1 : 0};
}

/// Appends day_of_week, time_of_day, is_weekend and is_holiday as proxy columns.
inline TimeStampedDataset derive_proxy_features(const TimeStampedDataset& ds, const std::set<Date>& holidays = {}) {
  for (auto name : {kDayOfWeek, kTimeOfDay, kIsWeekend, kIsHoliday})
    if (ds.has_column(name)) fail(ErrorCode::SchemaMismatch, "proxy column '" + std::string(name) + "' already present");
  std::vector<double> dow, tod, wkend, hol;
  for (auto t : ds.timestamps()) {
    const auto f = calendar_features(t, holidays);
    dow.push_back(f.day_of_week);
    tod.push_back(f.time_of_day);
    wkend.push_back(f.is_weekend);
    hol.push_back(f.is_holiday);
  }
  std::vector<Column> extra;
  extra.emplace_back(ColumnSpec{std::string(kDayOfWeek), ColumnKind::Categorical, Role::Proxy, "day", {1, 2, 3, 4, 5, 6, 7}}, std::move(dow));
  extra.emplace_back(ColumnSpec{std::string(kTimeOfDay), ColumnKind::Continuous, Role::Proxy, "min", {}}, std::move(tod));
  extra.emplace_back(ColumnSpec{std::string(kIsWeekend), ColumnKind::Categorical, Role::Proxy, "flag", {0, 1}}, std::move(wkend));
  extra.emplace_back(ColumnSpec{std::string(kIsHoliday), ColumnKind::Categorical, Role::Proxy, "flag", {0, 1}}, std::move(hol));
  return ds.with_columns(std::move(extra));
}

/// Column name for the j-th lag of `response`.
inline std::string lag_name(std::string_view response, std::size_t j) { return std::string(response) + "_lag_" + std::to_string(j); }

/// Splits "<response>_lag_<j>" back into its parts.
inline std::optional<std::pair<std::string, std::size_t>> parse_lag_name(std::string_view name) {
  const auto pos = name.rfind("_lag_");
  if (pos == std::string_view::npos || pos == 0) return std::nullopt;
  std::size_t j = 0;
  auto digits = name.substr(pos + 5);
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), j);
  if (ec != std::errc{} || p != digits.data() + digits.size() || j == 0) return std::nullopt;
  return std::make_pair(std::string(name.substr(0, pos)), j);
}

/// Appends <response>_lag_1..<response>_lag_delta and drops the first delta rows.
inline TimeStampedDataset add_lagged_response(const TimeStampedDataset& ds, std::string_view response, std::size_t delta) {
  require(delta >= 1, ErrorCode::InvalidArgument, "auto-regression order must be >= 1");
  const auto& src = ds.column(response);
  if (delta >= ds.size())
    fail(ErrorCode::InsufficientHistory, "order " + std::to_string(delta) + " needs more than " + std::to_string(ds.size()) + " rows");
  const std::size_t n = ds.size() - delta;
  std::vector<Column> extra;
  for (std::size_t j = 1; j <= delta; ++j) {
    std::vector<double> v(n);
    for (std::size_t r = 0; r < n; ++r) v[r] = src[r + delta - j];
    extra.emplace_back(ColumnSpec{lag_name(response, j), ColumnKind::Continuous, Role::LaggedResponse, src.units(), {}}, std::move(v));
  }
  return ds.slice(delta, ds.size()).with_columns(std::move(extra));
}

/// First ceil(n * train_fraction) rows train, the rest test; both non-empty.
inline std::pair<TimeStampedDataset, TimeStampedDataset> chronological_split(const TimeStampedDataset& ds, double train_fraction) {
  if (ds.empty()) fail(ErrorCode::EmptyData, "cannot split an empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(ErrorCode::InvalidArgument, "train fraction must be in (0, 1)");
  const double raw = static_cast<double>(ds.size()) * train_fraction;
  const auto n_train = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  if (n_train == 0 || n_train >= ds.size())
    fail(ErrorCode::InvalidArgument, "split of " + std::to_string(ds.size()) + " rows at " + format_number(train_fraction) + " leaves an empty half");
  return {ds.slice(0, n_train), ds.slice(n_train, ds.size())};
}

}  // namespace dra
