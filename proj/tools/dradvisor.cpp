#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dradvisor/dradvisor.hpp"
#include "dradvisor/service/core.hpp"
#include "dradvisor/service/http.hpp"
#include "dradvisor/service/registry.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dra;
using namespace dra::service;

namespace {

constexpr const char* kRegistryEnv = "DRADVISOR_REGISTRY";

// ---------------------------------------------------------------------------
// File helpers

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

/// CSV with its sidecar schema when present, otherwise every column as a disturbance.
TimeStampedDataset load_table(const fs::path& path) {
  const auto sidecar = sidecar_path(path);
  const Schema schema = fs::exists(sidecar) ? Schema::load(sidecar) : infer_schema(path);
  LoadOptions options;
  options.require_response = false;
  return load_csv(path, schema, options);
}

std::optional<Timestamp> flag_time(const std::string& text, const std::string& flag) {
  if (text.empty()) return std::nullopt;
  auto t = parse_timestamp(text);
  if (!t) fail(ErrorCode::InvalidArgument, flag + ": bad timestamp '" + text + "'");
  return t;
}

/// First row at or after t.
std::size_t lower_row(const TimeStampedDataset& ds, Timestamp t) {
  const auto ts = ds.timestamps();
  return static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), t) - ts.begin());
}

std::pair<std::size_t, std::size_t> window(const TimeStampedDataset& ds, const std::string& from, const std::string& until) {
  const std::size_t begin = flag_time(from, "--from") ? lower_row(ds, *flag_time(from, "--from")) : 0;
  const std::size_t end = flag_time(until, "--until") ? lower_row(ds, *flag_time(until, "--until")) : ds.size();
  if (begin >= end) fail(ErrorCode::EmptyData, "time window selects no rows");
  return {begin, end};
}

std::vector<std::string> names_with_roles(const TimeStampedDataset& ds, std::initializer_list<Role> roles) {
  std::vector<std::string> out;
  for (const auto& c : ds.columns())
    if (std::find(roles.begin(), roles.end(), c.role()) != roles.end()) out.push_back(c.name());
  return out;
}

std::optional<fs::path> registry_dir(const std::string& flag) {
  if (!flag.empty()) return fs::path(flag);
  if (const char* env = std::getenv(kRegistryEnv); env && *env) return fs::path(env);
  return std::nullopt;
}

/// A model file path, or a name looked up in the registry.
std::shared_ptr<const LoadedModel> resolve_model(const std::string& spec, const std::string& registry) {
  if (fs::is_regular_file(spec)) return std::make_shared<const LoadedModel>(load_model_file(spec));
  if (auto dir = registry_dir(registry)) return ModelRegistry(*dir).get(spec);
  fail(ErrorCode::NotFound, "no model file '" + spec + "' and no registry configured (--registry or " + kRegistryEnv + ")");
}

LagHistory history_for(const TimeStampedDataset& ds, std::size_t begin, const std::string& history_file) {
  if (!history_file.empty()) return history_from_json(read_json(history_file));
  return history_from_dataset(ds, begin);
}

void emit(const json& j, const std::string& out, bool to_stdout) {
  if (!out.empty()) write_text(out, j.dump() + "\n");
  if (to_stdout) std::cout << j.dump() << "\n";
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string config;
  std::size_t days = 67;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string start;
};

int run_simulate(const SimulateArgs& a) {
  const json cfg = a.config.empty() ? json::object() : read_json(a.config);
  auto building = cfg.contains("building") ? cfg.at("building").get<testbed::RcBuildingConfig>() : testbed::RcBuildingConfig{};
  auto generation = cfg.contains("generation") ? cfg.at("generation").get<testbed::GenerationOptions>() : testbed::GenerationOptions{};
  if (a.seed) building.seed = *a.seed;
  if (!a.start.empty()) generation.start = a.start;
  const auto ds = testbed::generate_dataset(building, a.days, generation);
  write_csv(a.out, ds);
  std::cout << "wrote " << ds.size() << " rows (" << a.days << " days at " << ds.interval_minutes() << " min) to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data, schema, kind, out, name, from, until;
  std::string response;
  std::vector<std::string> features;
  std::vector<std::string> exogenous, extra_exogenous;
  std::string learner = "brt";
  std::size_t delta = 6;
  std::size_t min_leaf = 0, max_depth = 0;
  std::size_t n_trees = 100, n_stages = 200, cv_folds = 5, mtry = 0;
  double shrinkage = 0.1;
  std::uint64_t seed = 0;
  std::string power = std::string(testbed::kPower);
  std::vector<std::string> zones, controls, disturbances;
  std::size_t lag_delta = 1;
  std::string x_safe;
  bool strict = false;
};

LearnerConfig learner_config(const TrainArgs& a, LearnerKind kind) {
  LearnerConfig c;
  c.kind = kind;
  if (a.min_leaf) c.tree.min_leaf = a.min_leaf;
  if (a.max_depth) c.tree.max_depth = a.max_depth;
  c.cv_folds = a.cv_folds;
  c.n_trees = a.n_trees;
  if (a.mtry) c.mtry = a.mtry;
  c.seed = a.seed;
  c.n_stages = a.n_stages;
  c.shrinkage = a.shrinkage;
  if (kind == LearnerKind::Brt) {
    auto brt = brt_default_config();
    if (a.min_leaf) brt.min_leaf = a.min_leaf;
    if (a.max_depth) brt.max_depth = a.max_depth;
    c.brt_tree = brt;
  }
  return c;
}

json learner_json(const LearnerConfig& c) {
  return {{"learner", to_string(c.kind)}, {"tree", c.tree},         {"cv_folds", c.cv_folds},
          {"n_trees", c.n_trees},         {"seed", c.seed},         {"n_stages", c.n_stages},
          {"shrinkage", c.shrinkage},     {"mtry", c.mtry ? json(*c.mtry) : json(nullptr)}};
}

std::string default_response(const TimeStampedDataset& ds) {
  const auto responses = ds.names_with_role(Role::Response);
  if (ds.has_column(testbed::kPower)) return std::string(testbed::kPower);
  if (responses.size() == 1) return responses.front();
  fail(ErrorCode::InvalidArgument, "dataset has several responses; choose one with --response");
}

std::vector<Interval> parse_box(const std::string& text, std::size_t expected) {
  std::vector<Interval> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) fail(ErrorCode::InvalidArgument, "--x-safe entries must be lo:hi");
    auto lo = detail::parse_double(item.substr(0, colon));
    auto hi = detail::parse_double(item.substr(colon + 1));
    if (!lo || !hi) fail(ErrorCode::InvalidArgument, "--x-safe entry '" + item + "' is not numeric");
    out.push_back({*lo, *hi});
  }
  require(out.size() == expected, ErrorCode::InvalidArgument, "--x-safe needs one lo:hi per control");
  return out;
}

int run_train(const TrainArgs& a) {
  const Schema schema = Schema::load(a.schema);
  auto full = load_csv(a.data, schema);
  if (!full.has_column(kTimeOfDay)) full = derive_proxy_features(full);
  const auto [begin, end] = window(full, a.from, a.until);
  const auto ds = full.slice(begin, end);

  ModelRecord record;
  record.name = a.name.empty() ? fs::path(a.out).stem().string() : a.name;
  AnyModel model;

  if (a.kind == "mbcrt") {
    VariablePartition partition;
    const std::string power = a.power;
    std::vector<std::string> zones = a.zones;
    if (zones.empty())
      for (const auto& r : ds.names_with_role(Role::Response))
        if (r != power) zones.push_back(r);
    partition.controls = a.controls.empty() ? ds.names_with_role(Role::Control) : a.controls;
    auto lagged = ds;
    if (a.lag_delta > 0)
      for (const auto& z : zones) lagged = add_lagged_response(lagged, z, a.lag_delta);
    if (a.disturbances.empty()) {
      partition.disturbances = names_with_roles(ds, {Role::Disturbance, Role::Proxy});
      if (a.lag_delta > 0)
        for (const auto& z : zones)
          for (std::size_t j = 1; j <= a.lag_delta; ++j) partition.disturbances.push_back(lag_name(z, j));
    } else {
      partition.disturbances = a.disturbances;
    }
    MbcrtFitOptions options;
    if (a.min_leaf) options.tree.min_leaf = a.min_leaf;
    if (a.max_depth) options.tree.max_depth = a.max_depth;
    options.strict_degenerate = a.strict;
    auto m = fit_mbcrt(lagged, partition, power, zones, options, parse_box(a.x_safe, partition.controls.size()));

    std::vector<double> actual = lagged.values(power), fitted;
    for (std::size_t r = 0; r < lagged.size(); ++r) {
      const auto row = lagged.row(r);
      const auto u = row.aligned(partition.controls);
      fitted.push_back(locate_leaf(m.power_tree, partition, row).evaluate(u));
    }
    record.metrics = {{"rows", lagged.size()},
                      {"power_leaves", m.power_tree.leaf_count()},
                      {"train_accuracy", accuracy(actual, fitted).to_json()},
                      {"degenerate_controls", m.degenerate_controls}};
    std::vector<std::string> responses{power};
    responses.insert(responses.end(), zones.begin(), zones.end());
    record.schema = {{"features", partition.features()}, {"responses", responses}};
    model = std::move(m);
  } else if (a.kind == "ar") {
    require(!a.response.empty(), ErrorCode::InvalidArgument, "ar models need --response");
    std::vector<std::string> exo = a.exogenous.empty() ? names_with_roles(ds, {Role::Disturbance, Role::Proxy, Role::Control}) : a.exogenous;
    exo.insert(exo.end(), a.extra_exogenous.begin(), a.extra_exogenous.end());
    const auto cfg = learner_config(a, parse_learner(a.learner));
    auto m = fit_ar(ds, a.response, a.delta, exo, cfg);
    const auto lagged = add_lagged_response(ds, a.response, a.delta);
    const auto fitted = m.base.predict(lagged.matrix(m.base.features()));
    record.metrics = {{"rows", lagged.size()}, {"one_step_train_accuracy", accuracy(lagged.values(a.response), fitted).to_json()},
                      {"learner", learner_json(cfg)}};
    record.schema = {{"features", m.base.features()}, {"responses", {a.response}}};
    model = std::move(m);
  } else {
    const auto kind = parse_learner(a.kind);
    const std::string response = a.response.empty() ? default_response(ds) : a.response;
    const auto features = a.features.empty() ? names_with_roles(ds, {Role::Disturbance, Role::Proxy, Role::Control}) : a.features;
    const auto X = ds.matrix(features);
    const auto y = ds.values(response);
    const auto cfg = learner_config(a, kind);
    auto m = fit_learner(X, y, cfg);
    record.metrics = {{"rows", ds.size()}, {"train_accuracy", accuracy(y, m.predict(X)).to_json()}, {"learner", learner_json(cfg)}};
    record.schema = {{"features", features}, {"responses", {response}}};
    model = std::move(m);
  }

  record.model = model_to_json(model);
  record.type = model_type(model);
  record.trained_at = utc_now();
  fs::path out = a.out;
  if (fs::is_directory(out)) {
    record = ModelRegistry(out).put(std::move(record))->record;
    out /= record.name + ".json";
  } else {
    save_model_file(out, record);
  }
  std::cout << "trained " << record.type << " model '" << record.name << "' on " << record.metrics.value("rows", std::size_t{0}) << " rows -> "
            << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict-baseline

struct PredictArgs {
  std::string model, forecast, out, from, until, history, registry;
  bool json_out = false;
};

std::optional<std::string> model_response(const LoadedModel& m) {
  if (const auto* ar = std::get_if<AutoRegressiveTreeModel>(&m.model)) return ar->response;
  if (m.record.schema.is_object() && m.record.schema.contains("responses") && !m.record.schema.at("responses").empty())
    return m.record.schema.at("responses").at(0).get<std::string>();
  return std::nullopt;
}

int run_predict(const PredictArgs& a) {
  const auto m = resolve_model(a.model, a.registry);
  const auto ds = load_table(a.forecast);
  const auto [begin, end] = window(ds, a.from, a.until);
  const auto rows = rows_from_dataset(ds, begin, end);
  const auto preds = predict_baseline(m->model, rows, history_for(ds, begin, a.history));

  const auto response = model_response(*m);
  const bool has_actual = response && ds.has_column(*response);
  std::ostringstream csv;
  csv << "timestamp,prediction" << (has_actual ? ",actual" : "") << "\n";
  std::vector<double> actual;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    csv << format_timestamp(ds.timestamps()[begin + i]) << ',' << format_number(preds[i]);
    if (has_actual) {
      actual.push_back(ds.column(*response)[begin + i]);
      csv << ',' << format_number(actual.back());
    }
    csv << '\n';
  }
  if (!a.out.empty()) write_text(a.out, csv.str());

  auto summary = baseline_json(m->record.name, rows, preds);
  if (has_actual) summary["accuracy"] = accuracy(actual, preds).to_json();
  if (a.json_out) {
    std::cout << summary.dump() << "\n";
  } else {
    std::cout << "predicted " << preds.size() << " steps with '" << m->record.name << "'" << (a.out.empty() ? "" : " -> " + a.out) << "\n";
    if (has_actual) {
      const auto& acc = summary.at("accuracy");
      TextTable t({"metric", "value"});
      t.add({"rmse", TextTable::num(acc.at("rmse").get<double>(), 3)});
      t.add({"mean", TextTable::num(acc.at("mean").get<double>(), 3)});
      t.add({"nrmse", TextTable::num(acc.at("nrmse").get<double>(), 4)});
      t.add({"accuracy", TextTable::num(acc.at("accuracy").get<double>(), 4)});
      std::cout << t.render();
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate-strategies

struct EvaluateArgs {
  std::vector<std::string> models;
  std::string strategies, forecast, from, history, out, registry;
  bool json_out = false;
};

std::vector<Strategy> load_strategies(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  if (files.empty()) fail(ErrorCode::EmptyData, "no strategy files in " + path.string());
  std::vector<Strategy> out;
  for (const auto& f : files) out.push_back(Strategy::load(f));
  return out;
}

int run_evaluate(const EvaluateArgs& a) {
  std::vector<AutoRegressiveTreeModel> models;
  for (const auto& spec : a.models) {
    const auto m = resolve_model(spec, a.registry);
    const auto* ar = std::get_if<AutoRegressiveTreeModel>(&m->model);
    if (!ar) fail(ErrorCode::InvalidArgument, "model '" + m->record.name + "' is not an ar model");
    models.push_back(*ar);
  }
  const auto strategies = load_strategies(a.strategies);
  const auto ds = load_table(a.forecast);
  const std::size_t begin = flag_time(a.from, "--from") ? lower_row(ds, *flag_time(a.from, "--from")) : 0;
  std::size_t horizon = 0;
  for (const auto& s : strategies) horizon = std::max(horizon, s.horizon());
  if (begin + horizon > ds.size()) fail(ErrorCode::InvalidArgument, "forecast file ends before the strategy horizon");
  const auto rows = rows_from_dataset(ds, begin, begin + horizon);
  const auto report = evaluate_json(models, strategies, rows, history_for(ds, begin, a.history));
  emit(report, a.out, a.json_out);
  if (!a.json_out) {
    TextTable t({"rank", "strategy", "energy_kwh", "mean_kw"});
    std::size_t rank = 1;
    for (const auto& name : report.at("ranking")) {
      for (const auto& s : report.at("strategies")) {
        if (s.at("name") != name) continue;
        const auto kw = s.at("kw").get<std::vector<double>>();
        double mean = 0.0;
        for (double v : kw) mean += v / static_cast<double>(kw.size());
        t.add({std::to_string(rank++), name.get<std::string>(), TextTable::num(s.at("energy_kwh").get<double>(), 2), TextTable::num(mean, 2)});
      }
    }
    std::cout << t.render() << "chosen: " << report.at("chosen").get<std::string>() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeArgs {
  std::string model, event, forecast, closed_loop, config, history, baseline, out, registry;
  std::vector<double> initial_temps;
  bool json_out = false;
};

/// timestamp -> value from a predict-baseline CSV (prediction column) or any CSV column.
std::map<Timestamp, double> load_series_csv(const fs::path& path, const std::string& column) {
  const auto ds = load_table(path);
  std::string name = column;
  if (name.empty()) name = ds.has_column("prediction") ? "prediction" : std::string(testbed::kPower);
  const auto& c = ds.column(name);
  std::map<Timestamp, double> out;
  for (std::size_t r = 0; r < ds.size(); ++r) out[ds.timestamps()[r]] = c[r];
  return out;
}

int run_synthesize(const SynthesizeArgs& a) {
  const auto m = resolve_model(a.model, a.registry);
  const auto* model = std::get_if<MbcrtModel>(&m->model);
  if (!model) fail(ErrorCode::InvalidArgument, "model '" + m->record.name + "' is not an mbcrt model");
  const auto event = DrEvent::from_json(read_json(a.event));
  const auto ds = load_table(a.forecast);
  const std::size_t begin = lower_row(ds, event.start);
  if (begin >= ds.size() || ds.timestamps()[begin] != event.start)
    fail(ErrorCode::InvalidArgument, "forecast has no row at the event start " + format_timestamp(event.start));
  const std::size_t n = event.steps();
  if (begin + n > ds.size()) fail(ErrorCode::InsufficientHistory, "forecast ends before the event does");
  const auto rows = rows_from_dataset(ds, begin, begin + n);
  const auto history = history_for(ds, begin, a.history);
  const auto config = synthesis_config_from(a.config.empty() ? json() : read_json(a.config), *model);

  std::vector<double> baseline;
  if (!a.baseline.empty()) {
    const auto series = load_series_csv(a.baseline, "");
    for (std::size_t i = 0; i < n; ++i) {
      const auto t = event.start + std::chrono::minutes{event.interval_minutes * static_cast<std::int64_t>(i)};
      auto it = series.find(t);
      if (it == series.end()) fail(ErrorCode::InvalidArgument, "baseline lacks " + format_timestamp(t));
      baseline.push_back(it->second);
    }
  }

  std::optional<Plant> plant;
  std::shared_ptr<testbed::ClosedLoopPlant> testbed_plant;
  if (!a.closed_loop.empty()) {
    const json tb = read_json(a.closed_loop);
    const auto building = tb.contains("building") ? tb.at("building").get<testbed::RcBuildingConfig>() : testbed::RcBuildingConfig{};
    std::vector<double> temps = a.initial_temps;
    if (temps.empty())
      for (const auto& z : testbed::zone_names(building)) {
        auto it = history.find(z);
        if (it == history.end() || it->second.empty()) fail(ErrorCode::InsufficientHistory, "no recent " + z + " for the plant state; pass --initial-temps");
        temps.push_back(it->second.front());
      }
    testbed_plant = make_testbed_plant(building, temps, event.start, rows);
    plant = testbed::ClosedLoopPlant::bind(testbed_plant);
  }

  const auto trace = run_dr_event(*model, rows.rows, history, config, event, plant, baseline);
  json out = {{"model", m->record.name},
              {"event", event.to_json()},
              {"loop", plant ? "closed" : "open"},
              {"config", config},
              {"steps", trace.size()},
              {"power_regions", trace.power_regions()},
              {"entries", trace.to_json()}};
  if (!baseline.empty()) out["cumulative_kwh"] = trace.entries.back().cumulative_kwh;
  emit(out, a.out, a.json_out);

  if (!a.json_out) {
    std::vector<std::string> header{"step", "t"};
    for (const auto& c : trace.controls) header.push_back(c);
    for (const auto* h : {"kW_hat", "kW_meas", "curtail", "region", "status"}) header.emplace_back(h);
    TextTable t(header);
    for (const auto& e : trace.entries) {
      std::vector<std::string> row{std::to_string(e.step), format_timestamp(e.t)};
      for (double u : e.result.u) row.push_back(TextTable::num(u, 2));
      row.push_back(TextTable::num(e.result.kw_hat, 1));
      row.push_back(e.kw_measured ? TextTable::num(*e.kw_measured, 1) : "-");
      row.push_back(e.curtailment_kw ? TextTable::num(*e.curtailment_kw, 1) : "-");
      row.push_back(std::to_string(e.result.region_ids.front()));
      row.emplace_back(to_string(e.result.status));
      t.add(std::move(row));
    }
    std::cout << t.render() << trace.size() << " steps, " << trace.power_regions().size() << " power regions";
    if (!baseline.empty()) std::cout << ", curtailed " << TextTable::num(trace.entries.back().cumulative_kwh, 2) << " kWh";
    std::cout << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::string baseline, actual, tariff, from, until, baseline_column, actual_column, out;
  int interval = 0;
  bool json_out = false;
};

/// Series from a CSV column or from a synthesize trace (measured power, else predicted; baseline_kW for the baseline side).
std::map<Timestamp, double> load_series(const fs::path& path, const std::string& column, bool baseline_side) {
  if (path.extension() != ".json") return load_series_csv(path, column);
  const json j = read_json(path);
  const auto& entries = j.is_object() && j.contains("entries") ? j.at("entries") : j;
  std::map<Timestamp, double> out;
  for (const auto& e : entries) {
    auto t = parse_timestamp(e.at("t").get<std::string>());
    if (!t) fail(ErrorCode::ParseError, "bad trace timestamp");
    const char* key = baseline_side ? "baseline_kW" : (e.contains("kW_measured") && !e.at("kW_measured").is_null() ? "kW_measured" : "kW_hat");
    if (!column.empty()) key = column.c_str();
    if (!e.contains(key) || e.at(key).is_null()) fail(ErrorCode::InvalidArgument, std::string("trace entries lack ") + key);
    out[*t] = e.at(key).get<double>();
  }
  return out;
}

int run_report(const ReportArgs& a) {
  const auto base = load_series(a.baseline, a.baseline_column, true);
  const auto act = load_series(a.actual, a.actual_column, false);
  const auto lo = flag_time(a.from, "--from");
  const auto hi = flag_time(a.until, "--until");
  std::vector<double> b, y;
  std::vector<Timestamp> ts;
  for (const auto& [t, v] : base) {
    if ((lo && t < *lo) || (hi && t >= *hi)) continue;
    auto it = act.find(t);
    if (it == act.end()) continue;
    ts.push_back(t);
    b.push_back(v);
    y.push_back(it->second);
  }
  if (ts.empty()) fail(ErrorCode::EmptyData, "baseline and actual share no timestamps in the window");
  int interval = a.interval;
  if (interval == 0) interval = ts.size() >= 2 ? static_cast<int>((ts[1] - ts[0]).count() / 60) : 5;
  const Tariff tariff = a.tariff.empty() ? Tariff{} : read_json(a.tariff).get<Tariff>();
  auto j = report_json(b, y, interval, tariff);
  j["from"] = format_timestamp(ts.front());
  j["steps"] = ts.size();
  j["interval_minutes"] = interval;
  emit(j, a.out, a.json_out);
  if (!a.json_out) {
    const auto& c = j.at("curtailment");
    const auto& r = j.at("revenue");
    TextTable t({"quantity", "value"});
    t.add({"steps", std::to_string(ts.size())});
    t.add({"baseline_kwh", TextTable::num(c.at("baseline_kwh").get<double>(), 2)});
    t.add({"curtailed_kwh", TextTable::num(c.at("total_kwh").get<double>(), 2)});
    t.add({"avg_curtailment_kw", TextTable::num(c.at("avg_kw").get<double>(), 2)});
    t.add({"curtailment_pct", TextTable::num(c.at("percent").get<double>(), 2)});
    t.add({"reservation_usd", TextTable::num(r.at("reservation").get<double>(), 2)});
    t.add({"energy_usd", TextTable::num(r.at("energy").get<double>(), 2)});
    t.add({"total_usd", TextTable::num(r.at("total").get<double>(), 2)});
    std::cout << t.render();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// serve

int run_serve(const std::string& registry, const std::string& host, int port) {
  const auto dir = registry_dir(registry);
  if (!dir) fail(ErrorCode::InvalidArgument, std::string("serve needs --registry or ") + kRegistryEnv);
  ModelRegistry reg(*dir);
  ApiServer server(reg);
  std::cerr << "serving " << reg.list().size() << " models from " << dir->string() << " on http://" << host << ":" << port << "\n";
  if (!server.listen(host, port)) fail(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

int error_exit(std::string_view code, const std::string& message, int status) {
  std::cerr << error_body(code, message).dump() << "\n";
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Demand-response advisor: baselines, strategy evaluation and control synthesis"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a testbed dataset");
  simulate->add_option("--config", sim.config, "Testbed JSON {building, generation}");
  simulate->add_option("--days", sim.days, "Days to simulate")->check(CLI::PositiveNumber);
  simulate->add_option("--out", sim.out, "Output CSV (schema sidecar written alongside)")->required();
  simulate->add_option("--seed", sim.seed, "Override the testbed seed");
  simulate->add_option("--start", sim.start, "Override the start timestamp");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Fit and persist a model");
  train->add_option("--data", tr.data, "Training CSV")->required();
  train->add_option("--schema", tr.schema, "Schema JSON")->required();
  train->add_option("--model", tr.kind, "tree|cvtree|forest|brt|ar|mbcrt")->required()->check(CLI::IsMember({"tree", "cvtree", "forest", "brt", "ar", "mbcrt"}));
  train->add_option("--out", tr.out, "Model file, or a registry directory")->required();
  train->add_option("--name", tr.name, "Model name (default: output file stem)");
  train->add_option("--from", tr.from, "Train on rows at or after this timestamp");
  train->add_option("--until", tr.until, "Train on rows before this timestamp");
  train->add_option("--response", tr.response, "Response column");
  train->add_option("--features", tr.features, "Feature columns")->delimiter(',');
  train->add_option("--exogenous", tr.exogenous, "ar: exogenous columns (default: disturbances, proxies, controls)")->delimiter(',');
  train->add_option("--with", tr.extra_exogenous, "ar: extra exogenous columns, e.g. other responses")->delimiter(',');
  train->add_option("--learner", tr.learner, "ar: base learner")->check(CLI::IsMember({"tree", "cvtree", "forest", "brt"}));
  train->add_option("--delta", tr.delta, "ar: auto-regression order")->check(CLI::PositiveNumber);
  train->add_option("--min-leaf", tr.min_leaf, "Minimum rows per leaf");
  train->add_option("--max-depth", tr.max_depth, "Maximum tree depth");
  train->add_option("--n-trees", tr.n_trees, "forest: trees");
  train->add_option("--mtry", tr.mtry, "forest: features tried per split");
  train->add_option("--n-stages", tr.n_stages, "brt: boosting stages");
  train->add_option("--shrinkage", tr.shrinkage, "brt: learning rate");
  train->add_option("--cv-folds", tr.cv_folds, "cvtree: folds");
  train->add_option("--seed", tr.seed, "Random seed");
  train->add_option("--power", tr.power, "mbcrt: power response");
  train->add_option("--zones", tr.zones, "mbcrt: zone temperature responses")->delimiter(',');
  train->add_option("--controls", tr.controls, "mbcrt: control columns")->delimiter(',');
  train->add_option("--disturbances", tr.disturbances, "mbcrt: disturbance columns")->delimiter(',');
  train->add_option("--lag-delta", tr.lag_delta, "mbcrt: zone lags added as disturbances");
  train->add_option("--x-safe", tr.x_safe, "mbcrt: lo:hi per control, comma separated");
  train->add_flag("--strict", tr.strict, "mbcrt: reject constant controls");

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict-baseline", "Predict the baseline trajectory");
  predict->add_option("--model", pr.model, "Model file or registry name")->required();
  predict->add_option("--forecast", pr.forecast, "Forecast CSV")->required();
  predict->add_option("--out", pr.out, "Output CSV");
  predict->add_option("--from", pr.from, "First timestamp to predict");
  predict->add_option("--until", pr.until, "Stop before this timestamp");
  predict->add_option("--history", pr.history, "Lag history JSON (default: rows before --from)");
  predict->add_option("--registry", pr.registry, "Registry directory");
  predict->add_flag("--json", pr.json_out, "Print JSON");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate-strategies", "Rank candidate strategies by predicted energy");
  evaluate->add_option("--models", ev.models, "ar models: power plus zones")->required();
  evaluate->add_option("--strategies", ev.strategies, "Strategy JSON file or directory")->required();
  evaluate->add_option("--forecast", ev.forecast, "Forecast CSV")->required();
  evaluate->add_option("--from", ev.from, "Horizon start (default: first row)");
  evaluate->add_option("--history", ev.history, "Lag history JSON (default: rows before --from)");
  evaluate->add_option("--out", ev.out, "Write the report JSON");
  evaluate->add_option("--registry", ev.registry, "Registry directory");
  evaluate->add_flag("--json", ev.json_out, "Print JSON");

  SynthesizeArgs sy;
  auto* synthesize = app.add_subcommand("synthesize", "Run mbCRT control synthesis over a DR event");
  synthesize->add_option("--model", sy.model, "mbcrt model file or registry name")->required();
  synthesize->add_option("--event", sy.event, "Event JSON")->required();
  synthesize->add_option("--forecast", sy.forecast, "Disturbance forecast CSV covering the event")->required();
  synthesize->add_option("--closed-loop", sy.closed_loop, "Testbed JSON; measurements replace predicted lags");
  synthesize->add_option("--initial-temps", sy.initial_temps, "Plant zone temperatures at the event start")->delimiter(',');
  synthesize->add_option("--config", sy.config, "Synthesis config JSON");
  synthesize->add_option("--history", sy.history, "Lag history JSON (default: rows before the event)");
  synthesize->add_option("--baseline", sy.baseline, "Baseline CSV from predict-baseline");
  synthesize->add_option("--out", sy.out, "Write the trace JSON");
  synthesize->add_option("--registry", sy.registry, "Registry directory");
  synthesize->add_flag("--json", sy.json_out, "Print JSON");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Curtailment and revenue");
  report->add_option("--baseline", rp.baseline, "Baseline CSV or trace JSON")->required();
  report->add_option("--actual", rp.actual, "Actual CSV or trace JSON")->required();
  report->add_option("--tariff", rp.tariff, "Tariff JSON");
  report->add_option("--from", rp.from, "Window start");
  report->add_option("--until", rp.until, "Window end (exclusive)");
  report->add_option("--baseline-column", rp.baseline_column, "Baseline column or trace key");
  report->add_option("--actual-column", rp.actual_column, "Actual column or trace key");
  report->add_option("--interval", rp.interval, "Minutes per step (default: from timestamps)");
  report->add_option("--out", rp.out, "Write the report JSON");
  report->add_flag("--json", rp.json_out, "Print JSON");

  std::string registry;
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  serve->add_option("--registry", registry, std::string("Registry directory (default: $") + kRegistryEnv + ")");
  serve->add_option("--port", port, "Port");
  serve->add_option("--host", host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_exit("InvalidArgument", e.what(), 2);
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*train) return run_train(tr);
    if (*predict) return run_predict(pr);
    if (*evaluate) return run_evaluate(ev);
    if (*synthesize) return run_synthesize(sy);
    if (*report) return run_report(rp);
    if (*serve) return run_serve(registry, host, port);
  } catch (const Error& e) {
    return error_exit(to_string(e.code()), e.message(), 2);
  } catch (const json::exception& e) {
    return error_exit("ParseError", e.what(), 2);
  } catch (const std::exception& e) {
    return error_exit("Internal", e.what(), 1);
  }
  return 0;
}
