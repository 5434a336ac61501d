// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if every failure is listed in --known-failure.
#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "dradvisor/dradvisor.hpp"
#include "dradvisor/service/core.hpp"
#include "dradvisor/service/registry.hpp"

#ifndef DRADVISOR_SOURCE_DIR
#define DRADVISOR_SOURCE_DIR "."
#endif
#ifndef DRADVISOR_CLI
#define DRADVISOR_CLI "dradvisor"
#endif

using namespace dra;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double time_limit_s;  // 0: no limit
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

Column col(std::string name, Role role, std::vector<double> v, ColumnKind kind = ColumnKind::Continuous) {
  return Column(ColumnSpec{std::move(name), kind, role, "", {}}, std::move(v));
}

std::vector<Timestamp> timeline(std::size_t n) {
  const auto t0 = *parse_timestamp("2013-07-01T00:00");
  std::vector<Timestamp> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(t0 + std::chrono::minutes{5 * static_cast<std::int64_t>(i)});
  return out;
}

double sse_about_mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

// ---------------------------------------------------------------------------
// 1. CART root split vs exhaustive enumeration

struct Split {
  std::size_t feature;
  double threshold;
  double sse;
};

// First candidate, in (feature, threshold) order, within the tie tolerance of the minimum SSE.
std::optional<Split> exhaustive_root(const DesignMatrix& X, const std::vector<double>& y, std::size_t min_leaf) {
  std::vector<Split> all;
  for (std::size_t f = 0; f < X.cols(); ++f) {
    std::vector<double> values;
    for (std::size_t r = 0; r < X.rows; ++r) values.push_back(X.at(r, f));
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      const double t = 0.5 * (values[i] + values[i + 1]);
      std::vector<double> l, r;
      for (std::size_t k = 0; k < X.rows; ++k) (X.at(k, f) <= t ? l : r).push_back(y[k]);
      if (l.size() < min_leaf || r.size() < min_leaf) continue;
      all.push_back({f, t, sse_about_mean(l) + sse_about_mean(r)});
    }
  }
  if (all.empty()) return std::nullopt;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : all) best = std::min(best, s.sse);
  const double tol = 1e-11 * sse_about_mean(y);
  for (const auto& s : all)
    if (s.sse <= best + tol) return s;
  return std::nullopt;
}

Outcome cart_oracle() {
  Rng rng(20130701);
  int matched = 0, total = 200;
  for (int trial = 0; trial < total; ++trial) {
    const std::size_t n = 2 + rng.below(11), m = 1 + rng.below(3);
    const bool grid = trial % 2 == 0;  // integer grids provoke ties
    std::vector<std::vector<double>> rows(n, std::vector<double>(m));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : rows[i]) v = grid ? static_cast<double>(rng.below(4)) : rng.uniform(-5, 5);
      y[i] = grid ? static_cast<double>(rng.below(3)) : rng.normal();
    }
    const auto X = DesignMatrix::from_rows(rows);
    FitConfig cfg;
    cfg.min_leaf = 1 + rng.below(2);
    cfg.max_depth = 2;  // root plus one level
    const auto tree = fit_tree(X, y, cfg);
    const auto oracle = exhaustive_root(X, y, cfg.min_leaf);
    const double sst = sse_about_mean(y);
    const bool oracle_splits = oracle && sst > 0 && oracle->sse < sst - 1e-12 * sst;
    bool ok;
    if (!oracle_splits)
      ok = tree.leaf_count() == 1;
    else
      ok = tree.leaf_count() == 2 && tree.root().rule.feature == oracle->feature && tree.root().rule.threshold == oracle->threshold;
    matched += ok;
  }
  return {matched == total, std::to_string(matched) + "/" + std::to_string(total) + " root splits match"};
}

// ---------------------------------------------------------------------------
// 2. LP solver vs grid enumeration, and the sign rule at lambda = 0

// Feasible by construction around a planted point. `scale` shrinks the box so the 1e-3 grid stays enumerable.
LinearProgram random_lp(Rng& rng, std::size_t n, std::size_t m, double scale) {
  LinearProgram lp;
  std::vector<double> p(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double lo = rng.uniform(-1, 0.5);
    const double hi = lo + scale * rng.uniform(0.2, 1.0);
    lp.add_variable("v" + std::to_string(j), lo, hi, rng.uniform(-1, 1));
    p[j] = rng.uniform(lo, hi);
  }
  lp.constant = rng.uniform(-5, 5);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> a(n);
    double act = 0;
    for (std::size_t j = 0; j < n; ++j) {
      a[j] = rng.uniform(-1, 1);
      act += a[j] * p[j];
    }
    lp.add_row(a, act + scale * rng.uniform(0.0, 0.3));
  }
  return lp;
}

// Minimum over the grid lo, lo + s, ..., hi of every variable (the last step may be short). The last coordinate is
// resolved analytically: for fixed leading coordinates its feasible grid indices form an interval.
std::optional<double> grid_minimum(const LinearProgram& lp, double s) {
  const std::size_t n = lp.size();
  std::vector<std::size_t> counts(n);
  for (std::size_t j = 0; j < n; ++j) counts[j] = static_cast<std::size_t>(std::ceil((lp.upper[j] - lp.lower[j]) / s)) + 1;
  const std::size_t last = n - 1;
  std::vector<std::size_t> idx(n, 0);
  std::vector<double> v(n);
  std::optional<double> best;
  auto at = [&](std::size_t j, std::size_t k) { return std::min(lp.upper[j], lp.lower[j] + s * static_cast<double>(k)); };
  while (true) {
    for (std::size_t j = 0; j < last; ++j) v[j] = at(j, idx[j]);
    double lo = lp.lower[last], hi = lp.upper[last];
    for (const auto& row : lp.rows) {
      double rest = 0;
      for (std::size_t j = 0; j < last; ++j) rest += row.coefficients[j] * v[j];
      const double a = row.coefficients[last], slack = row.rhs - rest;
      if (a > 0) hi = std::min(hi, slack / a);
      else if (a < 0) lo = std::max(lo, slack / a);
      else if (slack < 0) hi = -std::numeric_limits<double>::infinity();
    }
    if (lo <= hi) {
      const double base = lp.lower[last];
      const auto kmin = static_cast<std::ptrdiff_t>(std::max(0.0, std::ceil((lo - base) / s) - 1));
      const auto kmax = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(counts[last] - 1), std::floor((hi - base) / s) + 1));
      // scan a one-index margin at each end and keep only exactly feasible points
      for (std::ptrdiff_t k : {kmin, kmin + 1, kmax - 1, kmax}) {
        if (k < 0 || k >= static_cast<std::ptrdiff_t>(counts[last])) continue;
        v[last] = at(last, static_cast<std::size_t>(k));
        if (!lp.feasible(v, 0.0)) continue;
        const double z = lp.evaluate(v);
        if (!best || z < *best) best = z;
      }
    }
    std::size_t j = 0;
    while (j < last && ++idx[j] == counts[j]) idx[j++] = 0;
    if (j == last) break;
  }
  return best;
}

MbcrtModel single_leaf_model(const std::vector<double>& coefficients, std::vector<Interval> box) {
  MbcrtModel m;
  for (std::size_t j = 0; j < coefficients.size(); ++j) m.partition.controls.push_back("u" + std::to_string(j));
  m.partition.disturbances = {"oat"};
  TreeNode leaf;
  leaf.model.kind = LeafKind::Linear;
  leaf.model.intercept = 100;
  for (std::size_t j = 0; j < coefficients.size(); ++j) leaf.model.features.push_back(1 + j);
  leaf.model.coefficients = coefficients;
  const auto f = m.partition.features();
  m.power_tree = RegressionTree(f, std::vector<ColumnKind>(f.size(), ColumnKind::Continuous), {leaf});
  m.x_safe = std::move(box);
  m.power_response = "kW";
  return m;
}

Outcome lp_oracle() {
  Rng rng(5551);
  int dominance = 0, close = 0, total = 100;
  double worst_gap = 0;
  for (int trial = 0; trial < total; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 4), m = rng.below(7);
    std::optional<double> grid;
    LinearProgram lp;
    while (!grid) {  // resample until the grid meets the feasible region
      lp = random_lp(rng, n, m, n == 4 ? 0.2 : 1.0);
      grid = grid_minimum(lp, 1e-3);
    }
    const auto s = solve_lp(lp);
    if (s.status != LpStatus::Optimal) continue;
    dominance += s.objective <= *grid + 1e-12;
    close += std::abs(s.objective - *grid) <= 2e-3;
    worst_gap = std::max(worst_gap, *grid - s.objective);
  }
  int sign_ok = 0, sign_total = 100;
  for (int trial = 0; trial < sign_total; ++trial) {
    const std::size_t n = 1 + rng.below(3);
    std::vector<double> c(n);
    std::vector<Interval> box(n);
    for (std::size_t j = 0; j < n; ++j) {
      c[j] = rng.uniform(-5, 5);
      if (std::abs(c[j]) < 1e-3) c[j] = 1;
      box[j].lo = rng.uniform(-3, 3);
      box[j].hi = box[j].lo + rng.uniform(0.1, 4);
    }
    const auto model = single_leaf_model(c, box);
    SynthesisConfig cfg;
    cfg.lambda = 0;
    FeatureVector x;
    x.set("oat", 30);
    const auto step = synthesize_step(model, x, cfg);
    bool ok = step.status == StepStatus::Optimal;
    for (std::size_t j = 0; j < n; ++j) ok = ok && step.u[j] == (c[j] > 0 ? box[j].lo : box[j].hi);
    sign_ok += ok;
  }
  return {dominance == total && close == total && sign_ok == sign_total,
          "grid dominance " + std::to_string(dominance) + "/" + std::to_string(total) + ", within 2e-3 " + std::to_string(close) + "/" +
              std::to_string(total) + " (max gap " + fmt(worst_gap, 5) + "), sign rule " + std::to_string(sign_ok) + "/" +
              std::to_string(sign_total)};
}

// ---------------------------------------------------------------------------
// Shared testbed scenario: perturbed training days followed by nominal days that host the events.

constexpr std::size_t kTrainDays = 21, kNominalDays = 7, kStepsPerDay = 288;
const std::vector<std::string> kControls{"chw_setpoint", "zone_setpoint", "lighting"};
const std::vector<std::string> kWeatherAndCalendar{"oat", "solar", "day_of_week", "time_of_day", "is_weekend", "is_holiday"};

struct Scenario {
  testbed::RcBuildingConfig building;
  TimeStampedDataset data;
  TimeStampedDataset train;
  std::size_t event_start = 0;  // row index
};

Scenario make_scenario(std::uint64_t seed, double setpoint_perturbation = 2.0) {
  Scenario s;
  s.building.seed = seed;
  testbed::GenerationOptions g;
  g.nominal_days = kNominalDays;
  g.setpoint_perturbation = setpoint_perturbation;
  s.data = testbed::generate_dataset(s.building, kTrainDays + kNominalDays, g);
  s.train = s.data.slice(0, kTrainDays * kStepsPerDay);
  return s;
}

/// A weekday in the nominal tail, at the given minute of the day.
std::size_t pick_event_row(const Scenario& s, Rng& rng, int minute_of_day) {
  std::vector<std::size_t> days;
  for (std::size_t d = kTrainDays; d < kTrainDays + kNominalDays; ++d) {
    const auto f = calendar_features(s.data.timestamps()[d * kStepsPerDay], s.building.holiday_dates());
    if (!f.is_weekend && !f.is_holiday) days.push_back(d);
  }
  const std::size_t day = days[rng.below(days.size())];
  return day * kStepsPerDay + static_cast<std::size_t>(minute_of_day / 5);
}

std::vector<testbed::Weather> weather_slice(const TimeStampedDataset& ds, std::size_t begin, std::size_t n) {
  std::vector<testbed::Weather> w;
  for (std::size_t i = begin; i < begin + n; ++i) w.push_back({ds.column("oat")[i], ds.column("solar")[i]});
  return w;
}

testbed::SimState state_before(const Scenario& s, std::size_t row) {
  testbed::SimState st;
  for (const auto& z : testbed::zone_names(s.building)) st.temps.push_back(s.data.column(z)[row - 1]);
  st.time = s.data.timestamps()[row];
  st.step = row;
  return st;
}

std::vector<Strategy> reference_strategies() {
  std::vector<Strategy> out;
  for (auto name : {"S1", "S2", "S3"}) out.push_back(Strategy::load(std::filesystem::path(DRADVISOR_SOURCE_DIR) / "data" / "strategies" / (std::string(name) + ".json")));
  return out;
}

VariablePartition testbed_partition(const testbed::RcBuildingConfig& b) {
  VariablePartition p;
  p.controls = kControls;
  p.disturbances = kWeatherAndCalendar;
  for (const auto& z : testbed::zone_names(b)) p.disturbances.push_back(lag_name(z, 1));
  return p;
}

TimeStampedDataset with_zone_lags(const TimeStampedDataset& ds, const testbed::RcBuildingConfig& b) {
  auto out = ds;
  for (const auto& z : testbed::zone_names(b)) out = add_lagged_response(out, z, 1);
  return out;
}

// ---------------------------------------------------------------------------
// 3. No control splits anywhere in fitted mbCRT models

Outcome structural_scan() {
  int clean = 0, total = 20;
  std::size_t nodes = 0;
  for (int seed = 1; seed <= total; ++seed) {
    testbed::RcBuildingConfig b;
    b.seed = static_cast<std::uint64_t>(seed);
    const auto ds = with_zone_lags(testbed::generate_dataset(b, 7), b);
    const auto m = fit_mbcrt(ds, testbed_partition(b), "kW", testbed::zone_names(b));
    bool ok = true;
    std::vector<const RegressionTree*> trees{&m.power_tree};
    for (const auto& t : m.zone_trees) trees.push_back(&t);
    for (const auto* t : trees)
      for (const auto& n : t->nodes()) {
        ++nodes;
        if (n.is_leaf()) continue;
        const auto& name = t->features()[n.rule.feature];
        ok = ok && std::find(kControls.begin(), kControls.end(), name) == kControls.end();
      }
    clean += ok;
  }
  return {clean == total, std::to_string(clean) + "/" + std::to_string(total) + " fits free of control splits (" + std::to_string(nodes) + " nodes scanned)"};
}

// ---------------------------------------------------------------------------
// 4. Exact recovery of piecewise-linear laws

Outcome exact_recovery() {
  struct Law {
    double b0;
    std::vector<double> b;
  };
  double worst = 0;
  int two_leaves = 0, total = 5;
  for (int seed = 0; seed < total; ++seed) {
    Rng rng(900 + static_cast<std::uint64_t>(seed));
    const Law cool{rng.uniform(50, 150), {rng.uniform(-20, -5), rng.uniform(-30, -10), rng.uniform(20, 60)}};
    const Law hot{rng.uniform(150, 300), {rng.uniform(-40, -20), rng.uniform(-60, -30), rng.uniform(30, 80)}};
    const std::size_t n = 600;
    std::vector<double> chw(n), sp(n), light(n), oat(n), solar(n), kw(n);
    for (std::size_t i = 0; i < n; ++i) {
      chw[i] = rng.uniform(5, 12);
      sp[i] = rng.uniform(21, 27);
      light[i] = rng.uniform(0, 1);
      oat[i] = rng.uniform(15, 38);
      solar[i] = rng.uniform(0, 900);
      const Law& law = oat[i] <= 27 ? cool : hot;
      kw[i] = law.b0 + law.b[0] * chw[i] + law.b[1] * sp[i] + law.b[2] * light[i];
    }
    std::vector<Column> cols{col("chw_setpoint", Role::Control, chw), col("zone_setpoint", Role::Control, sp), col("lighting", Role::Control, light),
                             col("oat", Role::Disturbance, oat), col("solar", Role::Disturbance, solar), col("kW", Role::Response, kw)};
    const TimeStampedDataset ds(timeline(n), std::move(cols), 5);
    const VariablePartition p{kControls, {"oat", "solar"}};
    const auto m = fit_mbcrt(ds, p, "kW", {});
    two_leaves += m.power_tree.leaf_count() == 2;
    for (const auto& [t, law] : {std::pair{20.0, cool}, std::pair{33.0, hot}}) {
      FeatureVector x;
      x.set("oat", t);
      x.set("solar", 400);
      const auto leaf = locate_leaf(m.power_tree, p, x);
      worst = std::max(worst, std::abs(leaf.intercept - law.b0) / std::abs(law.b0));
      for (std::size_t j = 0; j < 3; ++j) worst = std::max(worst, std::abs(leaf.coefficients[j] - law.b[j]) / std::abs(law.b[j]));
    }
  }
  return {two_leaves == total && worst <= 1e-6,
          std::to_string(two_leaves) + "/" + std::to_string(total) + " two-leaf trees, max relative coefficient error " + [&] {
            std::ostringstream s;
            s << std::scientific << std::setprecision(2) << worst;
            return s.str();
          }()};
}

// ---------------------------------------------------------------------------
// 5. Forest baseline accuracy on held-out days

Outcome baseline_band() {
  int good = 0, total = 10;
  double lo = 1, hi = 0;
  std::vector<std::string> features = kWeatherAndCalendar;
  features.insert(features.end(), kControls.begin(), kControls.end());
  for (int seed = 1; seed <= total; ++seed) {
    testbed::RcBuildingConfig b;
    b.seed = static_cast<std::uint64_t>(seed);
    testbed::GenerationOptions g;
    g.nominal_days = 7;
    const auto ds = testbed::generate_dataset(b, 67, g);
    const std::size_t split = 60 * kStepsPerDay;
    const auto train = ds.slice(0, split), test = ds.slice(split, ds.size());
    LearnerConfig cfg;
    cfg.kind = LearnerKind::Forest;
    cfg.n_trees = 30;
    cfg.tree.min_leaf = 5;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const auto model = fit_learner(train.matrix(features), train.values("kW"), cfg);
    const auto pred = model.predict(test.matrix(features));
    const auto actual = test.values("kW");
    const double a = accuracy(std::vector<double>(actual.begin(), actual.end()), pred).accuracy;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
    good += a >= 0.85;
  }
  return {good >= 9, std::to_string(good) + "/" + std::to_string(total) + " seeds with accuracy >= 0.85 (range " + fmt(lo, 4) + " to " + fmt(hi, 4) + ")"};
}

// ---------------------------------------------------------------------------
// 6. evaluate_strategies vs simulator ground truth

std::vector<Strategy> jittered(const std::vector<Strategy>& base, Rng& rng) {
  std::vector<Strategy> out;
  for (const auto& s : base) {
    const Controls c = s.steps.front();
    const Controls j{std::clamp(c.chw_setpoint + rng.uniform(-0.5, 0.5), 5.0, 12.0), c.zone_setpoint + rng.uniform(-0.3, 0.3),
                     std::clamp(c.lighting + rng.uniform(-0.05, 0.05), 0.0, 1.0)};
    out.push_back(Strategy::constant(s.name, j, s.horizon(), s.interval_minutes));
  }
  return out;
}

Outcome strategy_fidelity() {
  const auto base = reference_strategies();
  int agree = 0, total = 10;
  std::map<std::string, int> truth_wins;
  for (int scenario = 0; scenario < total; ++scenario) {
    const auto s = make_scenario(100 + static_cast<std::uint64_t>(scenario));
    Rng rng(7000 + static_cast<std::uint64_t>(scenario));
    const std::size_t begin = pick_event_row(s, rng, 13 * 60 + 5 * static_cast<int>(rng.below(37)));  // 13:00 to 16:00
    auto strategies = jittered(base, rng);
    // list order breaks prediction ties, so it must not favour any strategy
    for (std::size_t i = strategies.size(); i > 1; --i) std::swap(strategies[i - 1], strategies[rng.below(i)]);
    const std::size_t H = strategies.front().horizon();

    LearnerConfig cfg;
    cfg.kind = LearnerKind::Forest;  // a single tree often ignores the control columns entirely
    cfg.n_trees = 60;
    cfg.tree.min_leaf = 10;
    cfg.seed = static_cast<std::uint64_t>(scenario);
    std::vector<std::string> exo = kWeatherAndCalendar;
    exo.insert(exo.end(), kControls.begin(), kControls.end());
    std::vector<AutoRegressiveTreeModel> zones;
    auto power_exo = exo;
    for (const auto& z : testbed::zone_names(s.building)) {
      zones.push_back(fit_ar(s.train, z, 6, exo, cfg));
      power_exo.push_back(z);
    }
    const auto power = fit_ar(s.train, "kW", 6, power_exo, cfg);
    const auto rows = service::rows_from_dataset(s.data, begin, begin + H);
    const auto report = evaluate_strategies(power, zones, strategies, rows.rows, service::history_from_dataset(s.data, begin));

    const auto weather = weather_slice(s.data, begin, H);
    std::string truth;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& st : strategies) {
      const double e = testbed::ground_truth_strategy_energy(s.building, state_before(s, begin), st, weather).energy_kwh;
      if (e < best) best = e, truth = st.name;
    }
    ++truth_wins[truth];
    agree += report.chosen == truth;
  }
  std::string wins;
  for (const auto& [name, n] : truth_wins) wins += (wins.empty() ? "" : ", ") + name + " " + std::to_string(n);
  return {agree >= 8, std::to_string(agree) + "/" + std::to_string(total) + " scenarios agree with the simulator (true winners: " + wins + ")"};
}

// ---------------------------------------------------------------------------
// 7 and 8. Closed-loop synthesis on the testbed

constexpr double kComfortLo = 20.0, kComfortHi = 27.0, kComfortSlack = 0.5;  // every reference rule stays inside

SynthesisConfig synthesis_config(const testbed::RcBuildingConfig& b) {
  SynthesisConfig c;
  c.lambda = 0.5;
  c.t_ref.assign(b.zones, 23.5);
  c.comfort = std::vector<Interval>(b.zones, Interval{kComfortLo, kComfortHi});
  return c;
}

MbcrtModel fit_testbed_mbcrt(const Scenario& s) {
  // x_safe stays inside the excitation range of the occupied schedule
  const std::vector<Interval> box{{7.0, 9.5}, {23.0, 26.0}, {0.7, 1.0}};
  return fit_mbcrt(with_zone_lags(s.train, s.building), testbed_partition(s.building), "kW", testbed::zone_names(s.building), {}, box);
}

struct ClosedLoopRun {
  SynthesisTrace trace;
  testbed::Rollout plant;
};

ClosedLoopRun run_closed_loop(const Scenario& s, const MbcrtModel& model, std::size_t begin, std::size_t steps) {
  const auto rows = service::rows_from_dataset(s.data, begin, begin + steps);
  const auto baseline = s.data.values("kW");
  std::vector<double> base(baseline.begin() + static_cast<std::ptrdiff_t>(begin), baseline.begin() + static_cast<std::ptrdiff_t>(begin + steps));
  const auto plant = std::make_shared<testbed::ClosedLoopPlant>(s.building, state_before(s, begin), weather_slice(s.data, begin, steps));
  const auto t0 = s.data.timestamps()[begin];
  const DrEvent event = DrEvent::sustained(t0, t0 + std::chrono::minutes{5 * static_cast<std::int64_t>(steps)});
  auto trace = run_dr_event(model, rows.rows, service::history_from_dataset(s.data, begin), synthesis_config(s.building), event,
                            testbed::ClosedLoopPlant::bind(plant), base);
  return {std::move(trace), plant->record};
}

Outcome synthesis_dominance() {
  const auto strategies = reference_strategies();
  int wins = 0, comfortable = 0, total = 10;
  double margin_sum = 0;
  for (int seed = 1; seed <= total; ++seed) {
    const auto s = make_scenario(200 + static_cast<std::uint64_t>(seed), 2.5);
    Rng rng(8000 + static_cast<std::uint64_t>(seed));
    const std::size_t begin = pick_event_row(s, rng, 15 * 60);
    const std::size_t H = 12;
    const auto model = fit_testbed_mbcrt(s);
    const auto run = run_closed_loop(s, model, begin, H);
    const double synthesized = run.trace.entries.back().cumulative_kwh;

    const auto baseline = s.data.values("kW");
    double best_rule = -std::numeric_limits<double>::infinity();
    for (const auto& st : strategies) {
      const auto r = testbed::ground_truth_strategy_energy(s.building, state_before(s, begin), st, weather_slice(s.data, begin, H));
      double c = 0;
      for (std::size_t i = 0; i < H; ++i) c += (baseline[begin + i] - r.power[i]) * s.building.dt_hours();
      best_rule = std::max(best_rule, c);
    }
    bool comfort = true;
    for (const auto& temps : run.plant.temps)
      for (double t : temps) comfort = comfort && t >= kComfortLo - kComfortSlack && t <= kComfortHi + kComfortSlack;
    wins += synthesized >= best_rule;
    comfortable += comfort;
    margin_sum += best_rule != 0 ? (synthesized - best_rule) / std::abs(best_rule) : 0;
  }
  return {wins >= 8 && comfortable == total,
          "synthesis >= best rule in " + std::to_string(wins) + "/" + std::to_string(total) + " seeds (mean margin " + fmt(100 * margin_sum / total, 1) +
              "%), comfort held in " + std::to_string(comfortable) + "/" + std::to_string(total)};
}

Outcome model_switching() {
  // the event straddles the end of occupancy, moving the forecast across the schedule regimes
  const auto s = make_scenario(201, 2.5);
  Rng rng(1);
  const std::size_t begin = pick_event_row(s, rng, 18 * 60 + 30);
  const auto model = fit_testbed_mbcrt(s);
  const auto run = run_closed_loop(s, model, begin, 12);
  std::vector<int> ids;
  for (const auto& e : run.trace.entries) ids.push_back(e.result.region_ids.front());
  std::size_t switches = 0;
  for (std::size_t i = 1; i < ids.size(); ++i) switches += ids[i] != ids[i - 1];
  const auto regions = run.trace.power_regions();
  return {regions.size() >= 2, std::to_string(regions.size()) + " distinct power regions, " + std::to_string(switches) + " switches over 12 steps"};
}

// ---------------------------------------------------------------------------
// 9 and 10. Closed-form arithmetic

Outcome revenue_arithmetic() {
  const auto r = revenue(380, Tariff{25, 1, 4, 5, 1});
  return {r.total == 45600.0 && r.reservation == 38000.0 && r.energy == 7600.0,
          "reservation " + fmt(r.reservation, 2) + " + energy " + fmt(r.energy, 2) + " = " + fmt(r.total, 2)};
}

Outcome metric_identities() {
  Rng rng(4242);
  double worst_sum = 0, worst_cv = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(100);
    std::vector<double> a(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(10, 1000);
      p[i] = a[i] * (1 + 0.2 * rng.normal());
    }
    const auto r = accuracy(a, p);
    worst_sum = std::max(worst_sum, std::abs(r.accuracy + r.nrmse - 1.0));
    worst_cv = std::max(worst_cv, std::abs(cv_statistic(a, p) - 100 * r.nrmse));
  }
  std::ostringstream d;
  d << std::scientific << std::setprecision(1) << "max |acc + nrmse - 1| " << worst_sum << ", max |cv - 100 nrmse| " << worst_cv;
  return {worst_sum <= 1e-12 && worst_cv <= 1e-12, d.str()};
}

// ---------------------------------------------------------------------------
// 11. Determinism and serialization

std::vector<service::AnyModel> fit_every_model(const TimeStampedDataset& ds, const testbed::RcBuildingConfig& b) {
  std::vector<std::string> features = kWeatherAndCalendar;
  features.insert(features.end(), kControls.begin(), kControls.end());
  const auto X = ds.matrix(features);
  const auto y = ds.values("kW");
  std::vector<service::AnyModel> out;
  for (auto kind : {LearnerKind::Tree, LearnerKind::CvTree, LearnerKind::Forest, LearnerKind::Brt}) {
    LearnerConfig cfg;
    cfg.kind = kind;
    cfg.n_trees = 10;
    cfg.n_stages = 40;
    cfg.seed = 11;
    out.emplace_back(fit_learner(X, y, cfg));
  }
  LearnerConfig ar;
  ar.kind = LearnerKind::Forest;
  ar.n_trees = 5;
  ar.seed = 11;
  out.emplace_back(fit_ar(ds, "kW", 3, features, ar));
  out.emplace_back(fit_mbcrt(with_zone_lags(ds, b), testbed_partition(b), "kW", testbed::zone_names(b)));
  return out;
}

/// Uniform inputs over each feature's observed range.
FeatureVector random_input(Rng& rng, const TimeStampedDataset& ds) {
  FeatureVector x;
  for (const auto& c : ds.columns()) {
    const auto v = ds.values(c.name());
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    x.set(c.name(), c.kind() == ColumnKind::Categorical ? static_cast<double>(*lo + static_cast<double>(rng.below(static_cast<std::uint64_t>(*hi - *lo) + 1)))
                                                         : rng.uniform(*lo, *hi));
    for (std::size_t j = 1; j <= 3; ++j) x.set(lag_name(c.name(), j), rng.uniform(*lo, *hi));
  }
  return x;
}

std::vector<double> predict_any(const service::AnyModel& m, const FeatureVector& x) {
  if (const auto* r = std::get_if<Regressor>(&m)) {
    const auto v = x.aligned(r->features());
    return {r->predict(std::span<const double>(v))};
  }
  if (const auto* ar = std::get_if<AutoRegressiveTreeModel>(&m)) {
    std::vector<double> lags;
    for (std::size_t j = 1; j <= ar->delta; ++j) lags.push_back(*x.get(lag_name(ar->response, j)));
    return {ar->predict_one(x, lags)};
  }
  const auto& mb = std::get<MbcrtModel>(m);
  const auto u = x.aligned(mb.partition.controls);
  std::vector<double> out{locate_leaf(mb.power_tree, mb.partition, x).evaluate(u)};
  for (const auto& t : mb.zone_trees) out.push_back(locate_leaf(t, mb.partition, x).evaluate(u));
  return out;
}

Outcome determinism() {
  testbed::RcBuildingConfig b;
  b.seed = 77;
  const auto ds1 = testbed::generate_dataset(b, 5), ds2 = testbed::generate_dataset(b, 5);
  const auto first = fit_every_model(ds1, b), second = fit_every_model(ds2, b);
  int identical = 0;
  for (std::size_t i = 0; i < first.size(); ++i) identical += service::model_to_json(first[i]).dump() == service::model_to_json(second[i]).dump();

  Rng rng(31337);
  std::size_t exact = 0, total = 0;
  std::vector<service::AnyModel> restored;
  for (const auto& m : first) restored.push_back(service::model_from_json(json::parse(service::model_to_json(m).dump())));
  const auto lagged = with_zone_lags(ds1, b);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x = random_input(rng, lagged);
    for (std::size_t i = 0; i < first.size(); ++i) {
      ++total;
      exact += predict_any(first[i], x) == predict_any(restored[i], x);
    }
  }
  const auto n = std::to_string(first.size());
  return {identical == static_cast<int>(first.size()) && exact == total,
          std::to_string(identical) + "/" + n + " model types bit-identical across fits, " + std::to_string(exact) + "/" + std::to_string(total) +
              " round-trip predictions exact"};
}

// ---------------------------------------------------------------------------
// 12. End-to-end CLI pipeline

Outcome cli_pipeline(const std::string& cli, const std::string& script, const std::string& data) {
  const std::string cmd = "sh '" + script + "' '" + cli + "' '" + data + "' > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return {status == 0, status == 0 ? "pipeline completed without errors" : "pipeline exited with status " + std::to_string(status)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the demand-response advisor"};
  std::string cli = DRADVISOR_CLI;
  std::string script = std::string(DRADVISOR_SOURCE_DIR) + "/tests/cli_end_to_end.sh";
  std::string data = std::string(DRADVISOR_SOURCE_DIR) + "/data";
  std::vector<int> only;
  app.add_option("--cli", cli, "dradvisor binary");
  app.add_option("--script", script, "End-to-end pipeline script");
  app.add_option("--data", data, "Data directory with testbed, event and strategy files");
  std::vector<int> known;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--known-failure", known, "Criteria whose failure is documented and does not affect the exit status");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "CART oracle equivalence", 10, cart_oracle},
      {2, "LP solver oracle", 30, lp_oracle},
      {3, "mbCRT structural invariant", 0, structural_scan},
      {4, "Exact recovery", 0, exact_recovery},
      {5, "Baseline accuracy band", 180, baseline_band},
      {6, "Strategy evaluation fidelity", 120, strategy_fidelity},
      {7, "Synthesis dominance", 180, synthesis_dominance},
      {8, "Model switching", 0, model_switching},
      {9, "Revenue arithmetic", 0, revenue_arithmetic},
      {10, "Metric identities", 0, metric_identities},
      {11, "Determinism and serialization", 0, determinism},
      {12, "End-to-end CLI", 600, [&] { return cli_pipeline(cli, script, data); }},
  };

  int failed = 0, excused = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const Error& e) {
      o = {false, std::string("error ") + std::string(to_string(e.code())) + ": " + e.message()};
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.time_limit_s == 0 || secs < c.time_limit_s;
    const bool pass = o.pass && in_time;
    const bool is_known = std::find(known.begin(), known.end(), c.id) != known.end();
    if (!pass) is_known ? ++excused : ++failed;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << std::setw(2) << c.id << "  " << c.title << ": " << o.detail << " [" << fmt(secs, 1) << " s"
              << (c.time_limit_s > 0 ? " / limit " + fmt(c.time_limit_s, 0) + " s" : "") << (in_time ? "" : ", over time") << "]" << std::endl;
  }
  if (excused > 0) std::cout << excused << " known failure(s) excused by --known-failure" << std::endl;
  return failed == 0 ? 0 : 1;
}
