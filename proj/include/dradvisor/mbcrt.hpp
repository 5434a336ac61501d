#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dradvisor/cart.hpp"
#include "dradvisor/data.hpp"
#include "dradvisor/error.hpp"
#include "dradvisor/horizon.hpp"
#include "dradvisor/lp.hpp"

namespace dra {

struct VariablePartition {
  std::vector<std::string> controls;
  std::vector<std::string> disturbances;

  void validate() const {
    if (controls.empty()) fail(ErrorCode::InvalidArgument, "mbCRT needs at least one control variable");
    std::set<std::string> seen;
    for (const auto* list : {&controls, &disturbances})
      for (const auto& n : *list)
        if (!seen.insert(n).second) fail(ErrorCode::InvalidArgument, "'" + n + "' is listed as both control and disturbance (or twice)");
  }

  /// Model schema: disturbances first, then controls.
  std::vector<std::string> features() const {
    auto out = disturbances;
    out.insert(out.end(), controls.begin(), controls.end());
    return out;
  }
};

inline void to_json(nlohmann::json& j, const VariablePartition& p) { j = {{"controls", p.controls}, {"disturbances", p.disturbances}}; }
inline void from_json(const nlohmann::json& j, VariablePartition& p) {
  p.controls = j.at("controls").get<std::vector<std::string>>();
  p.disturbances = j.at("disturbances").get<std::vector<std::string>>();
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Active region's model: y = intercept + coefficients . u over the controls.
struct ControlLeafModel {
  double intercept = 0.0;
  std::vector<double> coefficients;  // aligned with VariablePartition::controls
  int region_id = -1;
  std::size_t n_samples = 0;
  double rmse = 0.0;

  double evaluate(std::span<const double> u) const {
    double v = intercept;
    for (std::size_t j = 0; j < coefficients.size(); ++j) v += coefficients[j] * u[j];
    return v;
  }
};

struct MbcrtModel {
  RegressionTree power_tree;
  std::vector<RegressionTree> zone_trees;
  VariablePartition partition;
  std::vector<Interval> x_safe;  // aligned with partition.controls
  std::string power_response;
  std::vector<std::string> zone_responses;
  std::vector<std::string> degenerate_controls;

  std::size_t zones() const { return zone_trees.size(); }

  /// Lag order per response across all trees.
  std::map<std::string, std::size_t, std::less<>> lag_orders() const {
    std::map<std::string, std::size_t, std::less<>> out;
    for (const auto& d : partition.disturbances)
      if (auto lag = parse_lag_name(d)) out[lag->first] = std::max(out[lag->first], lag->second);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json box = nlohmann::json::object();
    for (std::size_t j = 0; j < x_safe.size(); ++j) box[partition.controls[j]] = {x_safe[j].lo, x_safe[j].hi};
    nlohmann::json zones_json = nlohmann::json::array();
    for (const auto& t : zone_trees) zones_json.push_back(t.to_json());
    return {{"type", "mbcrt"},
            {"partition", partition},
            {"x_safe", box},
            {"power_response", power_response},
            {"zone_responses", zone_responses},
            {"degenerate_controls", degenerate_controls},
            {"power_tree", power_tree.to_json()},
            {"zone_trees", zones_json}};
  }

  static MbcrtModel from_json(const nlohmann::json& j) {
    try {
      MbcrtModel m;
      m.partition = j.at("partition").get<VariablePartition>();
      for (const auto& c : m.partition.controls) {
        const auto v = j.at("x_safe").at(c).get<std::vector<double>>();
        require(v.size() == 2, ErrorCode::ParseError, "x_safe entries must be [lo, hi]");
        m.x_safe.push_back({v[0], v[1]});
      }
      m.power_response = j.at("power_response").get<std::string>();
      m.zone_responses = j.at("zone_responses").get<std::vector<std::string>>();
      m.degenerate_controls = j.value("degenerate_controls", std::vector<std::string>{});
      m.power_tree = RegressionTree::from_json(j.at("power_tree"));
      for (const auto& t : j.at("zone_trees")) m.zone_trees.push_back(RegressionTree::from_json(t));
      require(m.zone_trees.size() == m.zone_responses.size(), ErrorCode::ParseError, "zone tree count != zone response count");
      return m;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("malformed mbcrt model: ") + e.what());
    }
  }
};

struct MbcrtFitOptions {
  FitConfig tree{0, 30, 1e-12, std::nullopt};  // min_leaf 0 selects max(15, 5(|X_c|+1))
  bool strict_degenerate = false;               // throw DegenerateControl instead of flagging
};

namespace detail {

struct LeafFit {
  double intercept = 0.0;
  std::vector<double> coefficients;
  double rmse = 0.0;
};

/// Least squares with intercept; rank-deficient designs fall back to a trace-scaled ridge.
inline LeafFit fit_leaf_linear(const DesignMatrix& X, std::span<const double> y, const std::vector<std::size_t>& rows,
                               const std::vector<std::size_t>& control_cols, const std::vector<bool>& active) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < control_cols.size(); ++j)
    if (active[j]) cols.push_back(control_cols[j]);
  const auto p = static_cast<Eigen::Index>(cols.size());

  Eigen::MatrixXd A(n, p);
  Eigen::VectorXd b(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    b(r) = y[rows[static_cast<std::size_t>(r)]];
    for (Eigen::Index c = 0; c < p; ++c) A(r, c) = X.at(rows[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]);
  }
  const Eigen::RowVectorXd x_mean = A.colwise().mean();
  const double y_mean = b.mean();
  A.rowwise() -= x_mean;
  b.array() -= y_mean;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  if (p > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() == p) {
      beta = qr.solve(b);
    } else {
      const Eigen::MatrixXd gram = A.transpose() * A;
      const double trace = gram.trace();
      if (trace > 0.0) {
        const double ridge = 1e-8 * trace / static_cast<double>(p);
        beta = (gram + ridge * Eigen::MatrixXd::Identity(p, p)).ldlt().solve(A.transpose() * b);
      }
    }
  }
  LeafFit out;
  out.coefficients.assign(control_cols.size(), 0.0);
  for (std::size_t j = 0, c = 0; j < control_cols.size(); ++j)
    if (active[j]) out.coefficients[j] = beta(static_cast<Eigen::Index>(c++));
  out.intercept = y_mean - (p > 0 ? (x_mean * beta)(0) : 0.0);
  out.rmse = n > 0 ? std::sqrt((A * beta - b).squaredNorm() / static_cast<double>(n)) : 0.0;
  return out;
}

/// Sufficient statistics of a least-squares fit of y on [1, z]: normal matrix, cross products and Σy².
struct LinearStats {
  Eigen::MatrixXd gram;
  Eigen::VectorXd cross;
  double yy = 0.0;
  std::size_t n = 0;

  explicit LinearStats(Eigen::Index m = 0) : gram(Eigen::MatrixXd::Zero(m, m)), cross(Eigen::VectorXd::Zero(m)) {}

  void add(const Eigen::VectorXd& z, double y, double w = 1.0) {
    gram.selfadjointView<Eigen::Lower>().rankUpdate(z, w);
    cross.noalias() += (w * y) * z;
    yy += w * y * y;
    n += static_cast<std::size_t>(w);
  }

  void add(const LinearStats& o) {
    gram += o.gram;
    cross += o.cross;
    yy += o.yy;
    n += o.n;
  }

  LinearStats minus(const LinearStats& o) const {
    LinearStats d;
    d.gram = gram - o.gram;
    d.cross = cross - o.cross;
    d.yy = yy - o.yy;
    d.n = n - o.n;
    return d;
  }
};

/// Residual SSE of the least-squares fit; zero pivots of the pivoted LDLᵀ are dropped (minimum-norm on the rank-deficient part).
class ResidualSolver {
 public:
  double sse(const LinearStats& s) {
    if (s.n == 0) return 0.0;
    full_ = s.gram.selfadjointView<Eigen::Lower>();
    ldlt_.compute(full_);
    const auto& d = ldlt_.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    t_ = ldlt_.transpositionsP() * s.cross;
    ldlt_.matrixL().solveInPlace(t_);
    double explained = 0.0;
    for (Eigen::Index i = 0; i < t_.size(); ++i)
      if (std::abs(d(i)) > 1e-12 * dmax) explained += t_(i) * t_(i) / d(i);
    return std::max(0.0, s.yy - explained);
  }

 private:
  Eigen::MatrixXd full_;
  Eigen::LDLT<Eigen::MatrixXd, Eigen::Lower> ldlt_;
  Eigen::VectorXd t_;
};

/// Grows a tree on disturbance features whose splits minimize the children's residual SSE after
/// regressing the response on the active controls.
class ControlTreeGrower {
 public:
  ControlTreeGrower(const DesignMatrix& X, std::span<const double> y, const FitConfig& config, std::vector<std::size_t> split_features,
                    std::vector<std::size_t> control_cols)
      : X_(X), y_(y), config_(config), allowed_(std::move(split_features)), controls_(std::move(control_cols)), presort_(X) {
    std::sort(allowed_.begin(), allowed_.end());
  }

  RegressionTree grow() {
    Node root;
    root.rows.resize(X_.rows);
    std::iota(root.rows.begin(), root.rows.end(), 0u);
    root.sorted.resize(X_.cols());
    for (auto f : allowed_)
      if (X_.kinds[f] == ColumnKind::Continuous) root.sorted[f] = presort_.order[f];
    double mean = 0;
    std::vector<std::size_t> all(X_.rows);
    std::iota(all.begin(), all.end(), 0);
    root_sse_ = sse_of(y_, all, mean);
    nodes_.clear();
    mark_.assign(X_.rows, 0);
    build(root, 1);
    return RegressionTree(X_.names, X_.kinds, std::move(nodes_), config_);
  }

 private:
  struct Node {
    std::vector<std::uint32_t> rows;
    std::vector<std::vector<std::uint32_t>> sorted;
  };

  /// Node-local coordinates: controls centered and scaled, response centered; keeps the normal equations well conditioned.
  struct Frame {
    std::vector<double> mean, scale;
    double y_mean = 0.0;
  };

  Frame frame_of(const std::vector<std::uint32_t>& rows) const {
    Frame fr;
    const double n = static_cast<double>(rows.size());
    fr.mean.assign(controls_.size(), 0.0);
    fr.scale.assign(controls_.size(), 0.0);
    for (auto r : rows) {
      fr.y_mean += y_[r];
      for (std::size_t j = 0; j < controls_.size(); ++j) fr.mean[j] += X_.at(r, controls_[j]);
    }
    fr.y_mean /= n;
    for (auto& m : fr.mean) m /= n;
    for (auto r : rows)
      for (std::size_t j = 0; j < controls_.size(); ++j) fr.scale[j] += std::pow(X_.at(r, controls_[j]) - fr.mean[j], 2);
    for (auto& s : fr.scale) s = s > 0.0 ? std::sqrt(s / n) : 1.0;
    return fr;
  }

  void encode(const Frame& fr, std::uint32_t r, Eigen::VectorXd& z) const {
    z(0) = 1.0;
    for (std::size_t j = 0; j < controls_.size(); ++j)
      z(static_cast<Eigen::Index>(j + 1)) = (X_.at(r, controls_[j]) - fr.mean[j]) / fr.scale[j];
  }

  Eigen::Index width() const { return static_cast<Eigen::Index>(controls_.size() + 1); }

  void scan_continuous(const Frame& fr, const LinearStats& total, const std::vector<std::uint32_t>& sorted, std::size_t f,
                       CandidateCollector& out) {
    const std::size_t n = sorted.size();
    LinearStats left(width());
    Eigen::VectorXd z(width());
    double prev_x = n ? X_.at(sorted[0], f) : 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      encode(fr, sorted[i - 1], z);
      left.add(z, y_[sorted[i - 1]] - fr.y_mean);
      const double x = X_.at(sorted[i], f);
      const double lo = prev_x;
      prev_x = x;
      if (lo == x || i < config_.min_leaf || n - i < config_.min_leaf) continue;
      const double sse = solver_.sse(left) + solver_.sse(total.minus(left));
      if (!out.admits(sse)) continue;
      double mid = 0.5 * (lo + x);
      if (!(mid < x)) mid = lo;
      SplitCandidate c;
      c.feature = f;
      c.rule.feature = f;
      c.rule.threshold = mid;
      c.sse = sse;
      c.n_left = i;
      out.offer(std::move(c));
    }
  }

  /// Codes ordered by mean residual of the node's own fit, then prefixes scanned.
  void scan_categorical(const Frame& fr, const LinearStats& total, const Node& node, std::size_t f, const Eigen::VectorXd& beta,
                        CandidateCollector& out) {
    std::map<int, std::pair<LinearStats, double>> groups;
    Eigen::VectorXd z(width());
    for (auto r : node.rows) {
      encode(fr, r, z);
      const double yc = y_[r] - fr.y_mean;
      auto [it, fresh] = groups.try_emplace(static_cast<int>(X_.at(r, f)), LinearStats(width()), 0.0);
      it->second.first.add(z, yc);
      it->second.second += yc - z.dot(beta);
    }
    if (groups.size() < 2) return;
    std::vector<std::pair<int, const std::pair<LinearStats, double>*>> order;
    for (const auto& [code, g] : groups) order.push_back({code, &g});
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.second->second / static_cast<double>(a.second->first.n) < b.second->second / static_cast<double>(b.second->first.n);
    });
    LinearStats left(width());
    std::vector<int> codes;
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
      left.add(order[k].second->first);
      codes.push_back(order[k].first);
      if (left.n < config_.min_leaf || total.n - left.n < config_.min_leaf) continue;
      SplitCandidate c;
      c.feature = f;
      c.rule = {f, SplitKind::CategorySubset, 0.0, codes};
      std::sort(c.rule.left_codes.begin(), c.rule.left_codes.end());
      c.sse = solver_.sse(left) + solver_.sse(total.minus(left));
      c.n_left = left.n;
      out.offer(std::move(c));
    }
  }

  int build(Node& node_rows, std::size_t depth) {
    const Frame fr = frame_of(node_rows.rows);
    LinearStats total(width());
    Eigen::VectorXd z(width());
    for (auto r : node_rows.rows) {
      encode(fr, r, z);
      total.add(z, y_[r] - fr.y_mean);
    }
    TreeNode node;
    node.n_samples = node_rows.rows.size();
    node.model.intercept = fr.y_mean;
    node.sse = solver_.sse(total);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);

    const std::size_t n = node_rows.rows.size();
    const double floor = config_.min_split_improvement * root_sse_;
    if (depth >= config_.max_depth || n < 2 * config_.min_leaf || node.sse <= floor) return id;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(width());
    if (std::any_of(allowed_.begin(), allowed_.end(), [&](std::size_t f) { return X_.kinds[f] != ColumnKind::Continuous; }))
      beta = Eigen::MatrixXd(total.gram.selfadjointView<Eigen::Lower>()).completeOrthogonalDecomposition().solve(total.cross);
    CandidateCollector candidates(node.sse);
    for (auto f : allowed_) {
      if (X_.kinds[f] == ColumnKind::Continuous)
        scan_continuous(fr, total, node_rows.sorted[f], f, candidates);
      else
        scan_categorical(fr, total, node_rows, f, beta, candidates);
    }
    auto best = candidates.take();
    if (!best) return id;
    const double gain = node.sse - best->sse;
    if (!(gain > 0.0) || gain < floor) return id;

    Node left, right;
    for (auto r : node_rows.rows) {
      const bool l = best->rule.goes_left(X_.at(r, best->feature));
      mark_[r] = l ? 1 : 2;
      (l ? left : right).rows.push_back(r);
    }
    left.sorted.resize(X_.cols());
    right.sorted.resize(X_.cols());
    for (std::size_t f = 0; f < node_rows.sorted.size(); ++f) {
      auto& src = node_rows.sorted[f];
      if (src.empty()) continue;
      for (auto r : src) (mark_[r] == 1 ? left : right).sorted[f].push_back(r);
      src.clear();
      src.shrink_to_fit();
    }
    node_rows.rows.clear();
    node_rows.rows.shrink_to_fit();
    nodes_[static_cast<std::size_t>(id)].rule = best->rule;
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  const DesignMatrix& X_;
  std::span<const double> y_;
  FitConfig config_;
  std::vector<std::size_t> allowed_;
  std::vector<std::size_t> controls_;
  Presort presort_;
  ResidualSolver solver_;
  std::vector<TreeNode> nodes_;
  std::vector<char> mark_;
  double root_sse_ = 0.0;
};

inline RegressionTree fit_control_tree(const DesignMatrix& X, std::span<const double> y, const VariablePartition& partition,
                                       const FitConfig& config, const std::vector<bool>& active) {
  detail::check_fit_inputs(X, y, config);
  std::vector<std::size_t> control_cols, active_cols, split_cols;
  for (std::size_t j = 0; j < partition.controls.size(); ++j) {
    control_cols.push_back(*X.index_of(partition.controls[j]));
    if (active[j]) active_cols.push_back(control_cols.back());
  }
  for (const auto& d : partition.disturbances) split_cols.push_back(*X.index_of(d));
  RegressionTree tree = ControlTreeGrower(X, y, config, split_cols, active_cols).grow();

  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t r = 0; r < X.rows; ++r) members[tree.leaf_index(X.row(r))].push_back(r);
  for (const auto& [node, rows] : members) {
    const auto fit = fit_leaf_linear(X, y, rows, control_cols, active);
    LeafModel lm;
    lm.kind = LeafKind::Linear;
    lm.intercept = fit.intercept;
    lm.features = control_cols;
    lm.coefficients = fit.coefficients;
    lm.rmse = fit.rmse;
    tree.set_leaf_model(node, std::move(lm));
  }
  return tree;
}

}  // namespace detail

/// Grows the power tree and one tree per zone on disturbances only, with linear control leaves.
inline MbcrtModel fit_mbcrt(const TimeStampedDataset& ds, const VariablePartition& partition, std::string_view power_response,
                            const std::vector<std::string>& zone_responses, const MbcrtFitOptions& options = {},
                            std::vector<Interval> x_safe = {}) {
  partition.validate();
  const auto features = partition.features();
  for (const auto& f : features) ds.column(f);
  std::vector<std::string> responses{std::string(power_response)};
  responses.insert(responses.end(), zone_responses.begin(), zone_responses.end());
  for (const auto& r : responses) {
    ds.column(r);
    if (std::find(features.begin(), features.end(), r) != features.end())
      fail(ErrorCode::InvalidArgument, "response '" + r + "' cannot also be a feature");
  }
  if (ds.empty()) fail(ErrorCode::EmptyData, "no training rows");

  const auto X = ds.matrix(features);
  MbcrtModel model;
  model.partition = partition;
  model.power_response = std::string(power_response);
  model.zone_responses = zone_responses;

  std::vector<bool> active(partition.controls.size(), true);
  for (std::size_t j = 0; j < partition.controls.size(); ++j) {
    const auto v = ds.values(partition.controls[j]);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*lo == *hi) {
      if (options.strict_degenerate) fail(ErrorCode::DegenerateControl, "control '" + partition.controls[j] + "' is constant in the data");
      active[j] = false;
      model.degenerate_controls.push_back(partition.controls[j]);
    }
    if (x_safe.size() < partition.controls.size()) x_safe.push_back({*lo, *hi});
  }
  require(x_safe.size() == partition.controls.size(), ErrorCode::InvalidArgument, "x_safe must give one interval per control");
  for (const auto& b : x_safe)
    require(std::isfinite(b.lo) && std::isfinite(b.hi) && b.lo <= b.hi, ErrorCode::InvalidArgument, "x_safe intervals must be finite [lo, hi]");
  model.x_safe = std::move(x_safe);

  FitConfig cfg = options.tree;
  if (cfg.min_leaf == 0) cfg.min_leaf = std::max<std::size_t>(15, 5 * (partition.controls.size() + 1));
  model.power_tree = detail::fit_control_tree(X, ds.values(power_response), partition, cfg, active);
  for (const auto& z : zone_responses) model.zone_trees.push_back(detail::fit_control_tree(X, ds.values(z), partition, cfg, active));
  return model;
}

/// Routes a disturbance forecast to the active region's control model.
inline ControlLeafModel locate_leaf(const RegressionTree& tree, const VariablePartition& partition, const FeatureVector& x_d) {
  const auto& node = tree.nodes()[tree.leaf_index(x_d)];
  ControlLeafModel out;
  out.intercept = node.model.intercept;
  out.coefficients.assign(partition.controls.size(), 0.0);
  out.region_id = node.region_id;
  out.n_samples = node.n_samples;
  out.rmse = node.model.rmse;
  for (std::size_t i = 0; i < node.model.features.size(); ++i) {
    const auto& name = tree.features()[node.model.features[i]];
    auto it = std::find(partition.controls.begin(), partition.controls.end(), name);
    if (it == partition.controls.end()) fail(ErrorCode::SchemaMismatch, "leaf model references non-control feature '" + name + "'");
    out.coefficients[static_cast<std::size_t>(it - partition.controls.begin())] = node.model.coefficients[i];
  }
  return out;
}

struct SynthesisConfig {
  double lambda = 50.0;                          // kW per °C of |T̂ - T_ref|
  std::vector<double> t_ref;                     // per zone
  std::optional<std::vector<Interval>> comfort;  // optional hard per-zone bounds
  double violation_penalty = 1e4;                // kW per °C when hard bounds must be relaxed
  bool strict = false;                           // throw InfeasibleComfort instead of falling back

  void validate(std::size_t zones) const {
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::InvalidArgument, "lambda must be >= 0");
    require(t_ref.size() == zones, ErrorCode::InvalidArgument,
            "t_ref has " + std::to_string(t_ref.size()) + " entries for " + std::to_string(zones) + " zones");
    if (comfort) {
      require(comfort->size() == zones, ErrorCode::InvalidArgument, "comfort bounds must be given per zone");
      for (std::size_t k = 0; k < zones; ++k)
        require((*comfort)[k].lo <= t_ref[k] && t_ref[k] <= (*comfort)[k].hi, ErrorCode::InvalidArgument,
                "T_ref of zone " + std::to_string(k + 1) + " lies outside its comfort bounds");
    }
  }
};

inline void to_json(nlohmann::json& j, const SynthesisConfig& c) {
  j = {{"lambda", c.lambda}, {"t_ref", c.t_ref}, {"violation_penalty", c.violation_penalty}, {"strict", c.strict}};
  if (c.comfort) {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& i : *c.comfort) b.push_back({i.lo, i.hi});
    j["comfort_bounds"] = b;
  }
}

inline void from_json(const nlohmann::json& j, SynthesisConfig& c) {
  c.lambda = j.value("lambda", 50.0);
  c.t_ref = j.value("t_ref", std::vector<double>{});
  c.violation_penalty = j.value("violation_penalty", 1e4);
  c.strict = j.value("strict", false);
  c.comfort.reset();
  if (j.contains("comfort_bounds") && !j.at("comfort_bounds").is_null()) {
    std::vector<Interval> b;
    for (const auto& p : j.at("comfort_bounds")) {
      const auto v = p.get<std::vector<double>>();
      require(v.size() == 2, ErrorCode::InvalidArgument, "comfort bounds must be [lo, hi]");
      b.push_back({v[0], v[1]});
    }
    c.comfort = std::move(b);
  }
}

namespace detail {

/// Largest |α0 + βᵀu - T_ref| over the box; a finite cap for the auxiliary variables.
inline double deviation_cap(const ControlLeafModel& m, double t_ref, const std::vector<Interval>& box) {
  double cap = std::abs(m.intercept - t_ref);
  for (std::size_t j = 0; j < box.size(); ++j) cap += std::abs(m.coefficients[j]) * std::max(std::abs(box[j].lo), std::abs(box[j].hi));
  return 2.0 * cap + 1.0;
}

}  // namespace detail

/// min kŴ(u) + λ Σ s_k  with  s_k >= |T̂_k(u) - T_ref,k|,  u in x_safe, optional hard comfort rows.
/// With `relax`, hard rows get penalized violation variables instead.
inline LinearProgram assemble_lp(const ControlLeafModel& power, const std::vector<ControlLeafModel>& zones, const SynthesisConfig& config,
                                 const std::vector<Interval>& x_safe, const std::vector<std::string>& control_names = {},
                                 bool relax = false) {
  config.validate(zones.size());
  const std::size_t p = x_safe.size();
  require(power.coefficients.size() == p, ErrorCode::InvalidArgument, "power leaf and x_safe disagree on the control count");
  for (const auto& z : zones) require(z.coefficients.size() == p, ErrorCode::InvalidArgument, "zone leaf and x_safe disagree on the control count");

  LinearProgram lp;
  for (std::size_t j = 0; j < p; ++j)
    lp.add_variable(j < control_names.size() ? control_names[j] : "u" + std::to_string(j + 1), x_safe[j].lo, x_safe[j].hi, power.coefficients[j]);
  lp.constant = power.intercept;
  const std::size_t q = zones.size();
  if (config.lambda > 0.0) {
    for (std::size_t k = 0; k < q; ++k) {
      const double cap = detail::deviation_cap(zones[k], config.t_ref[k], x_safe);
      const std::size_t s = lp.add_variable("s" + std::to_string(k + 1), 0.0, cap, config.lambda);
      std::vector<double> above(lp.size(), 0.0), below(lp.size(), 0.0);
      for (std::size_t j = 0; j < p; ++j) {
        above[j] = zones[k].coefficients[j];
        below[j] = -zones[k].coefficients[j];
      }
      above[s] = -1.0;
      below[s] = -1.0;
      lp.add_row(std::move(above), config.t_ref[k] - zones[k].intercept, "dev_hi" + std::to_string(k + 1));
      lp.add_row(std::move(below), zones[k].intercept - config.t_ref[k], "dev_lo" + std::to_string(k + 1));
    }
  }
  if (config.comfort) {
    for (std::size_t k = 0; k < q; ++k) {
      const auto& band = (*config.comfort)[k];
      std::optional<std::size_t> v;
      if (relax) v = lp.add_variable("v" + std::to_string(k + 1), 0.0, detail::deviation_cap(zones[k], band.lo, x_safe) +
                                                                        detail::deviation_cap(zones[k], band.hi, x_safe),
                                     config.violation_penalty);
      std::vector<double> hi(lp.size(), 0.0), lo(lp.size(), 0.0);
      for (std::size_t j = 0; j < p; ++j) {
        hi[j] = zones[k].coefficients[j];
        lo[j] = -zones[k].coefficients[j];
      }
      if (v) hi[*v] = lo[*v] = -1.0;
      lp.add_row(std::move(hi), band.hi - zones[k].intercept, "comfort_hi" + std::to_string(k + 1));
      lp.add_row(std::move(lo), zones[k].intercept - band.lo, "comfort_lo" + std::to_string(k + 1));
    }
  }
  return lp;
}

enum class StepStatus { Optimal, InfeasibleComfort };

inline std::string_view to_string(StepStatus s) { return s == StepStatus::Optimal ? "optimal" : "infeasible_comfort"; }

struct SynthesisStep {
  std::vector<double> u;  // aligned with partition.controls
  double kw_hat = 0.0;
  std::vector<double> t_hat;
  std::vector<int> region_ids;  // power tree first, then zones
  double objective = 0.0;
  StepStatus status = StepStatus::Optimal;
  std::vector<std::size_t> violated_rows;  // hard rows left unsatisfiable
};

/// Raised in strict mode; carries the penalized relaxation as a fallback recommendation.
class InfeasibleComfortError : public Error {
 public:
  InfeasibleComfortError(std::string message, SynthesisStep fallback)
      : Error(ErrorCode::InfeasibleComfort, std::move(message)), fallback_(std::move(fallback)) {}
  const SynthesisStep& fallback() const { return fallback_; }

 private:
  SynthesisStep fallback_;
};

/// Locates the active region of every tree, assembles the LP and solves it.
inline SynthesisStep synthesize_step(const MbcrtModel& model, const FeatureVector& x_d, const SynthesisConfig& config,
                                     std::optional<std::vector<Interval>> x_safe = std::nullopt) {
  const auto& box = x_safe ? *x_safe : model.x_safe;
  require(box.size() == model.partition.controls.size(), ErrorCode::InvalidArgument, "x_safe must give one interval per control");
  const auto power = locate_leaf(model.power_tree, model.partition, x_d);
  std::vector<ControlLeafModel> zones;
  for (const auto& t : model.zone_trees) zones.push_back(locate_leaf(t, model.partition, x_d));

  SynthesisStep out;
  out.region_ids.push_back(power.region_id);
  for (const auto& z : zones) out.region_ids.push_back(z.region_id);

  auto sol = solve_lp(assemble_lp(power, zones, config, box, model.partition.controls));
  if (sol.status == LpStatus::Infeasible) {
    out.status = StepStatus::InfeasibleComfort;
    out.violated_rows = sol.violated_rows;
    sol = solve_lp(assemble_lp(power, zones, config, box, model.partition.controls, true));
  }
  require(sol.status == LpStatus::Optimal, ErrorCode::InvalidArgument, "synthesis LP not solvable: " + std::string(to_string(sol.status)));
  out.u.assign(sol.values.begin(), sol.values.begin() + static_cast<std::ptrdiff_t>(box.size()));
  out.kw_hat = power.evaluate(out.u);
  for (const auto& z : zones) out.t_hat.push_back(z.evaluate(out.u));
  out.objective = out.kw_hat;
  for (std::size_t k = 0; k < zones.size(); ++k) out.objective += config.lambda * std::abs(out.t_hat[k] - config.t_ref[k]);
  if (out.status == StepStatus::InfeasibleComfort && config.strict)
    throw InfeasibleComfortError("comfort bounds cannot be met in the active regions", out);
  return out;
}

// ---------------------------------------------------------------------------
// DR event loop

/// Notification, reduction deadline, sustained period [start, end) and recovery.
struct DrEvent {
  Timestamp notification{};
  Timestamp deadline{};
  Timestamp start{};
  Timestamp end{};
  Timestamp recovery_end{};
  int interval_minutes = 5;

  void validate() const {
    require(interval_minutes > 0, ErrorCode::InvalidArgument, "event interval must be positive");
    require(notification <= deadline && deadline <= start && start <= end && end <= recovery_end, ErrorCode::InvalidArgument,
            "event times must satisfy notification <= deadline <= start <= end <= recovery_end");
    require((end - start) % std::chrono::minutes{interval_minutes} == std::chrono::minutes{0}, ErrorCode::InvalidArgument,
            "sustained period is not a whole number of steps");
  }

  std::size_t steps() const { return static_cast<std::size_t>((end - start) / std::chrono::minutes{interval_minutes}); }

  /// An event whose timeline collapses onto the sustained period.
  static DrEvent sustained(Timestamp start, Timestamp end, int interval_minutes = 5) { return {start, start, start, end, end, interval_minutes}; }

  nlohmann::json to_json() const {
    return {{"notification", format_timestamp(notification)}, {"deadline", format_timestamp(deadline)}, {"start", format_timestamp(start)},
            {"end", format_timestamp(end)},                   {"recovery_end", format_timestamp(recovery_end)},
            {"interval_minutes", interval_minutes}};
  }

  static DrEvent from_json(const nlohmann::json& j) {
    auto ts = [&](const char* key, std::optional<Timestamp> fallback) {
      if (!j.contains(key)) {
        if (fallback) return *fallback;
        fail(ErrorCode::ParseError, std::string("event lacks '") + key + "'");
      }
      auto t = parse_timestamp(j.at(key).get<std::string>());
      if (!t) fail(ErrorCode::ParseError, std::string("bad timestamp in event field '") + key + "'");
      return *t;
    };
    DrEvent e;
    e.start = ts("start", std::nullopt);
    e.end = ts("end", std::nullopt);
    e.notification = ts("notification", e.start);
    e.deadline = ts("deadline", e.start);
    e.recovery_end = ts("recovery_end", e.end);
    e.interval_minutes = j.value("interval_minutes", 5);
    e.validate();
    return e;
  }
};

/// Closed-loop plant: applies named controls for one step, returns measured responses by name.
using Plant = std::function<std::map<std::string, double, std::less<>>(std::size_t step, const FeatureVector& controls)>;

struct TraceEntry {
  std::size_t step = 0;
  Timestamp t{};
  SynthesisStep result;
  std::optional<double> kw_measured;
  std::vector<double> t_measured;
  std::optional<double> baseline_kw;
  std::optional<double> curtailment_kw;
  double cumulative_kwh = 0.0;
};

struct SynthesisTrace {
  std::vector<std::string> controls;
  std::vector<TraceEntry> entries;

  std::size_t size() const { return entries.size(); }

  std::set<int> power_regions() const {
    std::set<int> r;
    for (const auto& e : entries) r.insert(e.result.region_ids.front());
    return r;
  }

  static nlohmann::json entry_json(const std::vector<std::string>& controls, const TraceEntry& e) {
    nlohmann::json u = nlohmann::json::object();
    for (std::size_t j = 0; j < controls.size(); ++j) u[controls[j]] = e.result.u[j];
    nlohmann::json j = {{"step", e.step},
                        {"t", format_timestamp(e.t)},
                        {"u*", u},
                        {"kW_hat", e.result.kw_hat},
                        {"T_hat", e.result.t_hat},
                        {"region_ids", e.result.region_ids},
                        {"objective", e.result.objective},
                        {"status", to_string(e.result.status)},
                        {"cumulative_kwh", e.cumulative_kwh}};
    j["kW_measured"] = e.kw_measured ? nlohmann::json(*e.kw_measured) : nlohmann::json(nullptr);
    if (!e.t_measured.empty()) j["T_measured"] = e.t_measured;
    j["baseline_kW"] = e.baseline_kw ? nlohmann::json(*e.baseline_kw) : nlohmann::json(nullptr);
    j["curtailment_kW"] = e.curtailment_kw ? nlohmann::json(*e.curtailment_kw) : nlohmann::json(nullptr);
    return j;
  }

  nlohmann::json to_json(std::size_t since = 0) const {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = since; i < entries.size(); ++i) out.push_back(entry_json(controls, entries[i]));
    return out;
  }
};

/// Sequential state of one DR event; each step's lags depend on the previous step.
class EventRunner {
 public:
  EventRunner(const MbcrtModel& model, std::vector<FeatureVector> forecast, const LagHistory& history, SynthesisConfig config,
              DrEvent event, std::optional<Plant> plant = std::nullopt, std::vector<double> baseline = {})
      : model_(model), forecast_(std::move(forecast)), config_(std::move(config)), event_(event), plant_(std::move(plant)),
        baseline_(std::move(baseline)) {
    event_.validate();
    config_.validate(model_.zones());
    const std::size_t n = event_.steps();
    if (forecast_.size() < n)
      fail(ErrorCode::InsufficientHistory, "forecast covers " + std::to_string(forecast_.size()) + " of " + std::to_string(n) + " event steps");
    require(baseline_.empty() || baseline_.size() >= n, ErrorCode::InvalidArgument, "baseline shorter than the event");
    for (const auto& [response, order] : model_.lag_orders()) {
      auto it = history.find(response);
      if (it == history.end() || it->second.size() < order)
        fail(ErrorCode::InsufficientHistory, "need " + std::to_string(order) + " recent values of " + response);
      LagWindow w(std::span<const double>(it->second).first(order));
      w.reserve(order);
      lags_[response] = std::move(w);
    }
    trace_.controls = model_.partition.controls;
  }

  bool done() const { return trace_.entries.size() >= event_.steps(); }
  const SynthesisTrace& trace() const { return trace_; }
  const SynthesisConfig& config() const { return config_; }
  const DrEvent& event() const { return event_; }

  /// Takes effect from the next step.
  void update_config(SynthesisConfig config) {
    config.validate(model_.zones());
    config_ = std::move(config);
  }

  const TraceEntry& step() {
    require(!done(), ErrorCode::InvalidArgument, "event already complete");
    const std::size_t i = trace_.entries.size();
    FeatureVector x = forecast_[i];
    for (const auto& [response, window] : lags_) {
      const auto v = window.values();
      for (std::size_t j = 0; j < v.size(); ++j) x.set(lag_name(response, j + 1), v[j]);
    }

    TraceEntry e;
    e.step = i;
    e.t = event_.start + std::chrono::minutes{event_.interval_minutes * static_cast<std::int64_t>(i)};
    e.result = synthesize_step(model_, x, config_);

    std::map<std::string, double, std::less<>> observed;
    observed[model_.power_response] = e.result.kw_hat;
    for (std::size_t k = 0; k < model_.zone_responses.size(); ++k) observed[model_.zone_responses[k]] = e.result.t_hat[k];
    if (plant_) {
      FeatureVector u;
      for (std::size_t j = 0; j < e.result.u.size(); ++j) u.set(model_.partition.controls[j], e.result.u[j]);
      const auto measured = (*plant_)(i, u);
      for (const auto& [name, v] : measured) observed[name] = v;
      if (auto it = measured.find(model_.power_response); it != measured.end()) e.kw_measured = it->second;
      for (const auto& z : model_.zone_responses)
        if (auto it = measured.find(z); it != measured.end()) e.t_measured.push_back(it->second);
    }
    for (auto& [response, window] : lags_) {
      auto it = observed.find(response);
      if (it == observed.end()) fail(ErrorCode::SchemaMismatch, "no value available to update lags of " + response);
      window.push(it->second);
    }

    const double actual = e.kw_measured.value_or(e.result.kw_hat);
    const double prev = trace_.entries.empty() ? 0.0 : trace_.entries.back().cumulative_kwh;
    if (!baseline_.empty()) {
      e.baseline_kw = baseline_[i];
      e.curtailment_kw = baseline_[i] - actual;
      e.cumulative_kwh = prev + *e.curtailment_kw * event_.interval_minutes / 60.0;
    }
    trace_.entries.push_back(std::move(e));
    return trace_.entries.back();
  }

  const SynthesisTrace& run() {
    while (!done()) step();
    return trace_;
  }

 private:
  const MbcrtModel& model_;
  std::vector<FeatureVector> forecast_;
  SynthesisConfig config_;
  DrEvent event_;
  std::optional<Plant> plant_;
  std::vector<double> baseline_;
  std::map<std::string, LagWindow, std::less<>> lags_;
  SynthesisTrace trace_;
};

/// Open-loop without a plant (lags from predictions), closed-loop with one (lags from measurements).
inline SynthesisTrace run_dr_event(const MbcrtModel& model, std::vector<FeatureVector> forecast, const LagHistory& history,
                                   SynthesisConfig config, const DrEvent& event, std::optional<Plant> plant = std::nullopt,
                                   std::vector<double> baseline = {}) {
  EventRunner runner(model, std::move(forecast), history, std::move(config), event, std::move(plant), std::move(baseline));
  return runner.run();
}

}  // namespace dra
