#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dradvisor/data.hpp"
#include "dradvisor/error.hpp"
#include "dradvisor/rng.hpp"

namespace dra {

enum class SplitKind { Threshold, CategorySubset };

/// Threshold splits send x <= threshold left; categorical splits send x in left_codes left.
struct SplitRule {
  std::size_t feature = 0;
  SplitKind kind = SplitKind::Threshold;
  double threshold = 0.0;
  std::vector<int> left_codes;  // sorted

  bool goes_left(double x) const {
    if (kind == SplitKind::Threshold) return x <= threshold;
    return std::binary_search(left_codes.begin(), left_codes.end(), static_cast<int>(x));
  }
};

enum class LeafKind { Constant, Linear };

struct LeafModel {
  LeafKind kind = LeafKind::Constant;
  double intercept = 0.0;
  std::vector<std::size_t> features;  // indices into the owning tree's schema
  std::vector<double> coefficients;
  double rmse = 0.0;  // training residual RMSE of this leaf model

  double evaluate(std::span<const double> x) const {
    double v = intercept;
    for (std::size_t i = 0; i < features.size(); ++i) v += coefficients[i] * x[features[i]];
    return v;
  }
};

struct TreeNode {
  int left = -1;
  int right = -1;
  SplitRule rule;
  LeafModel model;  // internal nodes keep their constant fit (needed for pruning)
  std::size_t n_samples = 0;
  double sse = 0.0;  // training SSE of the constant fit at this node
  int region_id = -1;

  bool is_leaf() const { return left < 0; }
};

struct FitConfig {
  std::size_t min_leaf = 5;
  std::size_t max_depth = 30;
  double min_split_improvement = 1e-12;  // relative to the root SSE
  std::optional<std::vector<std::string>> feature_whitelist;
};

inline void to_json(nlohmann::json& j, const FitConfig& c) {
  j = {{"min_leaf", c.min_leaf}, {"max_depth", c.max_depth}, {"min_split_improvement", c.min_split_improvement}};
  if (c.feature_whitelist) j["feature_whitelist"] = *c.feature_whitelist;
}

inline void from_json(const nlohmann::json& j, FitConfig& c) {
  c.min_leaf = j.value("min_leaf", std::size_t{5});
  c.max_depth = j.value("max_depth", std::size_t{30});
  c.min_split_improvement = j.value("min_split_improvement", 1e-12);
  if (j.contains("feature_whitelist") && !j.at("feature_whitelist").is_null())
    c.feature_whitelist = j.at("feature_whitelist").get<std::vector<std::string>>();
}

class RegressionTree {
 public:
  RegressionTree() = default;
  RegressionTree(std::vector<std::string> features, std::vector<ColumnKind> kinds, std::vector<TreeNode> nodes, FitConfig config = {})
      : features_(std::move(features)), kinds_(std::move(kinds)), nodes_(std::move(nodes)), config_(std::move(config)) {
    require(!nodes_.empty(), ErrorCode::InvalidArgument, "tree needs at least one node");
    if (kinds_.empty()) kinds_.assign(features_.size(), ColumnKind::Continuous);
    renumber_regions();
  }

  const std::vector<std::string>& features() const { return features_; }
  const std::vector<ColumnKind>& kinds() const { return kinds_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const FitConfig& config() const { return config_; }
  const TreeNode& root() const { return nodes_.front(); }

  std::optional<std::size_t> feature_index(std::string_view name) const {
    for (std::size_t i = 0; i < features_.size(); ++i)
      if (features_[i] == name) return i;
    return std::nullopt;
  }

  /// Leaf node index reached by an aligned feature row.
  std::size_t leaf_index(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      i = static_cast<std::size_t>(n.rule.goes_left(x[n.rule.feature]) ? n.left : n.right);
    }
    return i;
  }

  /// Routing by name; only features on the root-to-leaf path are required.
  std::size_t leaf_index(const FeatureVector& x) const {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      i = static_cast<std::size_t>(n.rule.goes_left(lookup(x, n.rule.feature)) ? n.left : n.right);
    }
    return i;
  }

  const TreeNode& leaf(std::span<const double> x) const { return nodes_[leaf_index(x)]; }
  const TreeNode& leaf(const FeatureVector& x) const { return nodes_[leaf_index(x)]; }

  double predict(std::span<const double> x) const { return leaf(x).model.evaluate(x); }

  double predict(const FeatureVector& x) const {
    const auto& lm = leaf(x).model;
    double v = lm.intercept;
    for (std::size_t i = 0; i < lm.features.size(); ++i) v += lm.coefficients[i] * lookup(x, lm.features[i]);
    return v;
  }

  std::vector<double> predict(const DesignMatrix& X) const {
    const auto cols = align(X);
    std::vector<double> out(X.rows);
    std::vector<double> row(features_.size());
    for (std::size_t r = 0; r < X.rows; ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) row[c] = X.at(r, cols[c]);
      out[r] = predict(std::span<const double>(row));
    }
    return out;
  }

  /// Column index in X for each tree feature.
  std::vector<std::size_t> align(const DesignMatrix& X) const {
    std::vector<std::size_t> cols(features_.size());
    for (std::size_t i = 0; i < features_.size(); ++i) {
      auto c = X.index_of(features_[i]);
      if (!c) fail(ErrorCode::SchemaMismatch, "design matrix lacks tree feature '" + features_[i] + "'");
      cols[i] = *c;
    }
    return cols;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

  std::size_t depth() const { return depth_from(0); }

  /// Replace a leaf's model in place (used by model-tree learners).
  void set_leaf_model(std::size_t node, LeafModel model) {
    require(node < nodes_.size() && nodes_[node].is_leaf(), ErrorCode::InvalidArgument, "not a leaf");
    nodes_[node].model = std::move(model);
  }

  /// Node indices of all leaves, ordered by region id.
  std::vector<std::size_t> leaves() const {
    std::vector<std::size_t> out(leaf_count());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].is_leaf()) out[static_cast<std::size_t>(nodes_[i].region_id)] = i;
    return out;
  }

  /// Copy with every node flagged in `collapse` turned into a leaf.
  RegressionTree collapsed(const std::vector<bool>& collapse) const {
    std::vector<TreeNode> out;
    std::function<int(std::size_t)> copy = [&](std::size_t i) -> int {
      const int id = static_cast<int>(out.size());
      out.push_back(nodes_[i]);
      if (!nodes_[i].is_leaf() && !collapse[i]) {
        const int l = copy(static_cast<std::size_t>(nodes_[i].left));
        const int r = copy(static_cast<std::size_t>(nodes_[i].right));
        out[static_cast<std::size_t>(id)].left = l;
        out[static_cast<std::size_t>(id)].right = r;
      } else {
        out[static_cast<std::size_t>(id)].left = -1;
        out[static_cast<std::size_t>(id)].right = -1;
      }
      return id;
    };
    copy(0);
    return RegressionTree(features_, kinds_, std::move(out), config_);
  }

  nlohmann::json to_json() const;
  static RegressionTree from_json(const nlohmann::json& j);

  friend bool operator==(const RegressionTree& a, const RegressionTree& b) { return a.to_json() == b.to_json(); }

 private:
  double lookup(const FeatureVector& x, std::size_t feature) const {
    auto v = x.get(features_[feature]);
    if (!v) fail(ErrorCode::SchemaMismatch, "input lacks feature '" + features_[feature] + "'");
    return *v;
  }

  std::size_t depth_from(std::size_t i) const {
    if (nodes_[i].is_leaf()) return 1;
    return 1 + std::max(depth_from(static_cast<std::size_t>(nodes_[i].left)), depth_from(static_cast<std::size_t>(nodes_[i].right)));
  }

  void renumber_regions() {
    int next = 0;
    std::function<void(std::size_t)> walk = [&](std::size_t i) {
      if (nodes_[i].is_leaf()) {
        nodes_[i].region_id = next++;
        return;
      }
      nodes_[i].region_id = -1;
      walk(static_cast<std::size_t>(nodes_[i].left));
      walk(static_cast<std::size_t>(nodes_[i].right));
    };
    walk(0);
  }

  std::vector<std::string> features_;
  std::vector<ColumnKind> kinds_;
  std::vector<TreeNode> nodes_;
  FitConfig config_;
};

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json RegressionTree::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    nlohmann::json jn = {{"id", i}, {"n_samples", n.n_samples}, {"region_id", n.region_id}, {"sse", n.sse}, {"mean", n.model.intercept}};
    if (n.is_leaf()) {
      nlohmann::json coefs = nlohmann::json::array();
      for (std::size_t k = 0; k < n.model.features.size(); ++k)
        coefs.push_back({{"feature", features_[n.model.features[k]]}, {"value", n.model.coefficients[k]}});
      jn["leaf_model"] = {{"kind", n.model.kind == LeafKind::Constant ? "constant" : "linear"},
                          {"intercept", n.model.intercept},
                          {"coefficients", coefs},
                          {"rmse", n.model.rmse}};
    } else {
      nlohmann::json rule = {{"feature", features_[n.rule.feature]}};
      if (n.rule.kind == SplitKind::Threshold) {
        rule["kind"] = "threshold";
        rule["threshold"] = n.rule.threshold;
      } else {
        rule["kind"] = "category_subset";
        rule["left_codes"] = n.rule.left_codes;
      }
      jn["rule"] = rule;
      jn["left"] = n.left;
      jn["right"] = n.right;
    }
    nodes.push_back(std::move(jn));
  }
  std::vector<std::string> kinds;
  for (auto k : kinds_) kinds.emplace_back(to_string(k));
  return {{"type", "tree"}, {"features", features_}, {"kinds", kinds}, {"config", config_}, {"nodes", nodes}};
}

inline RegressionTree RegressionTree::from_json(const nlohmann::json& j) {
  try {
    auto features = j.at("features").get<std::vector<std::string>>();
    std::vector<ColumnKind> kinds;
    for (const auto& k : j.value("kinds", std::vector<std::string>{})) kinds.push_back(parse_kind(k));
    auto index_of = [&](const std::string& name) {
      auto it = std::find(features.begin(), features.end(), name);
      if (it == features.end()) fail(ErrorCode::SchemaMismatch, "tree references unknown feature '" + name + "'");
      return static_cast<std::size_t>(it - features.begin());
    };
    std::vector<TreeNode> nodes(j.at("nodes").size());
    for (const auto& jn : j.at("nodes")) {
      const auto id = jn.at("id").get<std::size_t>();
      require(id < nodes.size(), ErrorCode::ParseError, "node id out of range");
      auto& n = nodes[id];
      n.n_samples = jn.at("n_samples").get<std::size_t>();
      n.sse = jn.value("sse", 0.0);
      n.model.intercept = jn.value("mean", 0.0);
      if (jn.contains("rule")) {
        const auto& r = jn.at("rule");
        n.rule.feature = index_of(r.at("feature").get<std::string>());
        if (r.at("kind").get<std::string>() == "threshold") {
          n.rule.kind = SplitKind::Threshold;
          n.rule.threshold = r.at("threshold").get<double>();
        } else {
          n.rule.kind = SplitKind::CategorySubset;
          n.rule.left_codes = r.at("left_codes").get<std::vector<int>>();
          std::sort(n.rule.left_codes.begin(), n.rule.left_codes.end());
        }
        n.left = jn.at("left").get<int>();
        n.right = jn.at("right").get<int>();
      } else {
        const auto& lm = jn.at("leaf_model");
        n.model.kind = lm.at("kind").get<std::string>() == "linear" ? LeafKind::Linear : LeafKind::Constant;
        n.model.intercept = lm.at("intercept").get<double>();
        n.model.rmse = lm.value("rmse", 0.0);
        for (const auto& c : lm.at("coefficients")) {
          n.model.features.push_back(index_of(c.at("feature").get<std::string>()));
          n.model.coefficients.push_back(c.at("value").get<double>());
        }
      }
    }
    FitConfig config;
    if (j.contains("config")) config = j.at("config").get<FitConfig>();
    return RegressionTree(std::move(features), std::move(kinds), std::move(nodes), std::move(config));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed tree JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Growth

namespace detail {

struct SplitCandidate {
  std::size_t feature = 0;
  SplitRule rule;
  double sse = std::numeric_limits<double>::infinity();
  std::size_t n_left = 0;
};

/// Relative tolerance under which two candidate child SSEs count as tied.
inline constexpr double kTieTolerance = 1e-11;

inline double sse_of(std::span<const double> y, std::span<const std::size_t> rows, double& mean) {
  double s = 0;
  for (auto r : rows) s += y[r];
  mean = rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
  double q = 0;
  for (auto r : rows) q += (y[r] - mean) * (y[r] - mean);
  return q;
}

/// Streams candidates in scan order, keeping only those that can survive the tie rule:
/// the minimum SSE, resolved to the first candidate within kTieTolerance * node_sse of it.
class CandidateCollector {
 public:
  explicit CandidateCollector(double node_sse) : tol_(kTieTolerance * node_sse) {}

  bool admits(double sse) const { return sse <= best_ + tol_; }

  void offer(SplitCandidate c) {
    if (!admits(c.sse)) return;
    if (c.sse < best_) {
      best_ = c.sse;
      std::erase_if(kept_, [&](const SplitCandidate& k) { return k.sse > best_ + tol_; });
    }
    kept_.push_back(std::move(c));
  }

  std::optional<SplitCandidate> take() {
    for (auto& c : kept_)
      if (c.sse <= best_ + tol_) return std::move(c);
    return std::nullopt;
  }

 private:
  double tol_;
  double best_ = std::numeric_limits<double>::infinity();
  std::vector<SplitCandidate> kept_;
};

/// Row order of every continuous column sorted by (value, row); shared by all trees fit on one matrix.
struct Presort {
  std::vector<std::vector<std::uint32_t>> order;  // empty for categorical columns

  explicit Presort(const DesignMatrix& X) : order(X.cols()) {
    for (std::size_t f = 0; f < X.cols(); ++f) {
      if (X.kinds[f] != ColumnKind::Continuous) continue;
      auto& o = order[f];
      o.resize(X.rows);
      std::iota(o.begin(), o.end(), 0u);
      std::sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double xa = X.at(a, f), xb = X.at(b, f);
        return xa < xb || (xa == xb && a < b);
      });
    }
  }
};

/// Scans one continuous feature over rows presorted by value; appends candidates in threshold order.
inline void scan_continuous(const DesignMatrix& X, std::span<const double> y, std::span<const std::uint32_t> sorted, std::size_t feature,
                            double node_mean, std::size_t min_leaf, CandidateCollector& out) {
  const std::size_t n = sorted.size();
  double total = 0, total_sq = 0;
  for (auto r : sorted) {
    const double v = y[r] - node_mean;
    total += v;
    total_sq += v * v;
  }
  double s = 0, sq = 0;
  double prev_x = n ? X.at(sorted[0], feature) : 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double v = y[sorted[i - 1]] - node_mean;
    s += v;
    sq += v * v;
    const double x = X.at(sorted[i], feature);
    const double lo = prev_x;
    prev_x = x;
    if (lo == x) continue;
    if (i < min_leaf || n - i < min_leaf) continue;
    const double nl = static_cast<double>(i), nr = static_cast<double>(n - i);
    const double sse = std::max(0.0, (sq - s * s / nl) + ((total_sq - sq) - (total - s) * (total - s) / nr));
    if (!out.admits(sse)) continue;
    double mid = 0.5 * (lo + x);
    if (!(mid < x)) mid = lo;
    SplitCandidate c;
    c.feature = feature;
    c.rule.feature = feature;
    c.rule.threshold = mid;
    c.sse = sse;
    c.n_left = i;
    out.offer(std::move(c));
  }
}

/// Categorical: order codes by mean response, then scan prefixes.
inline void scan_categorical(const DesignMatrix& X, std::span<const double> y, std::span<const std::uint32_t> rows, std::size_t feature,
                             double node_mean, std::size_t min_leaf, CandidateCollector& out) {
  const std::size_t n = rows.size();
  std::map<int, std::pair<double, std::size_t>> stats;
  double total_sq = 0;
  for (auto r : rows) {
    const double v = y[r] - node_mean;
    auto& st = stats[static_cast<int>(X.at(r, feature))];
    st.first += v;
    st.second += 1;
    total_sq += v * v;
  }
  if (stats.size() < 2) return;
  std::vector<std::pair<int, std::pair<double, std::size_t>>> order(stats.begin(), stats.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.second.first / static_cast<double>(a.second.second) < b.second.first / static_cast<double>(b.second.second);
  });
  double total = 0;
  for (const auto& o : order) total += o.second.first;
  // The within-group part cancels: child SSE = total_sq - s_l^2/n_l - s_r^2/n_r.
  double s = 0;
  std::size_t nl = 0;
  std::vector<int> left;
  for (std::size_t k = 0; k + 1 < order.size(); ++k) {
    s += order[k].second.first;
    nl += order[k].second.second;
    left.push_back(order[k].first);
    const std::size_t nr = n - nl;
    if (nl < min_leaf || nr < min_leaf) continue;
    const double sse = total_sq - s * s / static_cast<double>(nl) - (total - s) * (total - s) / static_cast<double>(nr);
    SplitCandidate c;
    c.feature = feature;
    c.rule = {feature, SplitKind::CategorySubset, 0.0, left};
    std::sort(c.rule.left_codes.begin(), c.rule.left_codes.end());
    c.sse = std::max(0.0, sse);
    c.n_left = nl;
    out.offer(std::move(c));
  }
}

/// Per-node feature sampler for random forests: returns the candidate subset.
using FeatureSampler = std::function<std::vector<std::size_t>(const std::vector<std::size_t>& allowed)>;

class TreeGrower {
 public:
  TreeGrower(const DesignMatrix& X, std::span<const double> y, const FitConfig& config, FeatureSampler sampler = {},
             const Presort* presort = nullptr)
      : X_(X), y_(y), config_(config), sampler_(std::move(sampler)), presort_(presort) {
    if (config_.feature_whitelist) {
      for (const auto& name : *config_.feature_whitelist) {
        auto idx = X.index_of(name);
        if (!idx) fail(ErrorCode::SchemaMismatch, "whitelisted feature '" + name + "' not in design matrix");
        allowed_.push_back(*idx);
      }
      std::sort(allowed_.begin(), allowed_.end());
      allowed_.erase(std::unique(allowed_.begin(), allowed_.end()), allowed_.end());
    } else {
      allowed_.resize(X.cols());
      std::iota(allowed_.begin(), allowed_.end(), 0);
    }
    if (!presort_) {
      owned_ = std::make_unique<Presort>(X);
      presort_ = owned_.get();
    }
  }

  /// `rows` may repeat (bootstrap samples).
  RegressionTree grow(const std::vector<std::size_t>& rows) {
    NodeRows root;
    root.rows.assign(rows.begin(), rows.end());
    std::vector<std::uint32_t> multiplicity(X_.rows, 0);
    for (auto r : rows) ++multiplicity[r];
    root.sorted.resize(X_.cols());
    for (auto f : allowed_) {
      if (X_.kinds[f] != ColumnKind::Continuous) continue;
      auto& o = root.sorted[f];
      o.reserve(rows.size());
      for (auto r : presort_->order[f])
        for (std::uint32_t k = 0; k < multiplicity[r]; ++k) o.push_back(r);
    }
    double mean = 0;
    std::vector<std::size_t> all(rows.begin(), rows.end());
    root_sse_ = sse_of(y_, all, mean);
    nodes_.clear();
    mark_.assign(X_.rows, 0);
    build(root, 1);
    return RegressionTree(X_.names, X_.kinds, std::move(nodes_), config_);
  }

 private:
  struct NodeRows {
    std::vector<std::uint32_t> rows;
    std::vector<std::vector<std::uint32_t>> sorted;  // per feature, continuous + allowed only
  };

  static double node_stats(std::span<const double> y, const std::vector<std::uint32_t>& rows, double& mean) {
    double s = 0;
    for (auto r : rows) s += y[r];
    mean = rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
    double q = 0;
    for (auto r : rows) q += (y[r] - mean) * (y[r] - mean);
    return q;
  }

  int build(NodeRows& node_rows, std::size_t depth) {
    TreeNode node;
    node.n_samples = node_rows.rows.size();
    node.sse = node_stats(y_, node_rows.rows, node.model.intercept);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);

    const std::size_t n = node_rows.rows.size();
    if (depth >= config_.max_depth || n < 2 * config_.min_leaf || node.sse <= 0.0) return id;
    auto features = sampler_ ? sampler_(allowed_) : allowed_;
    std::sort(features.begin(), features.end());
    CandidateCollector candidates(node.sse);
    for (auto f : features) {
      if (X_.kinds[f] == ColumnKind::Continuous)
        scan_continuous(X_, y_, node_rows.sorted[f], f, node.model.intercept, config_.min_leaf, candidates);
      else
        scan_categorical(X_, y_, node_rows.rows, f, node.model.intercept, config_.min_leaf, candidates);
    }
    auto best = candidates.take();
    if (!best) return id;
    const double gain = node.sse - best->sse;
    if (!(gain > 0.0) || gain < config_.min_split_improvement * root_sse_) return id;

    NodeRows left, right;
    for (auto r : node_rows.rows) {
      const bool l = best->rule.goes_left(X_.at(r, best->feature));
      mark_[r] = l ? 1 : 2;
      (l ? left : right).rows.push_back(r);
    }
    if (left.rows.size() < config_.min_leaf || right.rows.size() < config_.min_leaf) return id;
    left.sorted.resize(X_.cols());
    right.sorted.resize(X_.cols());
    for (std::size_t f = 0; f < node_rows.sorted.size(); ++f) {
      auto& src = node_rows.sorted[f];
      if (src.empty()) continue;
      left.sorted[f].reserve(left.rows.size());
      right.sorted[f].reserve(right.rows.size());
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
  FeatureSampler sampler_;
  const Presort* presort_ = nullptr;
  std::unique_ptr<Presort> owned_;
  std::vector<std::size_t> allowed_;
  std::vector<TreeNode> nodes_;
  std::vector<char> mark_;
  double root_sse_ = 0;
};

inline void check_fit_inputs(const DesignMatrix& X, std::span<const double> y, const FitConfig& config) {
  if (X.rows == 0 || y.empty()) fail(ErrorCode::EmptyData, "no training rows");
  require(X.rows == y.size(), ErrorCode::InvalidArgument, "design matrix rows != response length");
  require(config.min_leaf >= 1, ErrorCode::InvalidArgument, "min_leaf must be >= 1");
  require(config.max_depth >= 1, ErrorCode::InvalidArgument, "max_depth must be >= 1");
  for (double v : y) require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite response value");
}

}  // namespace detail

/// Grows a CART regression tree with constant leaves.
inline RegressionTree fit_tree(const DesignMatrix& X, std::span<const double> y, const FitConfig& config = {}) {
  detail::check_fit_inputs(X, y, config);
  std::vector<std::size_t> rows(X.rows);
  std::iota(rows.begin(), rows.end(), 0);
  return detail::TreeGrower(X, y, config).grow(rows);
}

// ---------------------------------------------------------------------------
// Cost-complexity pruning

namespace detail {

/// Training SSE of the leaves below node i and their count.
inline std::pair<double, std::size_t> subtree_cost(const RegressionTree& t, std::size_t i) {
  const auto& n = t.nodes()[i];
  if (n.is_leaf()) return {n.sse, 1};
  auto [ls, lc] = subtree_cost(t, static_cast<std::size_t>(n.left));
  auto [rs, rc] = subtree_cost(t, static_cast<std::size_t>(n.right));
  return {ls + rs, lc + rc};
}

/// Smallest subtree minimizing SSE + alpha * leaves.
inline RegressionTree prune_to_alpha(const RegressionTree& t, double alpha) {
  std::vector<bool> collapse(t.nodes().size(), false);
  std::function<double(std::size_t)> walk = [&](std::size_t i) -> double {
    const auto& n = t.nodes()[i];
    const double as_leaf = n.sse + alpha;
    if (n.is_leaf()) return as_leaf;
    const double kept = walk(static_cast<std::size_t>(n.left)) + walk(static_cast<std::size_t>(n.right));
    if (as_leaf <= kept + 1e-12 * std::abs(kept)) {
      collapse[i] = true;
      return as_leaf;
    }
    return kept;
  };
  walk(0);
  return t.collapsed(collapse);
}

/// Weakest-link alpha sequence: alpha_0 = 0 < alpha_1 < ... ending at the root-only tree.
inline std::vector<double> pruning_alphas(const RegressionTree& full) {
  std::vector<double> alphas{0.0};
  RegressionTree current = prune_to_alpha(full, 0.0);
  while (current.nodes().size() > 1) {
    double weakest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < current.nodes().size(); ++i) {
      const auto& n = current.nodes()[i];
      if (n.is_leaf()) continue;
      auto [sub_sse, sub_leaves] = subtree_cost(current, i);
      weakest = std::min(weakest, (n.sse - sub_sse) / static_cast<double>(sub_leaves - 1));
    }
    weakest = std::max(weakest, std::nextafter(alphas.back(), std::numeric_limits<double>::infinity()));
    auto next = prune_to_alpha(current, weakest);
    while (next.nodes().size() == current.nodes().size()) {  // rounding kept the weakest link
      weakest *= 1.0 + 1e-9;
      next = prune_to_alpha(current, weakest);
    }
    alphas.push_back(weakest);
    current = std::move(next);
  }
  return alphas;
}

inline DesignMatrix take_rows(const DesignMatrix& X, std::span<const std::size_t> rows) {
  DesignMatrix out(X.names, X.kinds, rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(X.row(rows[i]).begin(), X.cols(), out.data.begin() + static_cast<std::ptrdiff_t>(i * X.cols()));
  return out;
}

}  // namespace detail

/// Cost-complexity pruning with alpha chosen by k-fold CV over contiguous time blocks.
inline RegressionTree prune_cv(const RegressionTree& model, const DesignMatrix& X, std::span<const double> y, std::size_t k) {
  detail::check_fit_inputs(X, y, model.config());
  require(k >= 2, ErrorCode::InvalidArgument, "need at least 2 folds");
  if (k > X.rows) fail(ErrorCode::InvalidArgument, std::to_string(k) + " folds exceed " + std::to_string(X.rows) + " rows");
  require(X.rows / k >= model.config().min_leaf, ErrorCode::InvalidArgument, "folds smaller than min_leaf");

  const auto alphas = detail::pruning_alphas(model);
  if (alphas.size() == 1) return model;
  // Representative alpha inside each interval [alpha_j, alpha_{j+1}).
  std::vector<double> probes;
  for (std::size_t j = 0; j < alphas.size(); ++j) {
    if (j + 1 < alphas.size())
      probes.push_back(alphas[j] == 0.0 ? 0.0 : std::sqrt(alphas[j] * alphas[j + 1]));
    else
      probes.push_back(alphas[j] * 2.0 + 1.0);
  }

  std::vector<double> cv_sse(probes.size(), 0.0);
  const auto cols = model.align(X);
  DesignMatrix Xa(model.features(), model.kinds(), X.rows);
  for (std::size_t r = 0; r < X.rows; ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) Xa.at(r, c) = X.at(r, cols[c]);

  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t begin = f * X.rows / k, end = (f + 1) * X.rows / k;
    std::vector<std::size_t> train, test;
    for (std::size_t r = 0; r < X.rows; ++r) (r >= begin && r < end ? test : train).push_back(r);
    const auto Xt = detail::take_rows(Xa, train);
    std::vector<double> yt;
    for (auto r : train) yt.push_back(y[r]);
    const auto fold_tree = fit_tree(Xt, yt, model.config());
    for (std::size_t j = 0; j < probes.size(); ++j) {
      const auto pruned = detail::prune_to_alpha(fold_tree, probes[j]);
      for (auto r : test) {
        const double e = y[r] - pruned.predict(Xa.row(r));
        cv_sse[j] += e * e;
      }
    }
  }
  // Ties go to the larger alpha (simpler tree).
  std::size_t best = 0;
  for (std::size_t j = 1; j < probes.size(); ++j)
    if (cv_sse[j] <= cv_sse[best] * (1.0 + 1e-12)) best = j;
  return detail::prune_to_alpha(model, alphas[best]);
}

}  // namespace dra
