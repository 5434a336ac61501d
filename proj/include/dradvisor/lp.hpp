#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "dradvisor/data.hpp"
#include "dradvisor/error.hpp"

namespace dra {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// min c'v + c0  s.t.  A v <= b,  lo <= v <= hi.
struct LinearProgram {
  struct Row {
    std::vector<double> coefficients;
    double rhs = 0.0;
    std::string label;
  };

  std::vector<std::string> names;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> objective;
  double constant = 0.0;
  std::vector<Row> rows;

  std::size_t size() const { return names.size(); }

  std::size_t add_variable(std::string name, double lo, double hi, double cost = 0.0) {
    require(lo <= hi, ErrorCode::InvalidArgument, "variable '" + name + "' has lo > hi");
    names.push_back(std::move(name));
    lower.push_back(lo);
    upper.push_back(hi);
    objective.push_back(cost);
    for (auto& r : rows) r.coefficients.push_back(0.0);
    return names.size() - 1;
  }

  void add_row(std::vector<double> coefficients, double rhs, std::string label = {}) {
    require(coefficients.size() == size(), ErrorCode::InvalidArgument, "row references undeclared variables");
    rows.push_back({std::move(coefficients), rhs, std::move(label)});
  }

  double evaluate(std::span<const double> v) const {
    double z = constant;
    for (std::size_t j = 0; j < size(); ++j) z += objective[j] * v[j];
    return z;
  }

  double row_activity(std::size_t i, std::span<const double> v) const {
    double a = 0;
    for (std::size_t j = 0; j < size(); ++j) a += rows[i].coefficients[j] * v[j];
    return a;
  }

  /// Bounds and rows hold to tol * (1 + |b|).
  bool feasible(std::span<const double> v, double tol = 1e-9) const {
    for (std::size_t j = 0; j < size(); ++j)
      if (v[j] < lower[j] - tol * (1 + std::abs(lower[j])) || v[j] > upper[j] + tol * (1 + std::abs(upper[j]))) return false;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (row_activity(i, v) > rows[i].rhs + tol * (1 + std::abs(rows[i].rhs))) return false;
    return true;
  }

  /// Plain-text dump for solver triage.
  std::string dump() const {
    std::ostringstream out;
    auto term = [&](double c, const std::string& n) { out << (c < 0 ? " - " : " + ") << format_number(std::abs(c)) << ' ' << n; };
    out << "minimize " << format_number(constant);
    for (std::size_t j = 0; j < size(); ++j)
      if (objective[j] != 0.0) term(objective[j], names[j]);
    out << "\nbounds\n";
    for (std::size_t j = 0; j < size(); ++j) out << "  " << names[j] << " in [" << format_number(lower[j]) << ", " << format_number(upper[j]) << "]\n";
    out << "rows\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out << "  " << (rows[i].label.empty() ? "r" + std::to_string(i) : rows[i].label) << ":";
      for (std::size_t j = 0; j < size(); ++j)
        if (rows[i].coefficients[j] != 0.0) term(rows[i].coefficients[j], names[j]);
      out << " <= " << format_number(rows[i].rhs) << '\n';
    }
    return out.str();
  }
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

inline std::string_view to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
  }
  return "optimal";
}

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  std::vector<double> values;
  double objective = kInf;
  std::vector<std::size_t> violated_rows;  // infeasibility certificate: rows phase 1 could not satisfy
  std::size_t iterations = 0;
};

struct SimplexTolerances {
  double pivot = 1e-10;
  double feasibility = 1e-9;
  double optimality = 1e-10;
};

namespace detail {

/// Dense bounded-variable primal simplex (Bland's rule) over the tableau B^{-1}[A | I | -E].
class BoundedSimplex {
 public:
  enum class State { Basic, AtLower, AtUpper, Free };

  BoundedSimplex(const LinearProgram& lp, SimplexTolerances tol) : lp_(lp), tol_(tol) {
    n_ = lp.size();
    m_ = lp.rows.size();
    for (std::size_t j = 0; j < n_; ++j)
      require(!(std::isnan(lp.lower[j]) || std::isnan(lp.upper[j])) && lp.lower[j] <= lp.upper[j], ErrorCode::InvalidArgument,
              "bad bounds on '" + lp.names[j] + "'");
    // Columns: structurals [0,n), slacks [n, n+m), artificials [n+m, n+2m).
    cols_ = n_ + 2 * m_;
    lo_.assign(cols_, 0.0);
    hi_.assign(cols_, kInf);
    value_.assign(cols_, 0.0);
    state_.assign(cols_, State::AtLower);
    for (std::size_t j = 0; j < n_; ++j) {
      lo_[j] = lp.lower[j];
      hi_[j] = lp.upper[j];
      if (std::isfinite(lo_[j])) {
        state_[j] = State::AtLower;
        value_[j] = lo_[j];
      } else if (std::isfinite(hi_[j])) {
        state_[j] = State::AtUpper;
        value_[j] = hi_[j];
      } else {
        state_[j] = State::Free;
        value_[j] = 0.0;
      }
    }
    for (std::size_t i = 0; i < m_; ++i) hi_[n_ + m_ + i] = 0.0;  // artificials fixed unless needed

    tableau_.assign(m_ * cols_, 0.0);
    basis_.assign(m_, 0);
    for (std::size_t i = 0; i < m_; ++i) {
      double residual = lp.rows[i].rhs;
      for (std::size_t j = 0; j < n_; ++j) residual -= lp.rows[i].coefficients[j] * value_[j];
      const bool needs_artificial = residual < -tol_.feasibility * (1 + std::abs(lp.rows[i].rhs));
      const double sign = needs_artificial ? -1.0 : 1.0;
      for (std::size_t j = 0; j < n_; ++j) at(i, j) = sign * lp.rows[i].coefficients[j];
      at(i, n_ + i) = sign;
      at(i, n_ + m_ + i) = needs_artificial ? 1.0 : 0.0;  // -1 column times sign -1
      if (needs_artificial) {
        hi_[n_ + m_ + i] = kInf;
        basis_[i] = n_ + m_ + i;
        state_[n_ + m_ + i] = State::Basic;
        value_[n_ + m_ + i] = -residual;
        has_artificial_ = true;
      } else {
        basis_[i] = n_ + i;
        state_[n_ + i] = State::Basic;
        value_[n_ + i] = std::max(0.0, residual);
      }
    }
  }

  LpSolution solve() {
    LpSolution sol;
    if (has_artificial_) {
      std::vector<double> phase1(cols_, 0.0);
      for (std::size_t i = 0; i < m_; ++i) phase1[n_ + m_ + i] = 1.0;
      run(phase1, sol.iterations);
      double infeasibility = 0, scale = 1;
      for (const auto& r : lp_.rows) scale = std::max(scale, std::abs(r.rhs));
      for (std::size_t i = 0; i < m_; ++i) infeasibility += value_[n_ + m_ + i];
      if (infeasibility > tol_.feasibility * scale * static_cast<double>(std::max<std::size_t>(1, m_))) {
        sol.status = LpStatus::Infeasible;
        for (std::size_t i = 0; i < m_; ++i)
          if (value_[n_ + m_ + i] > tol_.feasibility * (1 + std::abs(lp_.rows[i].rhs))) sol.violated_rows.push_back(i);
        return sol;
      }
      for (std::size_t i = 0; i < m_; ++i) {
        hi_[n_ + m_ + i] = 0.0;
        if (state_[n_ + m_ + i] != State::Basic) {
          state_[n_ + m_ + i] = State::AtLower;
          value_[n_ + m_ + i] = 0.0;
        }
      }
    }
    std::vector<double> phase2(cols_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) phase2[j] = lp_.objective[j];
    if (!run(phase2, sol.iterations)) {
      sol.status = LpStatus::Unbounded;
      return sol;
    }
    sol.status = LpStatus::Optimal;
    sol.values.resize(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      double v = value_[j];
      if (state_[j] == State::Basic) v = std::clamp(v, lo_[j], hi_[j]);
      sol.values[j] = v;
    }
    sol.objective = lp_.evaluate(sol.values);
    return sol;
  }

 private:
  double& at(std::size_t i, std::size_t j) { return tableau_[i * cols_ + j]; }
  double at(std::size_t i, std::size_t j) const { return tableau_[i * cols_ + j]; }

  /// Returns false when the objective is unbounded below.
  bool run(const std::vector<double>& cost, std::size_t& iterations) {
    const std::size_t cap = 200 * (cols_ + m_) + 1000;
    std::vector<double> reduced(cols_);
    for (std::size_t it = 0; it < cap; ++it) {
      // Reduced costs d_j = c_j - c_B' T_j.
      for (std::size_t j = 0; j < cols_; ++j) reduced[j] = cost[j];
      for (std::size_t i = 0; i < m_; ++i) {
        const double cb = cost[basis_[i]];
        if (cb == 0.0) continue;
        for (std::size_t j = 0; j < cols_; ++j) reduced[j] -= cb * at(i, j);
      }
      // Bland: first eligible entering column.
      std::size_t enter = cols_;
      double dir = 0;
      for (std::size_t j = 0; j < cols_; ++j) {
        const auto s = state_[j];
        if (s == State::Basic || lo_[j] == hi_[j]) continue;
        if ((s == State::AtLower || s == State::Free) && reduced[j] < -tol_.optimality) {
          enter = j;
          dir = 1;
          break;
        }
        if ((s == State::AtUpper || s == State::Free) && reduced[j] > tol_.optimality) {
          enter = j;
          dir = -1;
          break;
        }
      }
      if (enter == cols_) return true;
      ++iterations;

      // Ratio test; the bound flip of the entering variable competes with the rows.
      double step = hi_[enter] - lo_[enter];  // inf for one-sided
      std::size_t leave_row = m_;
      for (std::size_t i = 0; i < m_; ++i) {
        const double rate = at(i, enter) * dir;  // x_B(i) decreases by rate * step
        const std::size_t b = basis_[i];
        double limit = kInf;
        if (rate > tol_.pivot && std::isfinite(lo_[b]))
          limit = std::max(0.0, (value_[b] - lo_[b]) / rate);
        else if (rate < -tol_.pivot && std::isfinite(hi_[b]))
          limit = std::max(0.0, (hi_[b] - value_[b]) / -rate);
        else
          continue;
        // Ties with the bound flip keep the flip; ties between rows go to the lowest basic index.
        if (limit < step) {
          step = limit;
          leave_row = i;
        } else if (limit == step && leave_row < m_ && b < basis_[leave_row]) {
          leave_row = i;
        }
      }
      if (!std::isfinite(step)) return false;

      for (std::size_t i = 0; i < m_; ++i) value_[basis_[i]] -= at(i, enter) * dir * step;
      if (leave_row == m_) {
        // Bound flip.
        if (dir > 0) {
          state_[enter] = State::AtUpper;
          value_[enter] = hi_[enter];
        } else {
          state_[enter] = State::AtLower;
          value_[enter] = lo_[enter];
        }
        continue;
      }
      const std::size_t leaving = basis_[leave_row];
      const double rate = at(leave_row, enter) * dir;
      value_[enter] += dir * step;
      if (rate > 0) {
        state_[leaving] = State::AtLower;
        value_[leaving] = lo_[leaving];
      } else {
        state_[leaving] = State::AtUpper;
        value_[leaving] = hi_[leaving];
      }
      state_[enter] = State::Basic;
      basis_[leave_row] = enter;
      pivot(leave_row, enter);
    }
    fail(ErrorCode::InvalidArgument, "simplex iteration limit reached");
  }

  void pivot(std::size_t r, std::size_t c) {
    const double p = at(r, c);
    for (std::size_t j = 0; j < cols_; ++j) at(r, j) /= p;
    at(r, c) = 1.0;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == r) continue;
      const double f = at(i, c);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < cols_; ++j) at(i, j) -= f * at(r, j);
      at(i, c) = 0.0;
    }
  }

  const LinearProgram& lp_;
  SimplexTolerances tol_;
  std::size_t n_ = 0, m_ = 0, cols_ = 0;
  std::vector<double> lo_, hi_, value_;
  std::vector<State> state_;
  std::vector<double> tableau_;
  std::vector<std::size_t> basis_;
  bool has_artificial_ = false;
};

}  // namespace detail

inline LpSolution solve_lp(const LinearProgram& lp, SimplexTolerances tol = {}) {
  for (const auto& r : lp.rows) require(r.coefficients.size() == lp.size(), ErrorCode::InvalidArgument, "malformed LP row");
  require(lp.lower.size() == lp.size() && lp.upper.size() == lp.size() && lp.objective.size() == lp.size(), ErrorCode::InvalidArgument,
          "malformed LP bounds");
  return detail::BoundedSimplex(lp, tol).solve();
}

}  // namespace dra
