#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbwk/error.hpp"
#include "cbwk/problem.hpp"
#include "cbwk/table.hpp"

namespace cbwk {

/// The static-policy program
///   max  T sum_x nu(x) sum_a g(a,x) pi_a(x)
///   s.t. T sum_x nu(x) sum_a k(a,x) pi_a(x) <= B_T 1,   sum_a pi_a(x) <= 1,   pi >= 0.
/// The simplex rows are relaxed to <= 1; leftover mass goes to the null action.
struct LPProblem {
  std::vector<double> nu;
  ActionContextTable<double> gain;
  ActionContextTable<Vector> cost_rate;
  double budget = 0.0;
  double horizon = 0.0;
  ActionId null_action{0};
  bool degenerate = false;

  std::size_t num_actions() const { return gain.num_actions(); }
  std::size_t num_contexts() const { return gain.num_contexts(); }
  std::size_t cost_dim() const {
    return cost_rate.size() == 0 ? 0 : static_cast<std::size_t>(cost_rate.at_flat(0).size());
  }
  std::size_t num_variables() const { return gain.size(); }
  std::size_t num_rows() const { return cost_dim() + num_contexts(); }
};

enum class LPStatus { Optimal, DegenerateFallback };

inline const char* to_string(LPStatus s) {
  return s == LPStatus::Optimal ? "optimal" : "degenerate-fallback";
}

struct LPSolution {
  ActionContextTable<double> pi;
  double value = 0.0;
  Vector beta_budg;
  std::vector<double> beta_psum;
  ActionContextTable<double> beta_ppos;
  LPStatus status = LPStatus::Optimal;
  std::size_t pivots = 0;
};

inline LPProblem build_lp(std::vector<double> nu, ActionContextTable<double> gain,
                          ActionContextTable<Vector> cost_rate, double budget, double horizon,
                          ActionId null_action) {
  if (gain.num_actions() != cost_rate.num_actions() || gain.num_contexts() != cost_rate.num_contexts() ||
      nu.size() != gain.num_contexts()) {
    throw Error(ErrorKind::ShapeMismatch, "LP tables and context weights disagree in shape");
  }
  if (null_action.value >= gain.num_actions()) {
    throw Error(ErrorKind::RangeViolation, "null action index out of range");
  }
  for (double g : gain) {
    if (!std::isfinite(g)) throw Error(ErrorKind::RangeViolation, "LP gain is not finite");
  }
  for (const auto& k : cost_rate) {
    if (!k.allFinite()) throw Error(ErrorKind::RangeViolation, "LP cost rate is not finite");
  }
  LPProblem lp{std::move(nu), std::move(gain), std::move(cost_rate), budget, horizon, null_action, false};
  lp.degenerate = !(budget > 0.0);
  return lp;
}

namespace detail {

inline LPSolution all_null_solution(const LPProblem& lp, LPStatus status) {
  const std::size_t na = lp.num_actions();
  const std::size_t nx = lp.num_contexts();
  LPSolution sol;
  sol.pi = ActionContextTable<double>(na, nx, 0.0);
  for (std::size_t x = 0; x < nx; ++x) sol.pi(lp.null_action, ContextId{x}) = 1.0;
  sol.beta_budg = Vector::Zero(static_cast<Eigen::Index>(lp.cost_dim()));
  sol.beta_psum.assign(nx, 0.0);
  sol.beta_ppos = ActionContextTable<double>(na, nx, 0.0);
  sol.status = status;
  return sol;
}

inline double objective_coefficient(const LPProblem& lp, ActionId a, ContextId x) {
  return lp.horizon * lp.nu[x.value] * lp.gain(a, x);
}

inline double budget_coefficient(const LPProblem& lp, std::size_t i, ActionId a, ContextId x) {
  return lp.horizon * lp.nu[x.value] * lp.cost_rate(a, x)(static_cast<Eigen::Index>(i));
}

}  // namespace detail

/// Dense primal simplex from the slack basis with Bland's rule.
inline LPSolution solve_lp(const LPProblem& lp) {
  if (lp.degenerate) return detail::all_null_solution(lp, LPStatus::DegenerateFallback);

  constexpr double kPivotTol = 1e-12;
  const std::size_t na = lp.num_actions();
  const std::size_t nx = lp.num_contexts();
  const std::size_t d = lp.cost_dim();
  const std::size_t nvar = na * nx;
  const std::size_t nrow = d + nx;
  const std::size_t ncol = nvar + nrow;  // structural then slack
  const auto rhs_col = static_cast<Eigen::Index>(ncol);

  // Row r < nrow holds the constraint; row nrow holds z_j - c_j.
  using Tableau = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Tableau tab = Tableau::Zero(static_cast<Eigen::Index>(nrow + 1), static_cast<Eigen::Index>(ncol + 1));
  std::vector<std::size_t> basis(nrow);
  double cmax = 0.0;
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t x = 0; x < nx; ++x) {
      const ActionId aid{a};
      const ContextId xid{x};
      const auto j = static_cast<Eigen::Index>(lp.gain.flat_index(aid, xid));
      if (aid == lp.null_action) {
        tab(static_cast<Eigen::Index>(d + x), j) = 1.0;
        continue;
      }
      for (std::size_t i = 0; i < d; ++i) {
        tab(static_cast<Eigen::Index>(i), j) = detail::budget_coefficient(lp, i, aid, xid);
      }
      tab(static_cast<Eigen::Index>(d + x), j) = 1.0;
      const double c = detail::objective_coefficient(lp, aid, xid);
      tab(static_cast<Eigen::Index>(nrow), j) = -c;
      cmax = std::max(cmax, std::abs(c));
    }
  }
  for (std::size_t r = 0; r < nrow; ++r) {
    tab(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(nvar + r)) = 1.0;
    tab(static_cast<Eigen::Index>(r), rhs_col) = r < d ? lp.budget : 1.0;
    basis[r] = nvar + r;
  }

  const double opt_tol = 1e-11 * std::max(1.0, cmax);
  const auto obj = static_cast<Eigen::Index>(nrow);
  const std::size_t max_pivots = 50 * (ncol + nrow) + 1000;
  std::size_t pivots = 0;
  for (;;) {
    std::size_t enter = ncol;
    for (std::size_t j = 0; j < ncol; ++j) {
      if (tab(obj, static_cast<Eigen::Index>(j)) < -opt_tol) {
        enter = j;
        break;
      }
    }
    if (enter == ncol) break;
    if (++pivots > max_pivots) {
      throw Error(ErrorKind::NumericalInstability, "simplex pivot limit reached");
    }
    const auto e = static_cast<Eigen::Index>(enter);

    std::size_t leave = nrow;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < nrow; ++r) {
      const double coef = tab(static_cast<Eigen::Index>(r), e);
      if (coef <= kPivotTol) continue;
      const double ratio = std::max(tab(static_cast<Eigen::Index>(r), rhs_col), 0.0) / coef;
      const double tie = 1e-12 * std::max(1.0, best_ratio);
      if (leave == nrow || ratio < best_ratio - tie) {
        best_ratio = ratio;
        leave = r;
      } else if (ratio <= best_ratio + tie && basis[r] < basis[leave]) {
        leave = r;
      }
    }
    if (leave == nrow) {
      throw Error(ErrorKind::NumericalInstability, "no admissible pivot row (pivot below 1e-12)");
    }
    const auto l = static_cast<Eigen::Index>(leave);
    tab.row(l) /= tab(l, e);
    for (Eigen::Index r = 0; r <= obj; ++r) {
      if (r == l) continue;
      const double f = tab(r, e);
      if (f != 0.0) tab.row(r) -= f * tab.row(l);
    }
    basis[leave] = enter;
  }

  LPSolution sol;
  sol.pivots = pivots;
  sol.status = LPStatus::Optimal;
  sol.pi = ActionContextTable<double>(na, nx, 0.0);
  for (std::size_t r = 0; r < nrow; ++r) {
    if (basis[r] < nvar) sol.pi.at_flat(basis[r]) = tab(static_cast<Eigen::Index>(r), rhs_col);
  }
  // Clean rounding noise and hand leftover mass to the null action.
  for (std::size_t x = 0; x < nx; ++x) {
    double mass = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      double& p = sol.pi(ActionId{a}, ContextId{x});
      if (ActionId{a} == lp.null_action) {
        p = 0.0;
        continue;
      }
      p = std::clamp(p, 0.0, 1.0);
      if (p < 1e-13) p = 0.0;
      mass += p;
    }
    if (mass > 1.0) {
      for (std::size_t a = 0; a < na; ++a) sol.pi(ActionId{a}, ContextId{x}) /= mass;
      mass = 1.0;
    }
    sol.pi(lp.null_action, ContextId{x}) = 1.0 - mass;
  }

  sol.beta_budg = Vector(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    sol.beta_budg(static_cast<Eigen::Index>(i)) = std::max(0.0, tab(obj, static_cast<Eigen::Index>(nvar + i)));
  }
  sol.beta_psum.resize(nx);
  for (std::size_t x = 0; x < nx; ++x) {
    sol.beta_psum[x] = std::max(0.0, tab(obj, static_cast<Eigen::Index>(nvar + d + x)));
  }
  sol.beta_ppos = ActionContextTable<double>(na, nx, 0.0);
  for (std::size_t j = 0; j < nvar; ++j) {
    sol.beta_ppos.at_flat(j) = std::max(0.0, tab(obj, static_cast<Eigen::Index>(j)));
  }

  double value = 0.0;
  lp.gain.for_each([&](ActionId a, ContextId x, double) {
    if (a != lp.null_action) value += detail::objective_coefficient(lp, a, x) * sol.pi(a, x);
  });
  sol.value = value;
  return sol;
}

/// T E_nu[sum_a k(a,X) pi_a(X)] for a given policy.
inline Vector expected_total_cost(const LPProblem& lp, const ActionContextTable<double>& pi) {
  Vector total = Vector::Zero(static_cast<Eigen::Index>(lp.cost_dim()));
  lp.cost_rate.for_each([&](ActionId a, ContextId x, const Vector& k) {
    if (a != lp.null_action) total += lp.horizon * lp.nu[x.value] * pi(a, x) * k;
  });
  return total;
}

inline double policy_value(const LPProblem& lp, const ActionContextTable<double>& pi) {
  double value = 0.0;
  lp.gain.for_each([&](ActionId a, ContextId x, double g) {
    if (a != lp.null_action) value += lp.horizon * lp.nu[x.value] * g * pi(a, x);
  });
  return value;
}

struct KKTReport {
  double primal_feasibility = 0.0;
  double dual_feasibility = 0.0;
  double ppos_slackness = 0.0;
  double budget_slackness = 0.0;
  double stationarity = 0.0;
  double weak_duality = 0.0;
  double duality_gap = 0.0;
  bool pass = false;

  double max_residual() const {
    return std::max({primal_feasibility, dual_feasibility, ppos_slackness, budget_slackness,
                     stationarity, weak_duality, duality_gap});
  }
};

/// Residuals of the optimality conditions of (lp, sol); report only.
inline KKTReport check_kkt(const LPProblem& lp, const LPSolution& sol, double tol) {
  KKTReport rep;
  const std::size_t d = lp.cost_dim();
  const Vector spent = expected_total_cost(lp, sol.pi);

  for (std::size_t x = 0; x < lp.num_contexts(); ++x) {
    double mass = 0.0;
    for (std::size_t a = 0; a < lp.num_actions(); ++a) {
      const double p = sol.pi(ActionId{a}, ContextId{x});
      rep.primal_feasibility = std::max(rep.primal_feasibility, -p);
      mass += p;
    }
    rep.primal_feasibility = std::max(rep.primal_feasibility, std::abs(mass - 1.0));
    rep.dual_feasibility = std::max(rep.dual_feasibility, -sol.beta_psum[x]);
  }
  for (std::size_t i = 0; i < d; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    rep.primal_feasibility = std::max(rep.primal_feasibility, spent(ii) - lp.budget);
    rep.dual_feasibility = std::max(rep.dual_feasibility, -sol.beta_budg(ii));
    rep.budget_slackness = std::max(rep.budget_slackness, std::abs(sol.beta_budg(ii) * (spent(ii) - lp.budget)));
  }

  lp.gain.for_each([&](ActionId a, ContextId x, double g) {
    const double beta_pos = sol.beta_ppos(a, x);
    rep.dual_feasibility = std::max(rep.dual_feasibility, -beta_pos);
    rep.ppos_slackness = std::max(rep.ppos_slackness, std::abs(beta_pos * sol.pi(a, x)));
    const double scale = lp.horizon * lp.nu[x.value];
    double rhs = sol.beta_psum[x.value] - beta_pos;
    if (a != lp.null_action) rhs += scale * sol.beta_budg.dot(lp.cost_rate(a, x));
    const double lhs = a == lp.null_action ? 0.0 : scale * g;
    rep.stationarity = std::max(rep.stationarity, std::abs(lhs - rhs));
  });

  const double dual_budget = lp.budget * sol.beta_budg.sum();
  double psum = 0.0;
  for (double b : sol.beta_psum) psum += b;
  rep.weak_duality = std::max(0.0, dual_budget - sol.value);
  rep.duality_gap = std::abs(sol.value - (dual_budget + psum));
  rep.pass = rep.max_residual() <= tol;
  return rep;
}

namespace detail {

struct GridSearch {
  const LPProblem& lp;
  std::vector<std::pair<ActionId, ContextId>> vars;
  std::vector<double> levels;
  std::vector<double> mass;  // per context
  Vector spent;
  double best = -std::numeric_limits<double>::infinity();

  void recurse(std::size_t idx, double value) {
    const auto [a, x] = vars[idx];
    const double g = objective_coefficient(lp, a, x);
    const bool last = idx + 1 == vars.size();
    if (last) {
      // Best grid level of the final coordinate in closed form.
      double level = 0.0;
      if (g > 0.0) {
        for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
          if (feasible(a, x, *it)) {
            level = *it;
            break;
          }
        }
      }
      best = std::max(best, value + g * level);
      return;
    }
    for (double level : levels) {
      if (!feasible(a, x, level)) break;
      apply(a, x, level);
      recurse(idx + 1, value + g * level);
      apply(a, x, -level);
    }
  }

  bool feasible(ActionId a, ContextId x, double level) const {
    if (mass[x.value] + level > 1.0 + 1e-12) return false;
    for (Eigen::Index i = 0; i < spent.size(); ++i) {
      const double add = budget_coefficient(lp, static_cast<std::size_t>(i), a, x) * level;
      if (spent(i) + add > lp.budget + 1e-12) return false;
    }
    return true;
  }

  void apply(ActionId a, ContextId x, double level) {
    mass[x.value] += level;
    for (Eigen::Index i = 0; i < spent.size(); ++i) {
      spent(i) += budget_coefficient(lp, static_cast<std::size_t>(i), a, x) * level;
    }
  }
};

}  // namespace detail

/// Exhaustive grid search over the non-null policy weights. Independent of the
/// simplex code; meant as a test oracle on tiny instances.
inline double opt_oracle(const LPProblem& lp, double grid_step) {
  constexpr std::size_t kMaxVars = 4;
  const std::size_t free_vars = lp.num_contexts() * (lp.num_actions() - 1);
  if (free_vars > kMaxVars) {
    throw Error(ErrorKind::TooLarge, std::to_string(free_vars) + " free variables exceed the oracle cap of 4");
  }
  if (!(grid_step > 0.0)) throw Error(ErrorKind::InvalidArgument, "grid step must be positive");
  if (lp.degenerate || free_vars == 0) return 0.0;

  detail::GridSearch search{lp, {}, {}, std::vector<double>(lp.num_contexts(), 0.0),
                            Vector::Zero(static_cast<Eigen::Index>(lp.cost_dim()))};
  for (std::size_t x = 0; x < lp.num_contexts(); ++x) {
    for (std::size_t a = 0; a < lp.num_actions(); ++a) {
      if (ActionId{a} != lp.null_action) search.vars.emplace_back(ActionId{a}, ContextId{x});
    }
  }
  const auto steps = static_cast<std::size_t>(std::floor(1.0 / grid_step + 1e-9));
  for (std::size_t i = 0; i <= steps; ++i) search.levels.push_back(static_cast<double>(i) * grid_step);
  search.recurse(0, 0.0);
  return search.best;
}

// Documents for the lp-solve command.

inline LPProblem lp_from_json(const nlohmann::json& doc) {
  using detail::require;
  const auto nu = require(doc, "nu").get<std::vector<double>>();
  const auto& gain_doc = require(doc, "gain");
  const auto& cost_doc = require(doc, "cost_rate");
  const auto null_action = ActionId{doc.value("null_action", std::size_t{0})};
  if (!gain_doc.is_array() || gain_doc.empty()) throw Error(ErrorKind::ShapeMismatch, "gain must be [action][context]");
  const std::size_t na = gain_doc.size();
  const std::size_t nx = nu.size();
  ActionContextTable<double> gain(na, nx, 0.0);
  for (std::size_t a = 0; a < na; ++a) {
    if (!gain_doc[a].is_array() || gain_doc[a].size() != nx) {
      throw Error(ErrorKind::ShapeMismatch, "gain row must have one entry per context");
    }
    for (std::size_t x = 0; x < nx; ++x) gain(ActionId{a}, ContextId{x}) = gain_doc[a][x].get<double>();
  }
  auto cost = detail::read_vector_table(cost_doc, na, nx, null_action, std::nullopt, "cost_rate");
  return build_lp(nu, std::move(gain), std::move(cost), require(doc, "budget").get<double>(),
                  require(doc, "horizon").get<double>(), null_action);
}

inline nlohmann::json to_json(const LPProblem& lp) {
  nlohmann::json doc;
  doc["nu"] = lp.nu;
  nlohmann::json gain = nlohmann::json::array();
  for (std::size_t a = 0; a < lp.num_actions(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t x = 0; x < lp.num_contexts(); ++x) row.push_back(lp.gain(ActionId{a}, ContextId{x}));
    gain.push_back(std::move(row));
  }
  doc["gain"] = std::move(gain);
  doc["cost_rate"] = detail::write_vector_table(lp.cost_rate);
  doc["budget"] = lp.budget;
  doc["horizon"] = lp.horizon;
  doc["null_action"] = lp.null_action.value;
  return doc;
}

inline nlohmann::json to_json(const LPSolution& sol) {
  nlohmann::json doc;
  nlohmann::json pi = nlohmann::json::array();
  nlohmann::json ppos = nlohmann::json::array();
  for (std::size_t a = 0; a < sol.pi.num_actions(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    nlohmann::json prow = nlohmann::json::array();
    for (std::size_t x = 0; x < sol.pi.num_contexts(); ++x) {
      row.push_back(sol.pi(ActionId{a}, ContextId{x}));
      prow.push_back(sol.beta_ppos(ActionId{a}, ContextId{x}));
    }
    pi.push_back(std::move(row));
    ppos.push_back(std::move(prow));
  }
  doc["status"] = to_string(sol.status);
  doc["value"] = sol.value;
  doc["pi"] = std::move(pi);
  doc["beta_budg"] = detail::from_vector(sol.beta_budg);
  doc["beta_psum"] = sol.beta_psum;
  doc["beta_ppos"] = std::move(ppos);
  doc["pivots"] = sol.pivots;
  return doc;
}

inline nlohmann::json to_json(const KKTReport& rep) {
  return {{"primal_feasibility", rep.primal_feasibility},
          {"dual_feasibility", rep.dual_feasibility},
          {"ppos_slackness", rep.ppos_slackness},
          {"budget_slackness", rep.budget_slackness},
          {"stationarity", rep.stationarity},
          {"weak_duality", rep.weak_duality},
          {"duality_gap", rep.duality_gap},
          {"pass", rep.pass}};
}

}  // namespace cbwk
