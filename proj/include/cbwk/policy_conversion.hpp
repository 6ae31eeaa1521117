#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

#include "cbwk/environment.hpp"
#include "cbwk/logistic.hpp"
#include "cbwk/lp.hpp"
#include "cbwk/policy.hpp"
#include "cbwk/problem.hpp"

namespace cbwk {

/// Working budget of the known-nu analysis, B - 2 - sqrt(2T ln(4d/delta)).
inline double budget_BT(double B, double T, std::size_t d, double delta) {
  return B - 2.0 - std::sqrt(2.0 * T * std::log(4.0 * static_cast<double>(d) / delta));
}

/// Working budget of the unknown-nu analysis, B - b_T.
inline double budget_bT(double B, double T, std::size_t d, double delta, std::size_t n_contexts) {
  const double nx = static_cast<double>(n_contexts);
  const double b = 2.0 + std::sqrt(2.0 * T * std::log(4.0 * static_cast<double>(d) / delta)) +
                   nx * std::sqrt(2.0 * T * std::log(2.0 * T * nx / delta));
  return B - b;
}

/// The static program on the true model: gains r P, cost rates c P, budget B.
inline LPProblem true_lp(const ProblemSpec& spec, const Vector& theta, std::optional<double> budget = {}) {
  if (!spec.context_weights) throw Error(ErrorKind::MissingDistribution, "OPT needs context_weights");
  ActionContextTable<double> gain(spec.num_actions(), spec.num_contexts(), 0.0);
  ActionContextTable<Vector> cost(spec.num_actions(), spec.num_contexts(),
                                  Vector::Zero(static_cast<Eigen::Index>(spec.cost_dim())));
  spec.transfer.for_each([&](ActionId a, ContextId x, const Vector& phi) {
    if (spec.is_null(a)) return;
    const double p = sigmoid(phi.dot(theta));
    gain(a, x) = spec.reward(a, x) * p;
    cost(a, x) = spec.cost(a, x) * p;
  });
  return build_lp(*spec.context_weights, std::move(gain), std::move(cost), budget.value_or(spec.budget),
                  static_cast<double>(spec.horizon), spec.null_action);
}

inline double opt_value(const ProblemSpec& spec, const Vector& theta) {
  return solve_lp(true_lp(spec, theta)).value;
}

/// Box B: logistic UCB estimates plugged into the static program.
class ConversionPolicy final : public PolicyBase {
 public:
  ConversionPolicy(const ProblemSpec& spec, PolicyConfig cfg, std::uint64_t seed,
                   std::optional<Vector> true_theta = std::nullopt)
      : PolicyBase(spec, prepare(std::move(cfg)), seed), true_theta_(std::move(true_theta)) {
    const double T = static_cast<double>(spec.horizon);
    const std::size_t m = spec.feature_dim();
    const double lambda = cfg_.lambda.value_or(default_lambda(m, spec.horizon));
    const double kappa = cfg_.bonus == BonusSchedule::Theory ? compute_kappa(spec, spec.theta_bound) : 1.0;
    est_ = make_logistic_state(spec, lambda, cfg_.delta, kappa);

    if (cfg_.oracle) {
      if (!true_theta_) throw Error(ErrorKind::InvalidArgument, "oracle mode needs the true parameter");
      est_.theta_hat = *true_theta_;
      working_budget_ = spec.budget;
    } else if (cfg_.working_budget == WorkingBudgetMode::Full) {
      working_budget_ = spec.budget;
    } else if (cfg_.nu_mode == NuMode::Known) {
      working_budget_ = budget_BT(spec.budget, T, spec.cost_dim(), cfg_.delta);
    } else {
      working_budget_ = budget_bT(spec.budget, T, spec.cost_dim(), cfg_.delta, spec.num_contexts());
    }

    // Non-null (a, x) features stacked as columns, in flat-index order.
    for (std::size_t i = 0; i < spec.transfer.size(); ++i) {
      if (i / spec.num_contexts() != spec.null_action.value) grid_keys_.push_back(i);
    }
    grid_ = Matrix(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(grid_keys_.size()));
    for (std::size_t k = 0; k < grid_keys_.size(); ++k) {
      grid_.col(static_cast<Eigen::Index>(k)) = spec.transfer.at_flat(grid_keys_[k]);
    }
  }

  const LogisticState& estimator() const { return est_; }

  /// Multiplier c_t in eps_t = c_t |phi|_{V_t^{-1}} after `rounds` rounds.
  double bonus_coefficient_at(double rounds) const {
    if (cfg_.oracle) return 0.0;
    if (cfg_.bonus == BonusSchedule::Log) {
      return cfg_.explore_scale * (1.0 + std::log(std::max(rounds, 1.0)));
    }
    return cfg_.explore_scale * gamma(rounds, est_.lambda, est_.delta, est_.m, est_.theta_bound) *
           std::sqrt(est_.kappa * (est_.theta_bound + 0.5));
  }

  RoundDiagnostics diagnostics() const override {
    RoundDiagnostics d;
    d.gamma = cfg_.bonus == BonusSchedule::Theory
                  ? gamma(static_cast<double>(est_.rounds), est_.lambda, est_.delta, est_.m, est_.theta_bound)
                  : bonus_coefficient_at(static_cast<double>(est_.rounds));
    if (true_theta_) d.theta_err = (est_.theta_hat - *true_theta_).norm();
    d.max_eps = max_eps_;
    return d;
  }

 private:
  static PolicyConfig prepare(PolicyConfig cfg) {
    cfg.kind = PolicyKind::BoxB;
    if (cfg.oracle) {
      cfg.warm_start = 0;
      cfg.explore_scale = 0.0;
      cfg.nu_mode = NuMode::Known;
      cfg.working_budget = WorkingBudgetMode::Full;
    }
    return cfg;
  }

  ActionId choose(ContextId x) override {
    const ProblemSpec& spec = *spec_;
    // With the true parameter and known nu the program never changes.
    if (cfg_.oracle && oracle_solution_) return sample(oracle_solution_, x);
    if (!cfg_.oracle && (!fitted_ || since_refit_ >= cfg_.refit_every)) {
      refit(est_);
      fitted_ = true;
      since_refit_ = 0;
    }
    const Vector z = grid_.transpose() * est_.theta_hat;
    Vector eps = Vector::Zero(z.size());
    const double coef = bonus_coefficient_at(static_cast<double>(est_.rounds));
    if (coef > 0.0) {
      const Matrix half = est_.design_factor().matrixL().solve(grid_);
      eps = coef * half.colwise().norm().transpose();
    }
    max_eps_ = eps.size() > 0 ? eps.maxCoeff() : 0.0;

    ActionContextTable<double> gain(spec.num_actions(), spec.num_contexts(), 0.0);
    ActionContextTable<Vector> cost(spec.num_actions(), spec.num_contexts(),
                                    Vector::Zero(static_cast<Eigen::Index>(spec.cost_dim())));
    for (std::size_t k = 0; k < grid_keys_.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double upper = upper_bound(sigmoid(z(kk)), eps(kk)).upper;
      gain.at_flat(grid_keys_[k]) = spec.reward.at_flat(grid_keys_[k]) * upper;
      cost.at_flat(grid_keys_[k]) = spec.cost.at_flat(grid_keys_[k]) * upper;
    }
    auto sol = solve_phase2(std::move(gain), std::move(cost));
    if (cfg_.oracle) oracle_solution_ = sol;
    return sample(sol, x);
  }

  void observe(const RoundOutcome& outcome) override {
    record_observation(est_, *spec_, outcome);
    ++since_refit_;
  }

  double played_bonus(ActionId a, ContextId x) const override {
    const double coef = bonus_coefficient_at(static_cast<double>(est_.rounds));
    return coef == 0.0 ? 0.0 : coef * design_norm(est_, spec_->transfer(a, x));
  }

  double bonus_sum_bound() const override {
    const double T = static_cast<double>(spec_->horizon);
    return cbwk::bonus_sum_bound(bonus_coefficient_at(T), est_.m, T, est_.kappa, est_.lambda);
  }

  std::optional<Vector> true_theta_;
  LogisticState est_;
  std::vector<std::size_t> grid_keys_;
  Matrix grid_;
  bool fitted_ = false;
  std::size_t since_refit_ = 0;
  double max_eps_ = std::numeric_limits<double>::quiet_NaN();
  std::optional<LPSolution> oracle_solution_;
};

}  // namespace cbwk
