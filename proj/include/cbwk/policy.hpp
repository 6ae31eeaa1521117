#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbwk/environment.hpp"
#include "cbwk/error.hpp"
#include "cbwk/lp.hpp"
#include "cbwk/problem.hpp"
#include "cbwk/rng.hpp"

namespace cbwk {

enum class PolicyKind { BoxB, BoxC, BoxD };
enum class NuMode { Known, Empirical };
enum class WorkingBudgetMode { Theory, Full };
/// Theory: the confidence radius of the analysis. Log: (1 + ln t), the
/// cheaper schedule used for the practical runs.
enum class BonusSchedule { Theory, Log };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::BoxB;
  NuMode nu_mode = NuMode::Known;
  WorkingBudgetMode working_budget = WorkingBudgetMode::Theory;
  BonusSchedule bonus = BonusSchedule::Theory;
  double delta = 0.05;
  std::optional<double> lambda;  // default m ln(1 + T/m)
  std::size_t warm_start = 50;
  std::size_t refit_every = 1;
  double explore_scale = 1.0;
  /// Box B only: plug in the true parameter, zero bonuses, known nu, full budget.
  bool oracle = false;
  /// Box D trade-off scalar and dual step size.
  double Z = 0.0;
  double eta = 0.01;
  /// Radius used by the linear confidence sets; defaults to the spec's bound.
  std::optional<double> lin_theta_bound;
  /// Verify the optimality certificate of every Phase-2 solve.
  bool check_kkt = false;
};

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::BoxB: return "box-b";
    case PolicyKind::BoxC: return "box-c";
    case PolicyKind::BoxD: return "box-d";
  }
  return "?";
}

namespace detail {

template <class E>
E parse_choice(const nlohmann::json& doc, const char* key, E fallback,
               std::initializer_list<std::pair<const char*, E>> choices) {
  if (!doc.contains(key)) return fallback;
  const auto text = doc.at(key).get<std::string>();
  for (const auto& [name, value] : choices) {
    if (text == name) return value;
  }
  throw Error(ErrorKind::InvalidArgument, std::string("unknown value '") + text + "' for " + key);
}

}  // namespace detail

inline PolicyConfig policy_config_from_json(const nlohmann::json& doc) {
  PolicyConfig c;
  c.kind = detail::parse_choice(doc, "policy", c.kind,
                                {{"box-b", PolicyKind::BoxB}, {"box-c", PolicyKind::BoxC}, {"box-d", PolicyKind::BoxD}});
  c.nu_mode = detail::parse_choice(doc, "nu_mode", c.nu_mode,
                                   {{"known", NuMode::Known}, {"empirical", NuMode::Empirical}});
  c.working_budget = detail::parse_choice(doc, "working_budget", c.working_budget,
                                          {{"theory", WorkingBudgetMode::Theory}, {"full", WorkingBudgetMode::Full}});
  c.bonus = detail::parse_choice(doc, "bonus", c.bonus,
                                 {{"theory", BonusSchedule::Theory}, {"log", BonusSchedule::Log}});
  c.delta = doc.value("delta", c.delta);
  if (doc.contains("lambda") && !doc.at("lambda").is_null()) c.lambda = doc.at("lambda").get<double>();
  c.warm_start = doc.value("warm_start", c.warm_start);
  c.refit_every = doc.value("refit_every", c.refit_every);
  c.explore_scale = doc.value("explore_scale", c.explore_scale);
  c.oracle = doc.value("oracle", c.oracle);
  c.Z = doc.value("Z", c.Z);
  c.eta = doc.value("eta", c.eta);
  if (doc.contains("lin_theta_bound") && !doc.at("lin_theta_bound").is_null()) {
    c.lin_theta_bound = doc.at("lin_theta_bound").get<double>();
  }
  c.check_kkt = doc.value("check_kkt", c.check_kkt);
  if (!(c.delta > 0.0 && c.delta < 1.0)) throw Error(ErrorKind::InvalidArgument, "delta must lie in (0,1)");
  if (c.refit_every == 0) throw Error(ErrorKind::InvalidArgument, "refit_every must be at least 1");
  if (c.lambda && !(*c.lambda > 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be positive");
  if (!(c.explore_scale >= 0.0)) throw Error(ErrorKind::InvalidArgument, "explore_scale must be nonnegative");
  return c;
}

inline nlohmann::json to_json(const PolicyConfig& c) {
  nlohmann::json doc;
  doc["policy"] = to_string(c.kind);
  doc["nu_mode"] = c.nu_mode == NuMode::Known ? "known" : "empirical";
  doc["working_budget"] = c.working_budget == WorkingBudgetMode::Theory ? "theory" : "full";
  doc["bonus"] = c.bonus == BonusSchedule::Theory ? "theory" : "log";
  doc["delta"] = c.delta;
  doc["lambda"] = c.lambda ? nlohmann::json(*c.lambda) : nlohmann::json(nullptr);
  doc["warm_start"] = c.warm_start;
  doc["refit_every"] = c.refit_every;
  doc["explore_scale"] = c.explore_scale;
  doc["oracle"] = c.oracle;
  doc["Z"] = c.Z;
  doc["eta"] = c.eta;
  doc["lin_theta_bound"] = c.lin_theta_bound ? nlohmann::json(*c.lin_theta_bound) : nlohmann::json(nullptr);
  doc["check_kkt"] = c.check_kkt;
  return doc;
}

/// Per-round quantities written next to the outcome in run CSVs.
struct RoundDiagnostics {
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double theta_err = std::numeric_limits<double>::quiet_NaN();
  double max_eps = std::numeric_limits<double>::quiet_NaN();
};

struct PolicyStats {
  std::optional<std::size_t> lock_round;  // 1-based round of the Phase-0 trigger
  std::size_t lp_failures = 0;
  std::size_t kkt_failures = 0;
  /// 2 * sum over rounds t >= 2 of the bonus of the played non-null action.
  double played_bonus_sum = 0.0;
  /// Deterministic bound on played_bonus_sum.
  double bonus_sum_bound = std::numeric_limits<double>::quiet_NaN();
  double working_budget = 0.0;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual ActionId act(ContextId x) = 0;
  virtual void record(const RoundOutcome& outcome) = 0;
  virtual RoundDiagnostics diagnostics() const = 0;
  virtual PolicyStats stats() const = 0;
};

/// Samples from pi(.|x) by inverse CDF in action-index order.
inline ActionId sample_action(const ActionContextTable<double>& pi, ContextId x, double u) {
  double cumulative = 0.0;
  std::size_t last = 0;
  for (std::size_t a = 0; a < pi.num_actions(); ++a) {
    const double p = pi(ActionId{a}, x);
    if (p <= 0.0) continue;
    last = a;
    cumulative += p;
    if (u < cumulative) return ActionId{a};
  }
  return ActionId{last};
}

/// Bookkeeping shared by the three policies: the Phase-0 latch, the context
/// measure, warm start and the played-bonus tally. Subclasses supply the
/// estimation and decision steps.
class PolicyBase : public Policy {
 public:
  ActionId act(ContextId x) final {
    const std::size_t t = rounds_;
    ++nu_counts_[x.value];
    ++contexts_seen_;
    if (!locked_) {
      for (Eigen::Index i = 0; i < cum_cost_.size(); ++i) {
        if (cum_cost_(i) > spec_->budget - 1.0) {
          locked_ = true;
          stats_.lock_round = t + 1;
          break;
        }
      }
    }
    ActionId a = spec_->null_action;
    if (!locked_) {
      if (t < cfg_.warm_start) {
        a = active_[static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(active_.size()))];
      } else if (t == 0 && !cfg_.oracle) {
        a = active_.front();
      } else {
        a = choose(x);
      }
    }
    if (t >= 1 && !spec_->is_null(a)) stats_.played_bonus_sum += 2.0 * played_bonus(a, x);
    return a;
  }

  void record(const RoundOutcome& outcome) final {
    cum_cost_ += outcome.cost;
    observe(outcome);
    ++rounds_;
  }

  PolicyStats stats() const override {
    PolicyStats s = stats_;
    s.working_budget = working_budget_;
    s.bonus_sum_bound = bonus_sum_bound();
    return s;
  }

  const ProblemSpec& spec() const { return *spec_; }
  const PolicyConfig& config() const { return cfg_; }
  const Vector& cum_cost() const { return cum_cost_; }
  bool locked() const { return locked_; }
  std::size_t rounds() const { return rounds_; }
  double working_budget() const { return working_budget_; }
  const std::vector<std::size_t>& nu_counts() const { return nu_counts_; }

  /// Empirical context measure including the current round's context.
  std::vector<double> nu_hat() const {
    std::vector<double> nu(nu_counts_.size(), 0.0);
    if (contexts_seen_ == 0) return nu;
    for (std::size_t x = 0; x < nu.size(); ++x) {
      nu[x] = static_cast<double>(nu_counts_[x]) / static_cast<double>(contexts_seen_);
    }
    return nu;
  }

  /// The context weights fed to Phase 2.
  std::vector<double> nu_tilde() const {
    if (cfg_.nu_mode == NuMode::Known || cfg_.oracle) {
      if (!spec_->context_weights) {
        throw Error(ErrorKind::MissingDistribution, "known-nu mode needs context_weights");
      }
      return *spec_->context_weights;
    }
    return nu_hat();
  }

 protected:
  PolicyBase(const ProblemSpec& spec, PolicyConfig cfg, std::uint64_t seed)
      : spec_(&spec),
        cfg_(std::move(cfg)),
        rng_(seed, Stream::Policy),
        active_(spec.active_actions()),
        cum_cost_(Vector::Zero(static_cast<Eigen::Index>(spec.cost_dim()))),
        nu_counts_(spec.num_contexts(), 0) {}

  virtual ActionId choose(ContextId x) = 0;
  virtual void observe(const RoundOutcome& outcome) = 0;
  /// Bonus of (a, x) under the current estimator, before this round's update.
  virtual double played_bonus(ActionId a, ContextId x) const = 0;
  virtual double bonus_sum_bound() const = 0;

  /// Solves the Phase-2 program. A numerically unstable solve yields nothing,
  /// and the caller plays the null action for this round.
  std::optional<LPSolution> solve_phase2(ActionContextTable<double> gain, ActionContextTable<Vector> cost_rate) {
    const LPProblem lp = build_lp(nu_tilde(), std::move(gain), std::move(cost_rate), working_budget_,
                                  static_cast<double>(spec_->horizon), spec_->null_action);
    LPSolution sol;
    try {
      sol = solve_lp(lp);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NumericalInstability) throw;
      ++stats_.lp_failures;
      return std::nullopt;
    }
    if (cfg_.check_kkt && sol.status == LPStatus::Optimal && !check_kkt(lp, sol, 1e-8).pass) {
      ++stats_.kkt_failures;
    }
    return sol;
  }

  ActionId sample(const std::optional<LPSolution>& sol, ContextId x) {
    if (!sol) return spec_->null_action;
    return sample_action(sol->pi, x, uniform01(rng_));
  }

  const ProblemSpec* spec_;
  PolicyConfig cfg_;
  CounterRng rng_;
  double working_budget_ = 0.0;
  std::vector<ActionId> active_;

 private:
  Vector cum_cost_;
  bool locked_ = false;
  std::size_t rounds_ = 0;
  std::vector<std::size_t> nu_counts_;
  std::size_t contexts_seen_ = 0;
  PolicyStats stats_;
};

/// R_T = OPT - cumulative reward.
inline double regret(const History& history, double opt_value) {
  return opt_value - history.cumulative_reward();
}

}  // namespace cbwk
