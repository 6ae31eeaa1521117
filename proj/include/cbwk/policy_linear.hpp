#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>

#include "cbwk/environment.hpp"
#include "cbwk/error.hpp"
#include "cbwk/logistic.hpp"
#include "cbwk/policy.hpp"
#include "cbwk/problem.hpp"
#include "cbwk/rng.hpp"

namespace cbwk {

/// Radius of the ridge confidence ellipsoids for rewards and all d costs.
inline double lin_gamma(double t, double lambda, double delta, std::size_t m, std::size_t d,
                        double theta_bound) {
  const double md = static_cast<double>(m);
  const double conf = delta / (static_cast<double>(d) + 1.0);
  return 0.25 * std::sqrt(md * std::log((1.0 + t / (lambda * md)) / conf)) + std::sqrt(lambda) * theta_bound;
}

/// Budget margin of the linear analysis.
inline double lin_bT(double T, std::size_t d, double delta, std::size_t m, double theta_bound,
                     std::size_t n_contexts) {
  const double md = static_cast<double>(m);
  const double dd = static_cast<double>(d);
  const double nx = static_cast<double>(n_contexts);
  return 2.0 +
         md * (2.0 * std::sqrt(2.0) * theta_bound + 1.0) * std::sqrt(T) *
             std::log((1.0 + T / md) / (delta / (dd + 1.0))) +
         std::sqrt(2.0 * T * std::log(4.0 * dd / delta)) +
         nx * std::sqrt(2.0 * T * std::log(2.0 * T * nx / delta));
}

/// Ridge statistics for the reward and each cost component.
struct LinEstimator {
  double lambda = 1.0;
  Matrix X_design;
  Vector reward_moment;  // sum phi r
  Matrix cost_moment;    // column i: sum phi c_i
  Vector mu_hat;
  Matrix theta_hats;     // column i: theta_i
  std::size_t obs_count = 0;
  std::size_t rounds = 0;

  LinEstimator() = default;
  LinEstimator(std::size_t m, std::size_t d, double lambda_)
      : lambda(lambda_),
        X_design(Matrix::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)) * lambda_),
        reward_moment(Vector::Zero(static_cast<Eigen::Index>(m))),
        cost_moment(Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d))),
        mu_hat(Vector::Zero(static_cast<Eigen::Index>(m))),
        theta_hats(Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d))) {}

  /// Adds one round. Null rounds carry no information and only advance t.
  void add(const Vector* phi, double reward, const Vector& cost) {
    ++rounds;
    if (phi == nullptr) return;
    X_design.noalias() += *phi * phi->transpose();
    reward_moment += reward * *phi;
    cost_moment.noalias() += *phi * cost.transpose();
    ++obs_count;
    stale_ = true;
  }

  /// Re-solves the normal equations.
  void solve() {
    factor_.compute(X_design);
    mu_hat = factor_.solve(reward_moment);
    theta_hats = factor_.solve(cost_moment);
    stale_ = false;
  }

  const Eigen::LLT<Matrix>& factor() const {
    if (stale_ || factor_.rows() != X_design.rows()) {
      factor_.compute(X_design);
    }
    return factor_;
  }

  double design_norm(const Vector& phi) const { return factor().matrixL().solve(phi).norm(); }

 private:
  mutable Eigen::LLT<Matrix> factor_;
  bool stale_ = true;
};

inline LinEstimator lin_fit(const History& history, const ProblemSpec& spec, double lambda) {
  if (!(lambda > 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be positive");
  const auto& features = spec.linear_features();
  LinEstimator est(spec.feature_dim_of(features), spec.cost_dim(), lambda);
  for (const auto& r : history) {
    est.add(spec.is_null(r.action) ? nullptr : &features(r.action, r.context), r.reward, r.cost);
  }
  est.solve();
  return est;
}

struct LinBounds {
  double upper = 0.0;
  Vector lower;
};

/// U = clamp(r_hat + eps), L = clamp(c_hat - eps), both zero at the null action.
inline LinBounds conf_bounds_lin(double r_hat, const Vector& c_hat, double eps) {
  LinBounds b;
  b.upper = std::clamp(r_hat + eps, 0.0, 1.0);
  b.lower = (c_hat.array() - eps).max(0.0).min(1.0).matrix();
  return b;
}

inline LinBounds conf_bounds_lin(const LinEstimator& est, const ProblemSpec& spec, ActionId a, ContextId x,
                                 double gamma_lin) {
  if (spec.is_null(a)) return {0.0, Vector::Zero(static_cast<Eigen::Index>(spec.cost_dim()))};
  const Vector& phi = spec.linear_features()(a, x);
  const Vector c_hat = est.theta_hats.transpose() * phi;
  return conf_bounds_lin(phi.dot(est.mu_hat), c_hat, gamma_lin * est.design_norm(phi));
}

/// Euclidean projection onto {z >= 0, sum z <= 1}.
inline Vector project_l1(const Vector& v) {
  Vector z = v.cwiseMax(0.0);
  if (z.sum() <= 1.0) return z;
  // Sort-and-threshold projection onto the simplex face sum z = 1.
  std::vector<double> sorted(z.data(), z.data() + z.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0.0) tau = candidate;
  }
  return (z.array() - tau).max(0.0).matrix();
}

struct BoxDState {
  Vector zeta;
  double Z = 0.0;
  double eta = 0.01;
};

/// zeta <- Pi(zeta + eta (c - B/T)).
inline void pgd_update(BoxDState& s, const Vector& cost, double B, double T) {
  s.zeta = project_l1(s.zeta + s.eta * (cost.array() - B / T).matrix());
}

/// argmax over non-null actions of U - Z zeta^T L, smallest index on ties.
inline ActionId boxD_select(const std::vector<ActionId>& actions, const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return actions[best];
}

namespace detail {

inline double lin_bonus_coefficient(const PolicyConfig& cfg, double rounds, double lambda, std::size_t m,
                                    std::size_t d, double theta_bound) {
  if (cfg.bonus == BonusSchedule::Log) return cfg.explore_scale * (1.0 + std::log(std::max(rounds, 1.0)));
  return cfg.explore_scale * lin_gamma(rounds, lambda, cfg.delta, m, d, theta_bound);
}

}  // namespace detail

/// Shared estimator plumbing of Boxes C and D.
class LinearPolicyBase : public PolicyBase {
 public:
  const LinEstimator& estimator() const { return est_; }

  double bonus_coefficient_at(double rounds) const {
    return detail::lin_bonus_coefficient(cfg_, rounds, est_.lambda, m_, spec_->cost_dim(), theta_bound_);
  }

  RoundDiagnostics diagnostics() const override {
    RoundDiagnostics d;
    d.gamma = bonus_coefficient_at(static_cast<double>(est_.rounds));
    d.max_eps = max_eps_;
    return d;
  }

 protected:
  LinearPolicyBase(const ProblemSpec& spec, PolicyConfig cfg, std::uint64_t seed)
      : PolicyBase(spec, std::move(cfg), seed),
        features_(&spec.linear_features()),
        m_(spec.feature_dim_of(spec.linear_features())),
        theta_bound_(cfg_.lin_theta_bound.value_or(spec.theta_bound)),
        est_(m_, spec.cost_dim(), cfg_.lambda.value_or(default_lambda(m_, spec.horizon))) {}

  void observe(const RoundOutcome& r) override {
    est_.add(spec_->is_null(r.action) ? nullptr : &(*features_)(r.action, r.context), r.reward, r.cost);
    dirty_ = true;
  }

  void refresh() {
    if (dirty_) {
      est_.solve();
      dirty_ = false;
    }
  }

  double played_bonus(ActionId a, ContextId x) const override {
    const double coef = bonus_coefficient_at(static_cast<double>(est_.rounds));
    return coef == 0.0 ? 0.0 : coef * est_.design_norm((*features_)(a, x));
  }

  double bonus_sum_bound() const override {
    const double T = static_cast<double>(spec_->horizon);
    return cbwk::bonus_sum_bound(bonus_coefficient_at(T), m_, T, 1.0, est_.lambda);
  }

  const ActionContextTable<Vector>* features_;
  std::size_t m_;
  double theta_bound_;
  LinEstimator est_;
  bool dirty_ = true;
  double max_eps_ = std::numeric_limits<double>::quiet_NaN();
};

/// Box C: LinUCB estimates of expected reward and cost fed to the static program.
class LinearPolicy final : public LinearPolicyBase {
 public:
  LinearPolicy(const ProblemSpec& spec, PolicyConfig cfg, std::uint64_t seed)
      : LinearPolicyBase(spec, with_kind(std::move(cfg)), seed) {
    const double T = static_cast<double>(spec.horizon);
    if (cfg_.working_budget == WorkingBudgetMode::Full) {
      working_budget_ = spec.budget;
    } else {
      working_budget_ = spec.budget - lin_bT(T, spec.cost_dim(), cfg_.delta, m_, theta_bound_,
                                             spec.num_contexts());
    }
  }

 private:
  static PolicyConfig with_kind(PolicyConfig cfg) {
    cfg.kind = PolicyKind::BoxC;
    return cfg;
  }

  ActionId choose(ContextId x) override {
    refresh();
    const ProblemSpec& spec = *spec_;
    const double coef = bonus_coefficient_at(static_cast<double>(est_.rounds));
    ActionContextTable<double> gain(spec.num_actions(), spec.num_contexts(), 0.0);
    ActionContextTable<Vector> cost(spec.num_actions(), spec.num_contexts(),
                                    Vector::Zero(static_cast<Eigen::Index>(spec.cost_dim())));
    double max_eps = 0.0;
    features_->for_each([&](ActionId a, ContextId y, const Vector& phi) {
      if (spec.is_null(a)) return;
      const double eps = coef == 0.0 ? 0.0 : coef * est_.design_norm(phi);
      max_eps = std::max(max_eps, eps);
      auto b = conf_bounds_lin(phi.dot(est_.mu_hat), est_.theta_hats.transpose() * phi, eps);
      gain(a, y) = b.upper;
      cost(a, y) = std::move(b.lower);
    });
    max_eps_ = max_eps;
    return sample(solve_phase2(std::move(gain), std::move(cost)), x);
  }
};

/// Box D: primal-dual baseline with a fixed trade-off Z and an l1-ball dual.
class BoxDPolicy final : public LinearPolicyBase {
 public:
  BoxDPolicy(const ProblemSpec& spec, PolicyConfig cfg, std::uint64_t seed)
      : LinearPolicyBase(spec, with_kind(std::move(cfg)), seed) {
    state_.zeta = Vector::Zero(static_cast<Eigen::Index>(spec.cost_dim()));
    state_.Z = cfg_.Z;
    state_.eta = cfg_.eta;
    working_budget_ = spec.budget;
  }

  const BoxDState& dual() const { return state_; }

 private:
  static PolicyConfig with_kind(PolicyConfig cfg) {
    cfg.kind = PolicyKind::BoxD;
    return cfg;
  }

  ActionId choose(ContextId x) override {
    refresh();
    const double coef = bonus_coefficient_at(static_cast<double>(est_.rounds));
    std::vector<double> scores;
    scores.reserve(active_.size());
    double max_eps = 0.0;
    for (ActionId a : active_) {
      const Vector& phi = (*features_)(a, x);
      const double eps = coef == 0.0 ? 0.0 : coef * est_.design_norm(phi);
      max_eps = std::max(max_eps, eps);
      const double upper = phi.dot(est_.mu_hat) + eps;
      const Vector lower = (est_.theta_hats.transpose() * phi).array() - eps;
      scores.push_back(upper - state_.Z * state_.zeta.dot(lower));
    }
    max_eps_ = max_eps;
    return boxD_select(active_, scores);
  }

  void observe(const RoundOutcome& r) override {
    LinearPolicyBase::observe(r);
    // The dual step uses c_{t-1} and only starts once Phase 2 is running.
    if (rounds() >= cfg_.warm_start && !locked()) {
      pgd_update(state_, r.cost, spec_->budget, static_cast<double>(spec_->horizon));
    }
  }

  BoxDState state_;
};

/// Linear environment: expected reward mu*^T phi and expected costs
/// theta_i*^T phi, realized as independent Bernoulli draws.
class LinearEnvironment {
 public:
  LinearEnvironment(const ProblemSpec& spec, Vector mu_star, Matrix theta_star, std::uint64_t seed)
      : spec_(&spec),
        mu_star_(std::move(mu_star)),
        theta_star_(std::move(theta_star)),
        history_(spec.cost_dim()),
        context_rng_(seed, Stream::Context),
        conversion_rng_(seed, Stream::Conversion) {
    spec.linear_features().for_each([&](ActionId a, ContextId x, const Vector&) {
      if (spec.is_null(a)) return;
      const double r = mean_reward(a, x);
      const Vector c = mean_cost(a, x);
      if (r < 0.0 || r > 1.0 || (c.array() < 0.0).any() || (c.array() > 1.0).any()) {
        throw Error(ErrorKind::RangeViolation, "linear means must lie in [0,1]");
      }
    });
  }

  const ProblemSpec& spec() const { return *spec_; }
  const History& history() const { return history_; }
  std::size_t horizon() const { return spec_->horizon; }

  double mean_reward(ActionId a, ContextId x) const {
    return spec_->is_null(a) ? 0.0 : spec_->linear_features()(a, x).dot(mu_star_);
  }
  Vector mean_cost(ActionId a, ContextId x) const {
    if (spec_->is_null(a)) return Vector::Zero(static_cast<Eigen::Index>(spec_->cost_dim()));
    return theta_star_.transpose() * spec_->linear_features()(a, x);
  }

  ContextId next_context() {
    context_rng_.seek(round_);
    return sample_context(*spec_, context_rng_);
  }

  RoundOutcome play(ContextId x, ActionId a) {
    if (round_ >= spec_->horizon) throw Error(ErrorKind::HorizonExceeded, "all rounds played");
    RoundOutcome out;
    out.context = x;
    out.action = a;
    out.cost = Vector::Zero(static_cast<Eigen::Index>(spec_->cost_dim()));
    if (!spec_->is_null(a)) {
      conversion_rng_.seek(round_ * (spec_->cost_dim() + 1));
      out.reward = uniform01(conversion_rng_) < mean_reward(a, x) ? 1.0 : 0.0;
      const Vector c = mean_cost(a, x);
      for (Eigen::Index i = 0; i < c.size(); ++i) out.cost(i) = uniform01(conversion_rng_) < c(i) ? 1.0 : 0.0;
      out.y = out.reward > 0.0 ? 1 : 0;
    }
    history_.push(out);
    ++round_;
    return out;
  }

 private:
  const ProblemSpec* spec_;
  Vector mu_star_;
  Matrix theta_star_;
  History history_;
  CounterRng context_rng_;
  CounterRng conversion_rng_;
  std::size_t round_ = 0;
};

}  // namespace cbwk
