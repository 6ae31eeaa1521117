#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cbwk/error.hpp"
#include "cbwk/problem.hpp"
#include "cbwk/rng.hpp"
#include "cbwk/table.hpp"

namespace cbwk {

/// Logistic link 1/(1+e^{-z}), written without a data-dependent branch and
/// accurate in both tails.
inline double sigmoid(double z) {
  return std::exp(std::min(z, 0.0) - std::log1p(std::exp(-std::abs(z))));
}

/// Derivative of the logistic link, eta (1 - eta).
inline double sigmoid_derivative(double z) {
  const double e = std::exp(-std::abs(z));
  return e / ((1.0 + e) * (1.0 + e));
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

struct EnvState {
  Vector true_theta;
  std::uint64_t rng_seed = 0;
  std::size_t round = 0;
};

struct RoundOutcome {
  ContextId context;
  ActionId action;
  int y = 0;
  double reward = 0.0;
  Vector cost;
};

/// Ordered log of a run plus running totals.
class History {
 public:
  History() = default;
  explicit History(std::size_t cost_dim) : cumulative_cost_(Vector::Zero(static_cast<Eigen::Index>(cost_dim))) {}

  void push(RoundOutcome outcome) {
    if (cumulative_cost_.size() == 0) cumulative_cost_ = Vector::Zero(outcome.cost.size());
    cumulative_reward_ += outcome.reward;
    cumulative_cost_ += outcome.cost;
    rounds_.push_back(std::move(outcome));
  }

  std::size_t size() const { return rounds_.size(); }
  bool empty() const { return rounds_.empty(); }
  const RoundOutcome& operator[](std::size_t i) const { return rounds_[i]; }
  const std::vector<RoundOutcome>& rounds() const { return rounds_; }
  auto begin() const { return rounds_.begin(); }
  auto end() const { return rounds_.end(); }

  double cumulative_reward() const { return cumulative_reward_; }
  const Vector& cumulative_cost() const { return cumulative_cost_; }
  std::size_t cost_dim() const { return static_cast<std::size_t>(cumulative_cost_.size()); }

 private:
  std::vector<RoundOutcome> rounds_;
  double cumulative_reward_ = 0.0;
  Vector cumulative_cost_;
};

inline double conversion_probability(const ProblemSpec& spec, const Vector& theta,
                                     ActionId a, ContextId x) {
  return sigmoid(spec.transfer(a, x).dot(theta));
}

/// Draws x ~ nu by inverse CDF in context-index order.
template <class Urbg>
ContextId sample_context(const ProblemSpec& spec, Urbg& rng) {
  if (!spec.context_weights) {
    throw Error(ErrorKind::MissingDistribution, "problem has no context distribution");
  }
  const auto& nu = *spec.context_weights;
  const double u = uniform01(rng);
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t x = 0; x < nu.size(); ++x) {
    if (nu[x] <= 0.0) continue;
    last_positive = x;
    cumulative += nu[x];
    if (u < cumulative) return ContextId{x};
  }
  // Rounding left u above the final cumulative sum.
  return ContextId{last_positive};
}

template <class Urbg>
int draw_conversion(const EnvState& env, const ProblemSpec& spec, ActionId a, ContextId x,
                    Urbg& rng) {
  if (spec.is_null(a)) {
    throw Error(ErrorKind::NullActionConversion, "conversion is undefined for the null action");
  }
  const double p = conversion_probability(spec, env.true_theta, a, x);
  return uniform01(rng) < p ? 1 : 0;
}

/// Plays action `a` in context `x`, appends the outcome and advances the round.
template <class Urbg>
RoundOutcome play_round(EnvState& env, const ProblemSpec& spec, History& history,
                        ContextId x, ActionId a, Urbg& rng) {
  if (env.round >= spec.horizon) {
    throw Error(ErrorKind::HorizonExceeded, "all " + std::to_string(spec.horizon) + " rounds played");
  }
  RoundOutcome out;
  out.context = x;
  out.action = a;
  out.cost = Vector::Zero(static_cast<Eigen::Index>(spec.cost_dim()));
  if (!spec.is_null(a)) {
    out.y = draw_conversion(env, spec, a, x, rng);
    if (out.y == 1) {
      out.reward = spec.reward(a, x);
      out.cost = spec.cost(a, x);
    }
  }
  history.push(out);
  ++env.round;
  return out;
}

/// Box A environment: contexts from nu, Bernoulli conversions from the
/// logistic model. Round t uses counter t of each sub-stream, so two policies
/// run with the same seed face the same contexts and conversion uniforms.
class ConversionEnvironment {
 public:
  ConversionEnvironment(const ProblemSpec& spec, Vector true_theta, std::uint64_t seed)
      : spec_(&spec),
        state_{std::move(true_theta), seed, 0},
        history_(spec.cost_dim()),
        context_rng_(seed, Stream::Context),
        conversion_rng_(seed, Stream::Conversion) {
    if (state_.true_theta.size() != static_cast<Eigen::Index>(spec.feature_dim())) {
      throw Error(ErrorKind::ShapeMismatch, "true_theta dimension differs from the features");
    }
    if (state_.true_theta.norm() > spec.theta_bound * (1.0 + 1e-12)) {
      throw Error(ErrorKind::RangeViolation, "true_theta lies outside the parameter ball");
    }
  }

  const ProblemSpec& spec() const { return *spec_; }
  const EnvState& state() const { return state_; }
  const History& history() const { return history_; }
  std::size_t horizon() const { return spec_->horizon; }

  ContextId next_context() {
    context_rng_.seek(state_.round);
    return sample_context(*spec_, context_rng_);
  }

  RoundOutcome play(ContextId x, ActionId a) {
    conversion_rng_.seek(state_.round);
    return play_round(state_, *spec_, history_, x, a, conversion_rng_);
  }

  double expected_reward(ActionId a, ContextId x) const {
    if (spec_->is_null(a)) return 0.0;
    return spec_->reward(a, x) * conversion_probability(*spec_, state_.true_theta, a, x);
  }

  Vector expected_cost(ActionId a, ContextId x) const {
    if (spec_->is_null(a)) return Vector::Zero(static_cast<Eigen::Index>(spec_->cost_dim()));
    return spec_->cost(a, x) * conversion_probability(*spec_, state_.true_theta, a, x);
  }

 private:
  const ProblemSpec* spec_;
  EnvState state_;
  History history_;
  CounterRng context_rng_;
  CounterRng conversion_rng_;
};

}  // namespace cbwk
