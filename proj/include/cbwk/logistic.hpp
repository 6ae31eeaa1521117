#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>

#include "cbwk/environment.hpp"
#include "cbwk/error.hpp"
#include "cbwk/problem.hpp"

namespace cbwk {

/// Worst-case inverse slope of the link over the parameter ball.
inline double compute_kappa(const ProblemSpec& spec, double theta_bound) {
  double worst = 4.0;
  spec.transfer.for_each([&](ActionId a, ContextId, const Vector& phi) {
    if (spec.is_null(a)) return;
    worst = std::max(worst, 1.0 / sigmoid_derivative(phi.norm() * theta_bound));
  });
  return worst;
}

/// Confidence radius of the logistic estimator after t rounds.
inline double gamma(double t, double lambda, double delta, std::size_t m, double theta_bound) {
  const double md = static_cast<double>(m);
  const double log_term = md * std::log(2.0) - std::log(delta) +
                          0.5 * md * std::log1p(t / (4.0 * md * lambda));
  return std::sqrt(lambda) * (theta_bound + 0.5) + (2.0 / std::sqrt(lambda)) * log_term;
}

/// Regularization suggested by the regret analysis.
inline double default_lambda(std::size_t m, std::size_t horizon) {
  const double md = static_cast<double>(m);
  return md * std::log1p(static_cast<double>(horizon) / md);
}

/// Right-hand side of the elliptic potential inequality for unit vectors.
inline double elliptic_potential_bound(std::size_t m, double lambda, double tau) {
  const double md = static_cast<double>(m);
  return 2.0 * md * std::max(1.0, 1.0 / lambda) * std::log1p(tau / (lambda * md));
}

/// Binomial sufficient statistics of the non-null observations, one row per
/// distinct feature key. Repeated (a, x) pairs collapse into one row, which
/// keeps every likelihood evaluation O(|A||X| m) instead of O(t m).
class ConversionCounts {
 public:
  ConversionCounts() = default;
  ConversionCounts(std::size_t num_keys, std::size_t dim)
      : slot_(num_keys, -1),
        features_(static_cast<Eigen::Index>(num_keys), static_cast<Eigen::Index>(dim)),
        trials_(Vector::Zero(static_cast<Eigen::Index>(num_keys))),
        successes_(Vector::Zero(static_cast<Eigen::Index>(num_keys))) {}

  void add(std::size_t key, const Vector& phi, int y) {
    if (key >= slot_.size()) throw Error(ErrorKind::InvalidArgument, "observation key out of range");
    if (slot_[key] < 0) {
      slot_[key] = rows_;
      features_.row(rows_) = phi.transpose();
      ++rows_;
    }
    trials_(slot_[key]) += 1.0;
    successes_(slot_[key]) += static_cast<double>(y);
    total_ += 1;
  }

  std::size_t rows() const { return static_cast<std::size_t>(rows_); }
  std::size_t total() const { return total_; }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }
  auto features() const { return features_.topRows(rows_); }
  auto trials() const { return trials_.head(rows_); }
  auto successes() const { return successes_.head(rows_); }

 private:
  std::vector<Eigen::Index> slot_;
  Matrix features_;
  Vector trials_;
  Vector successes_;
  Eigen::Index rows_ = 0;
  std::size_t total_ = 0;
};

inline ConversionCounts counts_from_history(const History& history, const ProblemSpec& spec) {
  ConversionCounts counts(spec.num_actions() * spec.num_contexts(), spec.feature_dim());
  for (const auto& r : history) {
    if (spec.is_null(r.action)) continue;
    counts.add(spec.transfer.flat_index(r.action, r.context), spec.transfer(r.action, r.context), r.y);
  }
  return counts;
}

/// Regularized log-likelihood, sum s z - n log(1 + e^z) - lambda/2 |theta|^2.
inline double log_likelihood(const ConversionCounts& counts, double lambda, const Vector& theta) {
  const Vector z = counts.features() * theta;
  double value = -0.5 * lambda * theta.squaredNorm();
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    value += counts.successes()(k) * z(k) - counts.trials()(k) * softplus(z(k));
  }
  return value;
}

inline Vector log_likelihood_gradient(const ConversionCounts& counts, double lambda,
                                      const Vector& theta) {
  const Vector z = counts.features() * theta;
  Vector resid(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    resid(k) = counts.successes()(k) - counts.trials()(k) * sigmoid(z(k));
  }
  return counts.features().transpose() * resid - lambda * theta;
}

struct MleResult {
  Vector theta;
  double gradient_norm = 0.0;
  int iterations = 0;
};

/// Damped Newton ascent on the regularized log-likelihood.
inline MleResult fit_mle(const ConversionCounts& counts, double lambda, const Vector& start) {
  if (!(lambda > 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be positive");
  constexpr int kMaxIter = 200;
  constexpr double kArmijo = 1e-4;
  constexpr double kGradTol = 1e-10;
  constexpr double kAcceptTol = 1e-8;

  const auto m = static_cast<Eigen::Index>(counts.dim());
  MleResult out;
  out.theta = start.size() == m ? start : Vector::Zero(m);
  if (counts.rows() == 0) {
    out.theta.setZero();
    return out;
  }
  const auto phi = counts.features();
  const auto n = counts.trials();

  Vector g = log_likelihood_gradient(counts, lambda, out.theta);
  double gnorm = g.norm();
  double value = log_likelihood(counts, lambda, out.theta);
  Matrix hess(m, m);
  int it = 0;
  for (; it < kMaxIter && gnorm > kGradTol; ++it) {
    const Vector z = phi * out.theta;
    Vector w(z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) w(k) = n(k) * sigmoid_derivative(z(k));
    hess.noalias() = phi.transpose() * w.asDiagonal() * phi;
    hess.diagonal().array() += lambda;
    const Vector dir = hess.llt().solve(g);
    const double slope = g.dot(dir);

    bool moved = false;
    for (double step = 1.0; step > 1e-12; step *= 0.5) {
      Vector trial = out.theta + step * dir;
      const double trial_value = log_likelihood(counts, lambda, trial);
      Vector trial_g = log_likelihood_gradient(counts, lambda, trial);
      // Near the optimum the value change drops below rounding, so a full
      // step that shrinks the gradient is taken even if Armijo cannot tell.
      const bool armijo = trial_value >= value + kArmijo * step * slope;
      const bool newton_region = step == 1.0 && trial_g.norm() < gnorm;
      if (armijo || newton_region) {
        out.theta = std::move(trial);
        g = std::move(trial_g);
        gnorm = g.norm();
        value = trial_value;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  out.iterations = it;
  out.gradient_norm = gnorm;
  if (!(gnorm <= kAcceptTol)) {
    throw Error(ErrorKind::NoConvergence,
                "Newton stopped with gradient norm " + std::to_string(gnorm));
  }
  return out;
}

inline MleResult fit_mle(const History& history, const ProblemSpec& spec, double lambda) {
  return fit_mle(counts_from_history(history, spec), lambda, Vector());
}

namespace detail {

inline Vector project_ball(const Vector& v, double radius) {
  const double n = v.norm();
  return n > radius ? Vector(v * (radius / n)) : v;
}

// Psi(theta) = sum n eta(z) phi + lambda theta.
inline Vector psi(const ConversionCounts& counts, double lambda, const Vector& theta) {
  const Vector z = counts.features() * theta;
  Vector weights(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) weights(k) = counts.trials()(k) * sigmoid(z(k));
  return counts.features().transpose() * weights + lambda * theta;
}

struct ProjectionEval {
  double value;
  Vector gradient;
};

// f(theta) = |Psi(theta) - target|^2 in the W(theta)^{-1} norm, with gradient
// 2 Delta - sum n eta''(z) (phi^T u)^2 phi, u = W^{-1} Delta.
inline ProjectionEval projection_objective(const ConversionCounts& counts, double lambda,
                                           const Vector& theta, const Vector& target) {
  const auto phi = counts.features();
  const auto n = counts.trials();
  const auto m = static_cast<Eigen::Index>(counts.dim());
  const Vector z = phi * theta;
  Vector w(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) w(k) = n(k) * sigmoid_derivative(z(k));
  Matrix W = phi.transpose() * w.asDiagonal() * phi;
  W.diagonal().array() += lambda;
  const Vector delta = psi(counts, lambda, theta) - target;
  const Vector u = W.llt().solve(delta);
  Vector curvature(z.size());
  const Vector proj = phi * u;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double s = sigmoid(z(k));
    curvature(k) = n(k) * sigmoid_derivative(z(k)) * (1.0 - 2.0 * s) * proj(k) * proj(k);
  }
  ProjectionEval out{delta.dot(u), 2.0 * delta};
  if (m > 0 && z.size() > 0) out.gradient -= phi.transpose() * curvature;
  return out;
}

}  // namespace detail

struct ProjectionResult {
  Vector theta;
  double objective = 0.0;
  bool projected = false;
};

/// Maps the MLE back into the parameter ball. Returns the input untouched when
/// it is already feasible; otherwise runs projected gradient descent on the
/// Psi-matching objective, accepting only non-increasing steps.
inline ProjectionResult project_theta(const Vector& theta_tilde, const ConversionCounts& counts,
                                      double lambda, double theta_bound) {
  ProjectionResult out{theta_tilde, 0.0, false};
  const double norm = theta_tilde.norm();
  if (norm <= theta_bound) return out;
  out.projected = true;

  const Vector target = detail::psi(counts, lambda, theta_tilde);
  Vector theta = detail::project_ball(theta_tilde, theta_bound);
  auto eval = detail::projection_objective(counts, lambda, theta, target);
  double step = 1.0 / (lambda + static_cast<double>(counts.total()) + 1.0);
  for (int iter = 0; iter < 100; ++iter) {
    bool improved = false;
    for (int halvings = 0; halvings < 40; ++halvings) {
      Vector trial = detail::project_ball(theta - step * eval.gradient, theta_bound);
      auto trial_eval = detail::projection_objective(counts, lambda, trial, target);
      if (trial_eval.value <= eval.value) {
        improved = (trial - theta).norm() > 0.0;
        theta = std::move(trial);
        eval = std::move(trial_eval);
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  out.theta = std::move(theta);
  out.objective = eval.value;
  return out;
}

struct ConfidenceBound {
  double p_hat = 0.0;
  double epsilon = 0.0;
  double upper = 0.0;
};

inline ConfidenceBound upper_bound(double p_hat, double epsilon) {
  return {p_hat, epsilon, std::min(p_hat + epsilon, 1.0)};
}

/// Estimator state of the logistic UCB. `kappa` scales the ridge of the design
/// matrix; the practical bonus schedule passes 1 there.
struct LogisticState {
  double lambda = 1.0;
  std::size_t m = 0;
  Vector theta_tilde;
  Vector theta_hat;
  Matrix V;
  std::size_t obs_count = 0;
  std::size_t rounds = 0;
  double kappa = 4.0;
  double theta_bound = 1.0;
  double delta = 0.05;
  ConversionCounts counts;
  std::size_t projections = 0;
  double last_projection_objective = 0.0;

  const Eigen::LLT<Matrix>& design_factor() const {
    if (factor_stale_) {
      factor_.compute(V);
      factor_stale_ = false;
    }
    return factor_;
  }
  void mark_design_changed() { factor_stale_ = true; }

 private:
  mutable Eigen::LLT<Matrix> factor_;
  mutable bool factor_stale_ = true;
};

inline LogisticState make_logistic_state(const ProblemSpec& spec, double lambda, double delta,
                                         double kappa) {
  LogisticState s;
  s.lambda = lambda;
  s.m = spec.feature_dim();
  const auto m = static_cast<Eigen::Index>(s.m);
  s.theta_tilde = Vector::Zero(m);
  s.theta_hat = Vector::Zero(m);
  s.V = Matrix::Identity(m, m) * (kappa * lambda);
  s.kappa = kappa;
  s.theta_bound = spec.theta_bound;
  s.delta = delta;
  s.counts = ConversionCounts(spec.num_actions() * spec.num_contexts(), s.m);
  return s;
}

/// Adds phi phi^T to V. A null action leaves the design unchanged.
inline void update_design(LogisticState& s, const ProblemSpec& spec, ActionId a, ContextId x) {
  if (spec.is_null(a)) return;
  const Vector& phi = spec.transfer(a, x);
  s.V.noalias() += phi * phi.transpose();
  ++s.obs_count;
  s.mark_design_changed();
}

/// Full bookkeeping for one played round.
inline void record_observation(LogisticState& s, const ProblemSpec& spec, const RoundOutcome& r) {
  ++s.rounds;
  if (spec.is_null(r.action)) return;
  s.counts.add(spec.transfer.flat_index(r.action, r.context), spec.transfer(r.action, r.context), r.y);
  update_design(s, spec, r.action, r.context);
}

/// Re-solves the MLE (warm-started) and projects it.
inline void refit(LogisticState& s) {
  s.theta_tilde = fit_mle(s.counts, s.lambda, s.theta_tilde).theta;
  auto proj = project_theta(s.theta_tilde, s.counts, s.lambda, s.theta_bound);
  if (proj.projected) {
    ++s.projections;
    s.last_projection_objective = proj.objective;
  }
  s.theta_hat = std::move(proj.theta);
}

inline double design_norm(const LogisticState& s, const Vector& phi) {
  return s.design_factor().matrixL().solve(phi).norm();
}

inline double gamma(const LogisticState& s) {
  return gamma(static_cast<double>(s.rounds), s.lambda, s.delta, s.m, s.theta_bound);
}

/// Bonus multiplier of the theoretical schedule: eps = coef * |phi|_{V^{-1}}.
inline double bonus_coefficient(const LogisticState& s) {
  return gamma(s) * std::sqrt(s.kappa * (s.theta_bound + 0.5));
}

inline double bonus(const LogisticState& s, const Vector& phi) {
  return bonus_coefficient(s) * design_norm(s, phi);
}

inline double bonus(const LogisticState& s, const ProblemSpec& spec, ActionId a, ContextId x) {
  if (spec.is_null(a)) throw Error(ErrorKind::InvalidArgument, "no bonus for the null action");
  return bonus(s, spec.transfer(a, x));
}

inline ConfidenceBound upper_bound(const LogisticState& s, const ProblemSpec& spec, ActionId a,
                                   ContextId x) {
  return upper_bound(sigmoid(spec.transfer(a, x).dot(s.theta_hat)), bonus(s, spec, a, x));
}

/// Bound on twice the played-bonus sum for a bonus coefficient that never
/// exceeds `coef_T`. With the theoretical coefficient this is exactly E_T.
inline double bonus_sum_bound(double coef_T, std::size_t m, double horizon, double kappa,
                              double lambda) {
  const double md = static_cast<double>(m);
  const double kl = kappa * lambda;
  return 2.0 * coef_T *
         std::sqrt(2.0 * md * horizon * std::max(1.0, 1.0 / kl) * std::log1p(horizon / (kl * md)));
}

/// E_T of the theoretical schedule.
inline double bonus_sum_bound(double horizon, double lambda, double delta, std::size_t m,
                              double kappa, double theta_bound) {
  const double coef = gamma(horizon, lambda, delta, m, theta_bound) * std::sqrt(kappa * (theta_bound + 0.5));
  return bonus_sum_bound(coef, m, horizon, kappa, lambda);
}

}  // namespace cbwk
