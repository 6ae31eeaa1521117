#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

using namespace cbwk;
using cbwk::testing::make_spec;

namespace {

RoundOutcome outcome(std::size_t x, std::size_t a, double reward, Vector cost) {
  RoundOutcome r;
  r.context = ContextId{x};
  r.action = ActionId{a};
  r.y = reward > 0.0 ? 1 : 0;
  r.reward = reward;
  r.cost = std::move(cost);
  return r;
}

ProblemSpec scalar_linear_spec() {
  ProblemSpec spec = make_spec(2, 1, 1, 1, 100, 10.0, 1.0, 1);
  spec.linear_transfer = ActionContextTable<Vector>(2, 1, Vector::Zero(1));
  (*spec.linear_transfer)(ActionId{1}, ContextId{0}) = Vector::Constant(1, 1.0);
  return spec;
}

// Nonnegative features and parameters keep every mean inside [0,1].
struct LinearInstance {
  ProblemSpec spec;
  Vector mu;
  Matrix theta;
};

LinearInstance positive_instance(std::size_t na, std::size_t nx, std::size_t m, std::size_t d,
                                 std::size_t T, double B, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LinearInstance inst{make_spec(na, nx, m, d, T, B, 1.0, seed), Vector(m), Matrix(m, d)};
  ActionContextTable<Vector> lin(na, nx, Vector::Zero(static_cast<Eigen::Index>(m)));
  for (std::size_t a = 1; a < na; ++a) {
    for (std::size_t x = 0; x < nx; ++x) {
      Vector phi(static_cast<Eigen::Index>(m));
      for (auto& v : phi) v = unif(rng);
      lin(ActionId{a}, ContextId{x}) = phi * ((0.5 + 0.5 * unif(rng)) / phi.norm());
    }
  }
  inst.spec.linear_transfer = lin;
  for (auto& v : inst.mu) v = unif(rng);
  inst.mu *= 0.9 / inst.mu.norm();
  for (Eigen::Index i = 0; i < inst.theta.cols(); ++i) {
    Vector col(static_cast<Eigen::Index>(m));
    for (auto& v : col) v = unif(rng);
    inst.theta.col(i) = col * (0.9 / col.norm());
  }
  inst.spec.theta_bound = 0.9;
  return inst;
}

PolicyConfig linear_cfg(PolicyKind kind) {
  PolicyConfig cfg;
  cfg.kind = kind;
  cfg.bonus = BonusSchedule::Log;
  cfg.working_budget = WorkingBudgetMode::Full;
  cfg.explore_scale = 0.1;
  cfg.warm_start = 10;
  cfg.lambda = 1.0;
  return cfg;
}

template <class Env>
RunRecord run_linear(Env& env, const ProblemSpec& spec, const PolicyConfig& cfg, std::uint64_t seed) {
  auto policy = make_policy(spec, cfg, seed);
  return run_policy(env, *policy, seed, [&](ActionId a, ContextId x) { return env.mean_reward(a, x); });
}

}  // namespace

TEST(Ridge, ScalarExamples) {
  const ProblemSpec spec = scalar_linear_spec();
  History empty(1);
  const auto e0 = lin_fit(empty, spec, 1.0);
  EXPECT_TRUE(e0.mu_hat.isZero());
  EXPECT_TRUE(e0.theta_hats.isZero());

  History one(1);
  one.push(outcome(0, 1, 1.0, Vector::Constant(1, 0.0)));
  EXPECT_NEAR(lin_fit(one, spec, 1.0).mu_hat(0), 0.5, 1e-15);

  History two(1);
  two.push(outcome(0, 1, 1.0, Vector::Constant(1, 1.0)));
  two.push(outcome(0, 1, 0.0, Vector::Constant(1, 0.0)));
  two.push(outcome(0, 0, 0.0, Vector::Constant(1, 0.0)));
  const auto e2 = lin_fit(two, spec, 1.0);
  EXPECT_NEAR(e2.mu_hat(0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(e2.theta_hats(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(e2.obs_count, 2u);
  EXPECT_EQ(e2.rounds, 3u);
}

TEST(LinGamma, ClosedFormAndMonotone) {
  EXPECT_NEAR(lin_gamma(0.0, 1.0, 0.5, 1, 1, 1.0), 0.25 * std::sqrt(std::log(4.0)) + 1.0, 1e-12);
  EXPECT_NEAR(lin_gamma(0.0, 1.0, 0.5, 1, 1, 1.0), 1.2944, 1e-4);
  EXPECT_GT(lin_gamma(0.0, 1.0, 0.99, 1, 1, 0.0), 0.0);
  EXPECT_GT(lin_gamma(100.0, 1.0, 0.1, 3, 2, 1.0), lin_gamma(10.0, 1.0, 0.1, 3, 2, 1.0));
}

TEST(LinBT, MonotoneAndAboveLogisticMargin) {
  const double base = lin_bT(1000, 2, 0.05, 3, 1.0, 4);
  EXPECT_GT(lin_bT(2000, 2, 0.05, 3, 1.0, 4), base);
  EXPECT_GT(lin_bT(1000, 2, 0.05, 3, 1.0, 5), base);
  EXPECT_GT(lin_bT(1000, 2, 0.05, 3, 2.0, 4), base);
  const double logistic_margin = 100.0 - budget_bT(100.0, 1000, 2, 0.05, 4);
  EXPECT_GT(base, logistic_margin);
}

TEST(ConfBoundsLin, Clamping) {
  auto b = conf_bounds_lin(0.6, Vector::Constant(1, 0.4), 0.1);
  EXPECT_NEAR(b.upper, 0.7, 1e-15);
  EXPECT_NEAR(b.lower(0), 0.3, 1e-15);
  b = conf_bounds_lin(0.2, Vector::Constant(2, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(b.upper, 1.0);
  EXPECT_TRUE(b.lower.isZero());
  b = conf_bounds_lin(1.3, Vector::Constant(1, -0.2), 0.0);
  EXPECT_DOUBLE_EQ(b.upper, 1.0);
  EXPECT_DOUBLE_EQ(b.lower(0), 0.0);
}

TEST(ProjectL1, Examples) {
  Vector v(2);
  v << 0.2, 0.3;
  EXPECT_TRUE(project_l1(v).isApprox(v));
  v << 0.6, 0.6;
  EXPECT_NEAR((project_l1(v) - Vector::Constant(2, 0.5)).norm(), 0.0, 1e-15);
  v << -0.5, 2.0;
  Vector expected(2);
  expected << 0.0, 1.0;
  EXPECT_NEAR((project_l1(v) - expected).norm(), 0.0, 1e-15);
}

// Optimality against a step-0.02 grid over {z >= 0, sum z <= 1}, d <= 3.
TEST(ProjectL1, BeatsGrid) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(-1.0, 2.0);
  const int steps = 50;
  for (int rep = 0; rep < 60; ++rep) {
    const Eigen::Index d = 1 + rep % 3;
    Vector v(d);
    for (auto& x : v) x = unif(rng);
    const Vector p = project_l1(v);
    EXPECT_GE(p.minCoeff(), 0.0);
    EXPECT_LE(p.sum(), 1.0 + 1e-12);
    const double best = (p - v).norm();
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (;;) {
      int total = 0;
      for (int i : idx) total += i;
      if (total <= steps) {
        Vector g(d);
        for (Eigen::Index k = 0; k < d; ++k) g(k) = idx[static_cast<std::size_t>(k)] / double(steps);
        ASSERT_LE(best, (g - v).norm() + 1e-12);
      }
      std::size_t k = 0;
      while (k < idx.size() && ++idx[k] > steps) idx[k++] = 0;
      if (k == idx.size()) break;
    }
  }
}

TEST(BoxDSelect, ArgmaxAndTies) {
  const std::vector<ActionId> actions{ActionId{1}, ActionId{2}, ActionId{3}};
  EXPECT_EQ(boxD_select({actions[0], actions[1]}, {0.40, 0.45}), ActionId{2});
  EXPECT_EQ(boxD_select(actions, {0.3, 0.3, 0.1}), ActionId{1});
  EXPECT_EQ(boxD_select(actions, {0.1, 0.5, 0.5}), ActionId{2});
}

TEST(PgdUpdate, Examples) {
  BoxDState s{Vector::Zero(2), 1.0, 0.1};
  Vector c(2);
  c << 1.0, 0.0;
  pgd_update(s, c, 0.5, 1.0);
  EXPECT_NEAR(s.zeta(0), 0.05, 1e-15);
  EXPECT_DOUBLE_EQ(s.zeta(1), 0.0);

  BoxDState still{Vector::Constant(2, 0.2), 1.0, 0.3};
  pgd_update(still, Vector::Constant(2, 0.25), 25.0, 100.0);
  EXPECT_NEAR((still.zeta - Vector::Constant(2, 0.2)).norm(), 0.0, 1e-15);

  BoxDState grow{Vector::Zero(3), 1.0, 0.2};
  for (int i = 0; i < 50; ++i) {
    pgd_update(grow, Vector::Ones(3), 10.0, 100.0);
    EXPECT_LE(grow.zeta.sum(), 1.0 + 1e-12);
    EXPECT_GE(grow.zeta.minCoeff(), 0.0);
  }
  EXPECT_NEAR(grow.zeta.sum(), 1.0, 1e-12);
}

TEST(BoxD, ZeroTradeOffIsUcbArgmax) {
  auto inst = positive_instance(4, 2, 3, 1, 60, 30.0, 3);
  PolicyConfig cfg = linear_cfg(PolicyKind::BoxD);
  cfg.Z = 0.0;
  cfg.explore_scale = 0.0;
  cfg.warm_start = 20;
  BoxDPolicy policy(inst.spec, cfg, 1);
  LinearEnvironment env(inst.spec, inst.mu, inst.theta, 2);
  for (std::size_t t = 0; t < inst.spec.horizon; ++t) {
    const ContextId x = env.next_context();
    const ActionId a = policy.act(x);
    if (t >= cfg.warm_start && !policy.locked()) {
      const auto& est = policy.estimator();
      double best = -1e300;
      ActionId arg{0};
      for (std::size_t b = 1; b < 4; ++b) {
        const double s = (*inst.spec.linear_transfer)(ActionId{b}, x).dot(est.mu_hat);
        if (s > best) {
          best = s;
          arg = ActionId{b};
        }
      }
      EXPECT_EQ(a, arg);
    }
    policy.record(env.play(x, a));
  }
}

TEST(LinearPolicies, PhaseZeroAndDegenerateBudget) {
  auto inst = positive_instance(3, 2, 2, 2, 50, 4.0, 6);
  for (PolicyKind kind : {PolicyKind::BoxC, PolicyKind::BoxD}) {
    PolicyConfig cfg = linear_cfg(kind);
    cfg.warm_start = 0;
    auto policy = make_policy(inst.spec, cfg, 1);
    policy->act(ContextId{0});
    Vector c(2);
    c << 3.5, 0.0;
    policy->record(outcome(0, 1, 1.0, c));
    EXPECT_EQ(policy->act(ContextId{0}), inst.spec.null_action);
    EXPECT_EQ(policy->stats().lock_round, std::optional<std::size_t>(2));
  }
  PolicyConfig theory = linear_cfg(PolicyKind::BoxC);
  theory.working_budget = WorkingBudgetMode::Theory;
  theory.warm_start = 0;
  LinearEnvironment env(inst.spec, inst.mu, inst.theta, 3);
  const auto rec = run_linear(env, inst.spec, theory, 3);
  EXPECT_LE(rec.stats.working_budget, 0.0);
  for (std::size_t t = 1; t < rec.history.size(); ++t) EXPECT_EQ(rec.history[t].action, inst.spec.null_action);
}

TEST(LinearPolicies, HardBudgetAndBonusBound) {
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = positive_instance(4, 3, 3, 2, 400, 15.0 + 3 * rep, 50 + rep);
    for (PolicyKind kind : {PolicyKind::BoxC, PolicyKind::BoxD}) {
      PolicyConfig cfg = linear_cfg(kind);
      cfg.Z = 2.0;
      cfg.eta = 0.05;
      LinearEnvironment env(inst.spec, inst.mu, inst.theta, 70 + rep);
      const auto rec = run_linear(env, inst.spec, cfg, 70 + rep);
      EXPECT_TRUE(within_budget(rec.history, inst.spec.budget));
      EXPECT_LE(rec.stats.played_bonus_sum, rec.stats.bonus_sum_bound);
    }
  }
}

// Ridge coverage on a small instance: violations of
// |r_hat - r| <= gamma |phi|_{X^-1} are rare.
TEST(LinearCoverage, RidgeConfidenceHolds) {
  const double delta = 0.1;
  auto inst = positive_instance(4, 3, 3, 1, 300, 1e9, 91);
  std::size_t checks = 0, misses = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    LinearEnvironment env(inst.spec, inst.mu, inst.theta, seed);
    LinEstimator est(3, 1, 1.0);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(1, 3);
    for (std::size_t t = 0; t < inst.spec.horizon; ++t) {
      est.solve();
      const double g = lin_gamma(static_cast<double>(t), 1.0, delta, 3, 1, 0.9);
      inst.spec.linear_transfer->for_each([&](ActionId a, ContextId x, const Vector& phi) {
        if (a == inst.spec.null_action) return;
        ++checks;
        if (std::abs(phi.dot(est.mu_hat) - env.mean_reward(a, x)) > g * est.design_norm(phi)) ++misses;
      });
      const ContextId x = env.next_context();
      const ActionId a{pick(rng)};
      const auto r = env.play(x, a);
      est.add(&(*inst.spec.linear_transfer)(a, x), r.reward, r.cost);
    }
  }
  EXPECT_LE(static_cast<double>(misses) / static_cast<double>(checks), delta + 0.02);
}
