#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace cbwk;

namespace {

// X = {x0}, A = {null, a1}, g(a1) = 1, k(a1) = 0.5, T = 10.
LPProblem one_variable(double budget) {
  ActionContextTable<double> gain(2, 1, 0.0);
  gain(ActionId{1}, ContextId{0}) = 1.0;
  ActionContextTable<Vector> cost(2, 1, Vector::Zero(1));
  cost(ActionId{1}, ContextId{0}) = Vector::Constant(1, 0.5);
  return build_lp({1.0}, gain, cost, budget, 10.0, ActionId{0});
}

LPProblem random_lp(std::mt19937_64& rng, std::size_t na, std::size_t nx, std::size_t d) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ActionContextTable<double> gain(na, nx, 0.0);
  ActionContextTable<Vector> cost(na, nx, Vector::Zero(static_cast<Eigen::Index>(d)));
  std::vector<double> nu(nx);
  double total = 0.0;
  for (auto& w : nu) total += (w = 0.1 + unif(rng));
  for (auto& w : nu) w /= total;
  for (std::size_t a = 1; a < na; ++a) {
    for (std::size_t x = 0; x < nx; ++x) {
      gain(ActionId{a}, ContextId{x}) = unif(rng);
      Vector k(static_cast<Eigen::Index>(d));
      for (auto& v : k) v = unif(rng);
      cost(ActionId{a}, ContextId{x}) = k;
    }
  }
  const double T = 10.0 + 90.0 * unif(rng);
  const double budget = T * (0.05 + 0.6 * unif(rng));
  return build_lp(std::move(nu), std::move(gain), std::move(cost), budget, T, ActionId{0});
}

}  // namespace

TEST(BuildLp, Dimensions) {
  ActionContextTable<double> gain(3, 2, 0.0);
  ActionContextTable<Vector> cost(3, 2, Vector::Zero(2));
  const auto lp = build_lp({0.5, 0.5}, gain, cost, 1.0, 5.0, ActionId{0});
  EXPECT_EQ(lp.num_variables(), 6u);
  EXPECT_EQ(lp.num_rows(), 2u + 2u);
  EXPECT_THROW(build_lp({1.0}, gain, cost, 1.0, 5.0, ActionId{0}), Error);
}

TEST(SolveLp, DegenerateBudgetFallsBackToNull) {
  for (double b : {0.0, -3.0}) {
    const auto sol = solve_lp(one_variable(b));
    EXPECT_EQ(sol.status, LPStatus::DegenerateFallback);
    EXPECT_DOUBLE_EQ(sol.pi(ActionId{0}, ContextId{0}), 1.0);
    EXPECT_DOUBLE_EQ(sol.pi(ActionId{1}, ContextId{0}), 0.0);
    EXPECT_DOUBLE_EQ(sol.value, 0.0);
  }
}

TEST(SolveLp, ZeroGainsGiveAllNull) {
  ActionContextTable<double> gain(3, 2, 0.0);
  ActionContextTable<Vector> cost(3, 2, Vector::Constant(1, 0.2));
  const auto sol = solve_lp(build_lp({0.3, 0.7}, gain, cost, 1.0, 5.0, ActionId{0}));
  for (std::size_t x = 0; x < 2; ++x) EXPECT_DOUBLE_EQ(sol.pi(ActionId{0}, ContextId{x}), 1.0);
}

TEST(SolveLp, OneVariableInstance) {
  const auto lp = one_variable(2.0);
  const auto sol = solve_lp(lp);
  EXPECT_EQ(sol.status, LPStatus::Optimal);
  EXPECT_NEAR(sol.pi(ActionId{1}, ContextId{0}), 0.4, 1e-12);
  EXPECT_NEAR(sol.pi(ActionId{0}, ContextId{0}), 0.6, 1e-12);
  EXPECT_NEAR(sol.value, 4.0, 1e-12);
  EXPECT_NEAR(sol.beta_budg(0), 2.0, 1e-12);
  EXPECT_NEAR(sol.beta_psum[0], 0.0, 1e-12);

  // The budget dual is the marginal value of budget.
  const double h = 1e-4;
  const double slope = (solve_lp(one_variable(2.0 + h)).value - solve_lp(one_variable(2.0 - h)).value) / (2 * h);
  EXPECT_NEAR(sol.beta_budg(0), slope, 1e-8);
}

TEST(SolveLp, SlackBudgetPicksArgmaxGain) {
  std::mt19937_64 rng(5);
  auto lp = random_lp(rng, 4, 3, 2);
  lp.budget = lp.horizon;  // k <= 1, so T max k <= budget
  const auto sol = solve_lp(lp);
  for (std::size_t x = 0; x < 3; ++x) {
    std::size_t best = 1;
    for (std::size_t a = 2; a < 4; ++a) {
      if (lp.gain(ActionId{a}, ContextId{x}) > lp.gain(ActionId{best}, ContextId{x})) best = a;
    }
    EXPECT_NEAR(sol.pi(ActionId{best}, ContextId{x}), 1.0, 1e-12);
  }
  EXPECT_TRUE(sol.beta_budg.isZero(1e-12));
}

TEST(Kkt, OneVariableCertificate) {
  const auto lp = one_variable(2.0);
  const auto sol = solve_lp(lp);
  const auto rep = check_kkt(lp, sol, 1e-10);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.max_residual(), 1e-10);

  auto bad = sol;
  bad.pi(ActionId{1}, ContextId{0}) = 0.5;
  bad.pi(ActionId{0}, ContextId{0}) = 0.5;
  const auto bad_rep = check_kkt(lp, bad, 1e-10);
  EXPECT_GT(bad_rep.budget_slackness, 0.0);
  EXPECT_FALSE(bad_rep.pass);
}

TEST(Kkt, AllNullOnSlackInstanceViolatesStationarity) {
  auto lp = one_variable(100.0);
  LPSolution null_sol;
  null_sol.pi = ActionContextTable<double>(2, 1, 0.0);
  null_sol.pi(ActionId{0}, ContextId{0}) = 1.0;
  null_sol.beta_budg = Vector::Zero(1);
  null_sol.beta_psum = {0.0};
  null_sol.beta_ppos = ActionContextTable<double>(2, 1, 0.0);
  const auto rep = check_kkt(lp, null_sol, 1e-10);
  EXPECT_NEAR(rep.stationarity, 10.0 * 1.0 * 1.0, 1e-12);
}

TEST(OptOracle, Examples) {
  EXPECT_NEAR(opt_oracle(one_variable(2.0), 0.01), 4.0, 1e-9);
  EXPECT_NEAR(opt_oracle(one_variable(100.0), 0.01), solve_lp(one_variable(100.0)).value, 1e-12);

  ActionContextTable<double> gain(6, 1, 0.5);
  gain(ActionId{0}, ContextId{0}) = 0.0;
  ActionContextTable<Vector> cost(6, 1, Vector::Constant(1, 0.1));
  const auto big = build_lp({1.0}, gain, cost, 1.0, 5.0, ActionId{0});
  try {
    opt_oracle(big, 0.01);
    FAIL() << "expected TooLarge";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooLarge);
  }
}

TEST(SolveLp, AgreesWithGridOracle) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t nx = 1 + rep % 2;
    const std::size_t na = nx == 1 ? 2 + rep % 4 : 2 + rep % 2;
    const auto lp = random_lp(rng, na, nx, 1 + rep % 2);
    const auto sol = solve_lp(lp);
    const double grid = opt_oracle(lp, 0.02);
    double gmax = 0.0;
    for (double g : lp.gain) gmax = std::max(gmax, g);
    const double vars = static_cast<double>(nx * (na - 1));
    EXPECT_GE(sol.value, grid - 1e-9);
    EXPECT_LE(sol.value - grid, lp.horizon * 0.02 * gmax * vars + 1e-9);
    EXPECT_LE(check_kkt(lp, sol, 1e-8).max_residual(), 1e-8);
  }
}

TEST(SolveLp, CertificatesOnLargerInstances) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 30; ++rep) {
    const auto lp = random_lp(rng, 6, 25, 2);
    const auto sol = solve_lp(lp);
    const auto rep_kkt = check_kkt(lp, sol, 1e-8);
    EXPECT_TRUE(rep_kkt.pass) << "max residual " << rep_kkt.max_residual();
    EXPECT_NEAR(policy_value(lp, sol.pi), sol.value, 1e-9 * std::max(1.0, sol.value));
    EXPECT_TRUE((expected_total_cost(lp, sol.pi).array() <= lp.budget + 1e-9).all());
  }
}

TEST(SolveLp, ValueMonotoneInBudget) {
  std::mt19937_64 rng(13);
  auto lp = random_lp(rng, 4, 5, 2);
  double prev = -1.0;
  for (double frac : {0.01, 0.05, 0.1, 0.3, 0.6, 1.0}) {
    lp.budget = frac * lp.horizon;
    const double v = solve_lp(lp).value;
    EXPECT_GE(v, prev - 1e-12);
    prev = v;
  }
}

TEST(LpJson, RoundTripIsExact) {
  std::mt19937_64 rng(14);
  const auto lp = random_lp(rng, 3, 4, 2);
  const auto back = lp_from_json(nlohmann::json::parse(to_json(lp).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(lp).dump());
  const auto sol = solve_lp(back);
  const auto doc = nlohmann::json::parse(to_json(sol).dump());
  EXPECT_EQ(doc.at("value").get<double>(), sol.value);
}
