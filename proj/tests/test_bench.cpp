#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace cbwk;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cbwk_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

LoanInstanceConfig short_loan(std::size_t T) {
  LoanInstanceConfig cfg;
  cfg.horizon = T;
  cfg.budget = 1600.0 * static_cast<double>(T) / 50000.0;
  return cfg;
}

PolicyConfig box_b() {
  PolicyConfig cfg;
  cfg.bonus = BonusSchedule::Log;
  cfg.working_budget = WorkingBudgetMode::Full;
  cfg.explore_scale = 0.1;
  cfg.lambda = 0.0129;
  return cfg;
}

CsvSchema toy_schema() {
  CsvSchema s;
  s.features = {{"risk", 5}, {"amount_level", 5}};
  s.amount_column = "amount";
  s.amount_cap = 100000.0;
  return s;
}

}  // namespace

TEST(LoanInstance, ActionsRewardsAndCosts) {
  const auto inst = gen_loan_instance(LoanInstanceConfig{});
  EXPECT_EQ(inst.spec.num_actions(), 6u);
  EXPECT_EQ(inst.spec.action_labels.front(), "null");
  EXPECT_EQ(inst.spec.num_contexts(), 25u);
  EXPECT_EQ(inst.spec.feature_dim(), 25u);

  LoanInstanceConfig cfg;
  cfg.amount[2] = 50000.0;
  const auto fifty = gen_loan_instance(cfg);
  for (std::size_t x = 0; x < fifty.levels.size(); ++x) {
    if (fifty.levels[x][1] != 3) continue;
    EXPECT_DOUBLE_EQ(fifty.spec.reward(ActionId{1}, ContextId{x}), 0.5);
    const double rate = cfg.standard_rate[static_cast<std::size_t>(fifty.levels[x][0] - 1)];
    const auto& c = fifty.spec.cost(ActionId{2}, ContextId{x});
    EXPECT_DOUBLE_EQ(c(0), 0.2 / 7.0);
    EXPECT_DOUBLE_EQ(c(1), std::min(rate * 50000.0 / 9996.0, 1.0));
  }
}

TEST(LoanInstance, HandEvaluatedScore) {
  const LoanInstanceConfig cfg;
  ASSERT_DOUBLE_EQ(cfg.standard_rate[2], 0.05);
  const ClientLevels client{3, 1, 5, 4, 2};
  const double hand = 0.8177 - 13.1101 * 0.04 + 0.0515 + 0.7093 + 0.2592 - 0.1084 + 0.0102;
  EXPECT_NEAR(loan_score(cfg, client, 0.2), hand, 1e-12);
  EXPECT_NEAR(loan_score(cfg, client, 0.2), 1.2151, 5e-5);
  EXPECT_NEAR(sigmoid(loan_score(cfg, client, 0.2)), 0.7712, 5e-5);
}

TEST(LoanInstance, ScaledFeaturesPreserveProbabilities) {
  const LoanInstanceConfig cfg;
  const auto inst = gen_loan_instance(cfg);
  for (std::size_t x = 0; x < inst.levels.size(); ++x) {
    for (std::size_t k = 0; k < cfg.discounts.size(); ++k) {
      const ActionId a{k + 1};
      EXPECT_NEAR(conversion_probability(inst.spec, inst.theta_star, a, ContextId{x}),
                  sigmoid(loan_score(cfg, inst.levels[x], cfg.discounts[k])), 1e-12);
      EXPECT_LE(inst.spec.transfer(a, ContextId{x}).norm(), 1.0 + 1e-12);
    }
  }
  EXPECT_NEAR(inst.theta_star.norm(), inst.spec.theta_bound, 1e-12);
}

TEST(LoanInstance, CoefficientMismatch) {
  LoanInstanceConfig cfg;
  cfg.level_coefs[0].pop_back();
  try {
    gen_loan_instance(cfg);
    FAIL() << "expected CoefficientMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CoefficientMismatch);
  }
  LoanInstanceConfig fixed;
  fixed.fixed_levels[1] = 5;  // education has 4 levels
  EXPECT_THROW(gen_loan_instance(fixed), Error);
}

TEST(LoanInstance, NoDiscountConversionNearHalf) {
  const LoanInstanceConfig cfg;
  CounterRng rng(2024, Stream::Instance);
  const auto clients = sample_clients(cfg, 100000, rng);
  const double rate = no_discount_conversion(cfg, clients);
  EXPECT_GE(rate, 0.45);
  EXPECT_LE(rate, 0.55);
}

TEST(LoanInstance, OptDependsOnlyOnInstance) {
  const auto cfg = short_loan(400);
  const auto a = gen_loan_instance(cfg);
  const auto b = gen_loan_instance(cfg);
  EXPECT_EQ(opt_value(a.spec, a.theta_star), opt_value(b.spec, b.theta_star));
  const auto runs = run_experiment(a.spec, a.theta_star, box_b(), {1, 2}, std::nullopt, "run", 1);
  const double opt = opt_value(a.spec, a.theta_star);
  const auto s1 = aggregate({runs[0]}, opt, cfg.horizon, cfg.budget);
  const auto s2 = aggregate({runs[1]}, opt, cfg.horizon, cfg.budget);
  EXPECT_NEAR(s1.curves[0].mean.back() + runs[0].history.cumulative_reward(),
              s2.curves[0].mean.back() + runs[1].history.cumulative_reward(), 1e-9);
}

TEST(LoanInstance, ConfigFromJson) {
  const auto cfg = loan_config_from_json(nlohmann::json::parse(
      R"({"horizon": 10000, "marginals": {"risk": [0.2, 0.2, 0.2, 0.2, 0.2]}, "fixed_levels": {"age": 1}})"));
  EXPECT_EQ(cfg.horizon, 10000u);
  EXPECT_DOUBLE_EQ(cfg.budget, 320.0);
  EXPECT_EQ(cfg.fixed_levels[0], 1);
  EXPECT_EQ(cfg.fixed_levels[1], 3);
  EXPECT_EQ(cfg.marginals[0].size(), 5u);
}

TEST(IngestCsv, EmpiricalMeasure) {
  std::istringstream in("risk,amount_level,amount\n1,2,1000\n1,2,3000\n4,5,90000\n");
  const auto res = ingest_csv(in, toy_schema());
  ASSERT_EQ(res.contexts.size(), 2u);
  EXPECT_EQ(res.contexts[0], (std::vector<int>{1, 2}));
  EXPECT_NEAR(res.nu[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(res.nu[1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(res.rows_read, 3u);
  EXPECT_EQ(res.rows_rejected, 0u);
}

TEST(IngestCsv, SchemaAndFiltering) {
  std::istringstream missing("risk,amount\n1,1000\n");
  try {
    ingest_csv(missing, toy_schema());
    FAIL() << "expected SchemaError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SchemaError);
  }

  std::istringstream capped("risk,amount_level,amount\n1,2,1000\n2,5,250000\n3,9,1000\n");
  const auto res = ingest_csv(capped, toy_schema());
  EXPECT_EQ(res.rows_read, 3u);
  EXPECT_EQ(res.rows_rejected, 2u);
  EXPECT_EQ(res.nu, std::vector<double>{1.0});

  std::istringstream all_bad("risk,amount_level,amount\n1,2,500000\n");
  try {
    ingest_csv(all_bad, toy_schema());
    FAIL() << "expected EmptyAfterFiltering";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyAfterFiltering);
  }
}

TEST(RunExperiment, SingleRoundAndDeterminism) {
  const auto inst = gen_loan_instance(short_loan(1));
  const auto one = run_experiment(inst.spec, inst.theta_star, box_b(), {7});
  ASSERT_EQ(one.size(), 1u);
  ASSERT_TRUE(one[0].ok());
  EXPECT_EQ(one[0].history.size(), 1u);

  const auto cfg = short_loan(300);
  const auto loan = gen_loan_instance(cfg);
  const auto dir = scratch_dir("replay");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 1; s <= 10; ++s) seeds.push_back(s);
  run_experiment(loan.spec, loan.theta_star, box_b(), seeds, dir / "a", "run", 1);
  run_experiment(loan.spec, loan.theta_star, box_b(), {3}, dir / "b", "run", 1);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) files += e.is_regular_file() ? 1 : 0;
  EXPECT_EQ(files, 10u);
  EXPECT_EQ(slurp(dir / "a" / "run_seed3.csv"), slurp(dir / "b" / "run_seed3.csv"));
  EXPECT_NE(slurp(dir / "a" / "run_seed3.csv"), slurp(dir / "a" / "run_seed4.csv"));
  fs::remove_all(dir);
}

TEST(RunExperiment, FailuresStayWithTheirSeed) {
  const auto inst = gen_loan_instance(short_loan(50));
  // A parameter outside the declared ball makes every run fail in isolation.
  const Vector far = inst.theta_star * 2.0;
  const auto runs = run_experiment(inst.spec, far, box_b(), {1, 2});
  EXPECT_FALSE(runs[0].ok());
  EXPECT_FALSE(runs[1].ok());
  EXPECT_EQ(runs[1].seed, 2u);
  const auto s = aggregate(runs, 1.0, 50, inst.spec.budget);
  EXPECT_EQ(s.failed_runs, 2u);
  EXPECT_EQ(s.runs, 0u);
}

TEST(Aggregate, StandardErrors) {
  const auto cfg = short_loan(200);
  const auto inst = gen_loan_instance(cfg);
  const double opt = opt_value(inst.spec, inst.theta_star);
  const auto runs = run_experiment(inst.spec, inst.theta_star, box_b(), {5, 5});
  const auto twin = aggregate(runs, opt, cfg.horizon, cfg.budget);
  ASSERT_EQ(twin.curves.size(), 3u);
  for (const auto& c : twin.curves) {
    for (double se : c.se) EXPECT_DOUBLE_EQ(se, 0.0);
  }
  ASSERT_TRUE(twin.final_regret_se.has_value());
  EXPECT_DOUBLE_EQ(*twin.final_regret_se, 0.0);
  EXPECT_DOUBLE_EQ(twin.curves[0].mean[0], 0.0);
  EXPECT_NEAR(twin.curves[0].mean.back(), opt - runs[0].history.cumulative_reward(), 1e-9);

  const auto single = aggregate({runs[0]}, opt, cfg.horizon, cfg.budget);
  EXPECT_FALSE(single.final_regret_se.has_value());
  EXPECT_TRUE(std::isnan(single.curves[1].se[10]));
}

TEST(Aggregate, EmittedRunsRespectBudgetAndBonusBound) {
  const auto cfg = short_loan(1000);
  const auto inst = gen_loan_instance(cfg);
  const double opt = opt_value(inst.spec, inst.theta_star);
  std::vector<RunRecord> all;
  for (PolicyKind kind : {PolicyKind::BoxB, PolicyKind::BoxD}) {
    PolicyConfig pc = box_b();
    pc.kind = kind;
    pc.Z = opt / cfg.budget;
    pc.eta = 0.05;
    const auto runs = run_experiment(inst.spec, inst.theta_star, pc, {1, 2, 3});
    const auto s = aggregate(runs, opt, cfg.horizon, cfg.budget);
    EXPECT_EQ(s.failed_runs, 0u);
    EXPECT_TRUE(s.budget_respected);
    EXPECT_EQ(s.bonus_bound_violations, 0u);
    for (double slack : s.final_slack_mean) EXPECT_LE(slack, 0.0);
  }
}

TEST(EmitPlotData, RowsAndRoundTrip) {
  MetricsSummary s;
  s.runs = 2;
  s.horizon = 100;
  s.opt_value = 12.5;
  s.budget = 3.0;
  s.final_regret_mean = 1.25;
  s.final_regret_se = 0.5;
  s.final_slack_mean = {-0.5, -1.0};
  s.locked_runs = 1;
  s.mean_lock_round = 88.0;
  for (const char* name : {"regret", "cost_slack_1"}) {
    s.curves.push_back({name, std::vector<double>(101, 0.25), std::vector<double>(101, 0.1)});
  }
  const auto dir = scratch_dir("plot");
  emit_plot_data(s, dir, "box_b");
  std::ifstream csv(dir / "box_b_curves.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "t,metric,mean,se");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 200u);

  const auto doc = nlohmann::json::parse(slurp(dir / "box_b_summary.json"));
  EXPECT_EQ(summary_to_json(summary_from_json(doc)).dump(), summary_to_json(s).dump());

  MetricsSummary empty;
  emit_plot_data(empty, dir, "empty");
  EXPECT_EQ(slurp(dir / "empty_curves.csv"), "t,metric,mean,se\n");
  fs::remove_all(dir);
}

TEST(BenchConfig, JsonOverrides) {
  const auto cfg = bench_config_from_json(nlohmann::json::parse(
      R"({"instance": {"horizon": 1000}, "conversion": {"warm_start": 20}, "baseline": {"lambda": 0.5},
          "explore_scales": [0.1], "seeds": [4, 5]})"));
  EXPECT_EQ(cfg.instance.horizon, 1000u);
  EXPECT_EQ(cfg.conversion.warm_start, 20u);
  EXPECT_EQ(cfg.conversion.kind, PolicyKind::BoxB);
  EXPECT_DOUBLE_EQ(*cfg.conversion.lambda, 0.0129);
  EXPECT_DOUBLE_EQ(*cfg.baseline.lambda, 0.5);
  EXPECT_EQ(cfg.baseline.kind, PolicyKind::BoxD);
  EXPECT_EQ(cfg.explore_scales, std::vector<double>{0.1});
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{4, 5}));
}
