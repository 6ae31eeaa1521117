// Command-line front end: instance generation, single-policy runs, the
// explore-scale sweep and standalone LP solves.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbwk/cbwk.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cbwk::Error(cbwk::ErrorKind::IoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw cbwk::Error(cbwk::ErrorKind::SchemaError, path + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw cbwk::Error(cbwk::ErrorKind::IoError, "cannot open " + path.string());
  out << doc.dump(2) << '\n';
}

int cmd_gen_data(const std::string& config, const std::string& out_dir, std::size_t clients, std::uint64_t seed) {
  const auto cfg = config.empty() ? cbwk::LoanInstanceConfig{} : cbwk::loan_config_from_json(read_json(config));
  const auto inst = cbwk::gen_loan_instance(cfg);
  fs::create_directories(out_dir);
  write_json(fs::path(out_dir) / "spec.json", cbwk::to_json(inst.spec));
  json theta;
  theta["theta_star"] = cbwk::detail::from_vector(inst.theta_star);
  theta["feature_scale"] = inst.feature_scale;
  theta["linear_scale"] = inst.linear_scale;
  write_json(fs::path(out_dir) / "theta.json", theta);

  json info;
  info["contexts"] = inst.spec.num_contexts();
  info["actions"] = inst.spec.num_actions();
  info["feature_dim"] = inst.spec.feature_dim();
  info["theta_bound"] = inst.spec.theta_bound;
  info["opt_value"] = cbwk::opt_value(inst.spec, inst.theta_star);
  if (clients > 0) {
    std::mt19937_64 rng(seed);
    info["no_discount_conversion"] = cbwk::no_discount_conversion(cfg, cbwk::sample_clients(cfg, clients, rng));
  }
  std::cout << info.dump(2) << '\n';
  return 0;
}

cbwk::Vector load_theta(const std::string& path) {
  const json doc = read_json(path);
  return cbwk::detail::to_vector(doc.is_array() ? doc : cbwk::detail::require(doc, "theta_star"));
}

// The run config either embeds an instance config ("instance") or points at
// gen-data output ("spec_file", "theta_file"); "policy" holds the policy keys.
int cmd_simulate(const std::string& config_path, std::string spec_path, std::string theta_path,
                 const std::string& policy_path, const std::vector<std::uint64_t>& seeds,
                 const std::string& out_dir) {
  const json config = config_path.empty() ? json::object() : read_json(config_path);
  if (spec_path.empty()) spec_path = config.value("spec_file", "");
  if (theta_path.empty()) theta_path = config.value("theta_file", "");
  cbwk::ProblemSpec spec;
  cbwk::Vector theta;
  if (!spec_path.empty()) {
    if (theta_path.empty()) throw cbwk::Error(cbwk::ErrorKind::MissingField, "a spec file needs a theta file");
    spec = cbwk::validate_spec(read_json(spec_path));
    theta = load_theta(theta_path);
  } else {
    auto inst = cbwk::gen_loan_instance(cbwk::loan_config_from_json(config.value("instance", json::object())));
    spec = std::move(inst.spec);
    theta = std::move(inst.theta_star);
  }
  const auto cfg = cbwk::policy_config_from_json(policy_path.empty() ? config.value("policy", json::object())
                                                                     : read_json(policy_path));
  std::optional<fs::path> dir;
  if (!out_dir.empty()) {
    dir = out_dir;
    fs::create_directories(*dir);
  }
  const auto runs = cbwk::run_experiment(spec, theta, cfg, seeds, dir, cbwk::to_string(cfg.kind));
  const double opt = cbwk::opt_value(spec, theta);
  const auto summary = cbwk::aggregate(runs, opt, spec.horizon, spec.budget);
  if (dir) cbwk::emit_plot_data(summary, *dir, cbwk::to_string(cfg.kind));

  json report = cbwk::summary_to_json(summary);
  json per_seed = json::array();
  for (const auto& r : runs) {
    json j;
    j["seed"] = r.seed;
    if (r.ok()) {
      j["reward"] = r.history.cumulative_reward();
      j["cost"] = cbwk::detail::from_vector(r.history.cumulative_cost());
      j["lock_round"] = r.stats.lock_round ? json(*r.stats.lock_round) : json(nullptr);
      j["played_bonus_sum"] = r.stats.played_bonus_sum;
      j["bonus_sum_bound"] = r.stats.bonus_sum_bound;
    } else {
      j["error"] = *r.error;
    }
    per_seed.push_back(std::move(j));
  }
  report["seeds"] = std::move(per_seed);
  std::cout << report.dump(2) << '\n';
  return summary.failed_runs == 0 ? 0 : 1;
}

int cmd_bench(const std::string& config, const std::string& out_dir) {
  const auto cfg = config.empty() ? cbwk::BenchConfig{} : cbwk::bench_config_from_json(read_json(config));
  std::optional<fs::path> dir;
  if (!out_dir.empty()) dir = out_dir;
  const auto result = cbwk::run_bench(cfg, dir);
  const json doc = cbwk::to_json(result);
  if (dir) write_json(*dir / "bench_result.json", doc);
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_lp_solve(const std::string& input, double kkt_tol) {
  const auto lp = cbwk::lp_from_json(read_json(input));
  const auto sol = cbwk::solve_lp(lp);
  json doc = cbwk::to_json(sol);
  const auto report = cbwk::check_kkt(lp, sol, kkt_tol);
  doc["kkt"] = cbwk::to_json(report);
  std::cout << doc.dump(2) << '\n';
  return report.pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual bandits with knapsacks under a logistic conversion model"};
  app.require_subcommand(1);

  std::string gen_config, gen_out = "data";
  std::size_t gen_clients = 0;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("gen-data", "Build the loan-discount instance and its true parameter");
  gen->add_option("--config", gen_config, "Instance config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--clients", gen_clients, "Monte-Carlo clients for the no-discount conversion check");
  gen->add_option("--seed", gen_seed, "Seed for the Monte-Carlo check")->capture_default_str();

  std::string sim_config, sim_spec, sim_theta, sim_policy, sim_out;
  std::vector<std::uint64_t> sim_seeds{1};
  auto* sim = app.add_subcommand("simulate", "Run one policy over several seeds");
  sim->add_option("--config", sim_config, "Run config JSON (instance or spec/theta files, plus policy)")
      ->check(CLI::ExistingFile);
  sim->add_option("--spec", sim_spec, "Problem spec JSON, overrides the config")->check(CLI::ExistingFile);
  sim->add_option("--theta", sim_theta, "True parameter JSON, overrides the config")->check(CLI::ExistingFile);
  sim->add_option("--policy", sim_policy, "Policy config JSON, overrides the config")->check(CLI::ExistingFile);
  sim->add_option("--seeds", sim_seeds, "Seeds")->delimiter(',')->capture_default_str();
  sim->add_option("--out", sim_out, "Directory for per-seed CSVs and plot data");

  std::string bench_config, bench_out;
  auto* bench = app.add_subcommand("bench", "Explore-scale sweep: conversion policy vs. primal-dual baseline");
  bench->add_option("--config", bench_config, "Bench config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  bench->add_option("--out", bench_out, "Directory for curves and the result JSON");

  std::string lp_input;
  double lp_tol = 1e-8;
  auto* lp = app.add_subcommand("lp-solve", "Solve a static program and check its optimality certificate");
  lp->add_option("input", lp_input, "LP JSON")->required()->check(CLI::ExistingFile);
  lp->add_option("--tol", lp_tol, "KKT tolerance")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gen_config, gen_out, gen_clients, gen_seed);
    if (*sim) return cmd_simulate(sim_config, sim_spec, sim_theta, sim_policy, sim_seeds, sim_out);
    if (*bench) return cmd_bench(bench_config, bench_out);
    if (*lp) return cmd_lp_solve(lp_input, lp_tol);
  } catch (const cbwk::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
