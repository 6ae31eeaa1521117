#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cbwk/environment.hpp"
#include "cbwk/error.hpp"
#include "cbwk/lp.hpp"
#include "cbwk/policy.hpp"
#include "cbwk/policy_conversion.hpp"
#include "cbwk/problem.hpp"
#include "cbwk/rng.hpp"
#include "cbwk/runner.hpp"

namespace cbwk {

// ---------------------------------------------------------------------------
// Loan-discount instance

inline constexpr std::size_t kLoanFeatures = 5;  // risk, amount, age, education, marital

struct LoanInstanceConfig {
  std::vector<double> discounts{0.1, 0.2, 0.35, 0.55, 0.8};
  double intercept = 0.8177;
  double final_rate_coef = -13.1101;
  double standard_rate_coef = 0.0;
  /// Per-level coefficients of risk, amount level, age level, education, marital status.
  std::array<std::vector<double>, kLoanFeatures> level_coefs{{
      {-0.3045, -0.0383, 0.0515, 0.1261, 0.1636},
      {0.7093, 0.4703, 0.1113, -0.2748, -1.0179},
      {-0.1837, -0.1392, -0.0476, 0.1096, 0.2592},
      {0.1836, 0.0126, -0.0896, -0.1084},
      {0.0799, 0.0102, -0.0918},
  }};
  /// Representative standard interest rate per risk level.
  std::vector<double> standard_rate{0.01, 0.025, 0.05, 0.08, 0.13};
  /// Representative requested amount per amount level (midpoints of the cutoffs).
  std::vector<double> amount{5000.0, 15000.0, 28000.0, 45000.0, 77000.0};
  /// Client-feature marginals; empty entries mean uniform.
  std::array<std::vector<double>, kLoanFeatures> marginals{};
  double norm_amount = 1e5;
  double norm_discount = 7.0;
  double norm_rate_amount = 9996.0;
  /// false: contexts are risk x amount with the other features fixed.
  bool full_grid = false;
  /// 1-based levels of age, education and marital status in the restricted grid.
  std::array<int, 3> fixed_levels{3, 3, 2};
  std::size_t horizon = 5000;
  double budget = 160.0;
};

/// Levels are 1-based, in the order risk, amount, age, education, marital.
using ClientLevels = std::array<int, kLoanFeatures>;

struct LoanInstance {
  ProblemSpec spec;
  Vector theta_star;
  double feature_scale = 1.0;
  double linear_scale = 1.0;
  std::vector<ClientLevels> levels;  // per context
};

namespace detail {

inline std::vector<double> marginal(const LoanInstanceConfig& cfg, std::size_t f) {
  const std::size_t n = cfg.level_coefs[f].size();
  if (cfg.marginals[f].empty()) return std::vector<double>(n, 1.0 / static_cast<double>(n));
  return cfg.marginals[f];
}

inline void check_loan_config(const LoanInstanceConfig& cfg) {
  if (cfg.level_coefs[0].size() != cfg.standard_rate.size()) {
    throw Error(ErrorKind::CoefficientMismatch, "risk coefficients and standard rates disagree in level count");
  }
  if (cfg.level_coefs[1].size() != cfg.amount.size()) {
    throw Error(ErrorKind::CoefficientMismatch, "amount coefficients and representative amounts disagree");
  }
  for (std::size_t f = 0; f < kLoanFeatures; ++f) {
    if (cfg.level_coefs[f].empty()) throw Error(ErrorKind::CoefficientMismatch, "feature without levels");
    if (!cfg.marginals[f].empty()) {
      if (cfg.marginals[f].size() != cfg.level_coefs[f].size()) {
        throw Error(ErrorKind::CoefficientMismatch, "marginal and coefficient level counts disagree");
      }
      double total = 0.0;
      for (double p : cfg.marginals[f]) {
        if (!(p >= 0.0)) throw Error(ErrorKind::RangeViolation, "negative marginal probability");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::RangeViolation, "marginal does not sum to 1");
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const int level = cfg.fixed_levels[k];
    if (level < 1 || static_cast<std::size_t>(level) > cfg.level_coefs[k + 2].size()) {
      throw Error(ErrorKind::CoefficientMismatch, "fixed level outside the coefficient table");
    }
  }
  if (cfg.discounts.empty()) throw Error(ErrorKind::RangeViolation, "no discount levels");
  for (double a : cfg.discounts) {
    if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorKind::RangeViolation, "discounts must lie in [0,1]");
  }
}

inline std::size_t raw_feature_dim(const LoanInstanceConfig& cfg) {
  std::size_t m = 3;
  for (const auto& c : cfg.level_coefs) m += c.size();
  return m;
}

}  // namespace detail

/// Unscaled conversion features [1, final rate, standard rate, one-hot levels].
inline Vector loan_features_raw(const LoanInstanceConfig& cfg, const ClientLevels& lv, double discount) {
  Vector phi = Vector::Zero(static_cast<Eigen::Index>(detail::raw_feature_dim(cfg)));
  const double rate = cfg.standard_rate[static_cast<std::size_t>(lv[0] - 1)];
  phi(0) = 1.0;
  phi(1) = rate * (1.0 - discount);
  phi(2) = rate;
  Eigen::Index offset = 3;
  for (std::size_t f = 0; f < kLoanFeatures; ++f) {
    phi(offset + lv[f] - 1) = 1.0;
    offset += static_cast<Eigen::Index>(cfg.level_coefs[f].size());
  }
  return phi;
}

inline Vector loan_theta_raw(const LoanInstanceConfig& cfg) {
  Vector theta(static_cast<Eigen::Index>(detail::raw_feature_dim(cfg)));
  theta(0) = cfg.intercept;
  theta(1) = cfg.final_rate_coef;
  theta(2) = cfg.standard_rate_coef;
  Eigen::Index offset = 3;
  for (const auto& coefs : cfg.level_coefs) {
    for (double c : coefs) theta(offset++) = c;
  }
  return theta;
}

/// Linear score of the conversion model for one client and discount.
inline double loan_score(const LoanInstanceConfig& cfg, const ClientLevels& lv, double discount) {
  return loan_features_raw(cfg, lv, discount).dot(loan_theta_raw(cfg));
}

/// Builds the problem and the true parameter. Deterministic: the context
/// grid and its weights follow from the configuration alone.
inline LoanInstance gen_loan_instance(const LoanInstanceConfig& cfg) {
  detail::check_loan_config(cfg);
  LoanInstance inst;
  const std::size_t n_risk = cfg.level_coefs[0].size();
  const std::size_t n_amount = cfg.level_coefs[1].size();
  std::vector<double> weights;

  auto add_context = [&](const ClientLevels& lv, double w) {
    inst.levels.push_back(lv);
    weights.push_back(w);
  };
  const auto p_risk = detail::marginal(cfg, 0);
  const auto p_amount = detail::marginal(cfg, 1);
  if (cfg.full_grid) {
    const auto p_age = detail::marginal(cfg, 2);
    const auto p_edu = detail::marginal(cfg, 3);
    const auto p_mar = detail::marginal(cfg, 4);
    for (std::size_t r = 0; r < n_risk; ++r)
      for (std::size_t am = 0; am < n_amount; ++am)
        for (std::size_t ag = 0; ag < p_age.size(); ++ag)
          for (std::size_t e = 0; e < p_edu.size(); ++e)
            for (std::size_t ms = 0; ms < p_mar.size(); ++ms) {
              add_context({int(r + 1), int(am + 1), int(ag + 1), int(e + 1), int(ms + 1)},
                          p_risk[r] * p_amount[am] * p_age[ag] * p_edu[e] * p_mar[ms]);
            }
  } else {
    for (std::size_t r = 0; r < n_risk; ++r)
      for (std::size_t am = 0; am < n_amount; ++am) {
        add_context({int(r + 1), int(am + 1), cfg.fixed_levels[0], cfg.fixed_levels[1], cfg.fixed_levels[2]},
                    p_risk[r] * p_amount[am]);
      }
  }
  double total = 0.0;
  for (double w : weights) total += w;
  for (double& w : weights) w /= total;

  const std::size_t na = cfg.discounts.size() + 1;
  const std::size_t nx = inst.levels.size();
  ProblemSpec& spec = inst.spec;
  spec.action_labels.push_back("null");
  for (double a : cfg.discounts) {
    std::ostringstream label;
    label << a;
    spec.action_labels.push_back(label.str());
  }
  spec.null_action = ActionId{0};
  spec.horizon = cfg.horizon;
  spec.budget = cfg.budget;
  spec.context_weights = weights;

  const std::size_t m = detail::raw_feature_dim(cfg);
  const auto mi = static_cast<Eigen::Index>(m);
  spec.transfer = ActionContextTable<Vector>(na, nx, Vector::Zero(mi));
  spec.reward = ActionContextTable<double>(na, nx, 0.0);
  spec.cost = ActionContextTable<Vector>(na, nx, Vector::Zero(2));
  ActionContextTable<Vector> linear(na, nx, Vector::Zero(mi + 3));

  double max_norm = 0.0;
  double max_linear_norm = 0.0;
  for (std::size_t x = 0; x < nx; ++x) {
    const ClientLevels& lv = inst.levels[x];
    const double rate = cfg.standard_rate[static_cast<std::size_t>(lv[0] - 1)];
    const double am = cfg.amount[static_cast<std::size_t>(lv[1] - 1)];
    Vector ctx(7);
    ctx << lv[0], lv[1], lv[2], lv[3], lv[4], rate, am;
    spec.contexts.push_back(ctx);
    for (std::size_t k = 0; k < cfg.discounts.size(); ++k) {
      const ActionId a{k + 1};
      const double disc = cfg.discounts[k];
      Vector phi = loan_features_raw(cfg, lv, disc);
      Vector lin(mi + 3);
      lin << phi, disc, am / cfg.norm_amount, std::min(rate * am / cfg.norm_rate_amount, 1.0);
      max_norm = std::max(max_norm, phi.norm());
      max_linear_norm = std::max(max_linear_norm, lin.norm());
      spec.transfer(a, ContextId{x}) = std::move(phi);
      linear(a, ContextId{x}) = std::move(lin);
      spec.reward(a, ContextId{x}) = am / cfg.norm_amount;
      Vector c(2);
      c << disc / cfg.norm_discount, std::min(rate * am / cfg.norm_rate_amount, 1.0);
      spec.cost(a, ContextId{x}) = c;
    }
  }
  for (auto& phi : spec.transfer) phi /= max_norm;
  for (auto& phi : linear) phi /= max_linear_norm;
  spec.linear_transfer = std::move(linear);
  inst.feature_scale = max_norm;
  inst.linear_scale = max_linear_norm;
  inst.theta_star = loan_theta_raw(cfg) * max_norm;
  spec.theta_bound = inst.theta_star.norm();
  check_invariants(spec);
  return inst;
}

/// Draws client feature levels from the configured marginals.
template <class Urbg>
std::vector<ClientLevels> sample_clients(const LoanInstanceConfig& cfg, std::size_t n, Urbg& rng) {
  std::array<std::vector<double>, kLoanFeatures> p;
  for (std::size_t f = 0; f < kLoanFeatures; ++f) p[f] = detail::marginal(cfg, f);
  std::vector<ClientLevels> out(n);
  for (auto& client : out) {
    for (std::size_t f = 0; f < kLoanFeatures; ++f) {
      const double u = uniform01(rng);
      double cumulative = 0.0;
      int level = static_cast<int>(p[f].size());
      for (std::size_t k = 0; k < p[f].size(); ++k) {
        cumulative += p[f][k];
        if (u < cumulative) {
          level = static_cast<int>(k + 1);
          break;
        }
      }
      client[f] = level;
    }
  }
  return out;
}

/// Mean conversion probability when no discount is offered.
inline double no_discount_conversion(const LoanInstanceConfig& cfg, const std::vector<ClientLevels>& clients) {
  double total = 0.0;
  for (const auto& c : clients) total += sigmoid(loan_score(cfg, c, 0.0));
  return clients.empty() ? 0.0 : total / static_cast<double>(clients.size());
}

inline LoanInstanceConfig loan_config_from_json(const nlohmann::json& doc) {
  LoanInstanceConfig cfg;
  if (doc.is_null()) return cfg;
  cfg.discounts = doc.value("discounts", cfg.discounts);
  cfg.intercept = doc.value("intercept", cfg.intercept);
  cfg.final_rate_coef = doc.value("final_rate_coef", cfg.final_rate_coef);
  cfg.standard_rate_coef = doc.value("standard_rate_coef", cfg.standard_rate_coef);
  static const char* names[kLoanFeatures] = {"risk", "amount", "age", "education", "marital"};
  if (doc.contains("level_coefs")) {
    for (std::size_t f = 0; f < kLoanFeatures; ++f) {
      if (doc["level_coefs"].contains(names[f])) cfg.level_coefs[f] = doc["level_coefs"][names[f]].get<std::vector<double>>();
    }
  }
  if (doc.contains("marginals")) {
    for (std::size_t f = 0; f < kLoanFeatures; ++f) {
      if (doc["marginals"].contains(names[f])) cfg.marginals[f] = doc["marginals"][names[f]].get<std::vector<double>>();
    }
  }
  cfg.standard_rate = doc.value("standard_rate", cfg.standard_rate);
  cfg.amount = doc.value("amount", cfg.amount);
  cfg.norm_amount = doc.value("norm_amount", cfg.norm_amount);
  cfg.norm_discount = doc.value("norm_discount", cfg.norm_discount);
  cfg.norm_rate_amount = doc.value("norm_rate_amount", cfg.norm_rate_amount);
  cfg.full_grid = doc.value("full_grid", cfg.full_grid);
  if (doc.contains("fixed_levels")) {
    const auto& fl = doc["fixed_levels"];
    cfg.fixed_levels = {fl.value("age", cfg.fixed_levels[0]), fl.value("education", cfg.fixed_levels[1]),
                        fl.value("marital", cfg.fixed_levels[2])};
  }
  cfg.horizon = doc.value("horizon", cfg.horizon);
  if (doc.contains("budget")) {
    cfg.budget = doc["budget"].get<double>();
  } else if (doc.contains("budget_per_50000")) {
    cfg.budget = doc["budget_per_50000"].get<double>() * static_cast<double>(cfg.horizon) / 50000.0;
  } else {
    cfg.budget = 1600.0 * static_cast<double>(cfg.horizon) / 50000.0;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvColumn {
  std::string name;
  int levels = 0;  // accepted integer values 1..levels
};

struct CsvSchema {
  std::vector<CsvColumn> features;
  std::optional<std::string> amount_column;
  double amount_cap = std::numeric_limits<double>::infinity();
};

struct IngestResult {
  std::vector<std::vector<int>> contexts;  // distinct level tuples, first-seen order
  std::vector<double> nu;
  std::size_t rows_read = 0;
  std::size_t rows_rejected = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r\"");
    const auto last = cell.find_last_not_of(" \t\r\"");
    cells.push_back(first == std::string::npos ? std::string() : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::optional<double> parse_number(const std::string& text) {
  if (text.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Maps rows to discrete contexts and the empirical context measure. Rows with
/// unparsable or out-of-range levels, or an amount above the cap, are dropped
/// and counted.
inline IngestResult ingest_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::SchemaError, "empty CSV");
  const auto header = detail::split_csv_line(line);
  auto find = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::SchemaError, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> cols;
  for (const auto& c : schema.features) cols.push_back(find(c.name));
  std::optional<std::size_t> amount_col;
  if (schema.amount_column) amount_col = find(*schema.amount_column);

  IngestResult res;
  std::map<std::vector<int>, std::size_t> index;
  std::vector<std::size_t> counts;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++res.rows_read;
    const auto cells = detail::split_csv_line(line);
    bool ok = cells.size() >= header.size();
    std::vector<int> key;
    for (std::size_t k = 0; ok && k < cols.size(); ++k) {
      const auto v = detail::parse_number(cells[cols[k]]);
      ok = v && *v == std::floor(*v) && *v >= 1.0 && *v <= schema.features[k].levels;
      if (ok) key.push_back(static_cast<int>(*v));
    }
    if (ok && amount_col) {
      const auto v = detail::parse_number(cells[*amount_col]);
      ok = v && *v >= 0.0 && *v <= schema.amount_cap;
    }
    if (!ok) {
      ++res.rows_rejected;
      continue;
    }
    const auto [it, inserted] = index.emplace(key, res.contexts.size());
    if (inserted) {
      res.contexts.push_back(key);
      counts.push_back(0);
    }
    ++counts[it->second];
  }
  const std::size_t kept = res.rows_read - res.rows_rejected;
  if (kept == 0) throw Error(ErrorKind::EmptyAfterFiltering, "no row survived the range checks");
  for (std::size_t c : counts) res.nu.push_back(static_cast<double>(c) / static_cast<double>(kept));
  return res;
}

inline IngestResult ingest_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  return ingest_csv(in, schema);
}

// ---------------------------------------------------------------------------
// Experiments

/// One run per seed; a failing seed records its error without stopping the
/// others. When `out_dir` is set each run is also written to
/// `<out_dir>/<stem>_seed<k>.csv`.
inline std::vector<RunRecord> run_experiment(const ProblemSpec& spec, const Vector& theta_star,
                                             const PolicyConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                             const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                             const std::string& stem = "run", unsigned threads = 0) {
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + out_dir->string());
  }
  std::vector<RunRecord> runs(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        runs[i] = simulate(spec, theta_star, cfg, seeds[i]);
        if (out_dir) {
          write_run_csv((*out_dir / (stem + "_seed" + std::to_string(seeds[i]) + ".csv")).string(), runs[i]);
        }
      } catch (const std::exception& e) {
        runs[i] = RunRecord{};
        runs[i].seed = seeds[i];
        runs[i].error = e.what();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(seeds.size(), 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return runs;
}

struct Curve {
  std::string metric;
  std::vector<double> mean;  // index t = 0..T
  std::vector<double> se;    // NaN with fewer than two runs
};

struct MetricsSummary {
  std::size_t runs = 0;
  std::size_t horizon = 0;
  double opt_value = 0.0;
  double budget = 0.0;
  std::vector<Curve> curves;
  double final_regret_mean = 0.0;
  std::optional<double> final_regret_se;
  std::vector<double> final_slack_mean;
  std::size_t locked_runs = 0;
  std::optional<double> mean_lock_round;
  bool budget_respected = true;
  std::size_t bonus_bound_violations = 0;
  std::size_t failed_runs = 0;
};

namespace detail {

struct MeanSe {
  double mean = 0.0;
  std::optional<double> se;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  if (v.empty()) return out;
  double s = 0.0;
  for (double x : v) s += x;
  out.mean = s / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return out;
}

}  // namespace detail

/// Mean and standard-error curves of partial regret t OPT/T - cum_reward_t and
/// of the cost slack cum_cost_i(t) - t B/T.
inline MetricsSummary aggregate(const std::vector<RunRecord>& all_runs, double opt_value, std::size_t horizon,
                                double budget) {
  std::vector<const RunRecord*> runs;
  MetricsSummary s;
  for (const auto& r : all_runs) {
    if (r.ok()) {
      runs.push_back(&r);
    } else {
      ++s.failed_runs;
    }
  }
  s.runs = runs.size();
  s.horizon = horizon;
  s.opt_value = opt_value;
  s.budget = budget;
  if (runs.empty()) return s;
  const std::size_t d = runs.front()->history.cost_dim();
  const double T = static_cast<double>(horizon);

  std::vector<std::string> names{"regret"};
  for (std::size_t i = 1; i <= d; ++i) names.push_back("cost_slack_" + std::to_string(i));
  // values[metric][run] running totals
  std::vector<std::vector<double>> level(names.size(), std::vector<double>(runs.size(), 0.0));
  for (const auto& name : names) {
    s.curves.push_back({name, std::vector<double>(horizon + 1, 0.0), std::vector<double>(horizon + 1, 0.0)});
  }
  std::vector<double> cum_reward(runs.size(), 0.0);
  std::vector<Vector> cum_cost(runs.size(), Vector::Zero(static_cast<Eigen::Index>(d)));
  std::vector<double> sample(runs.size());
  for (std::size_t t = 0; t <= horizon; ++t) {
    for (std::size_t k = 0; k < runs.size(); ++k) {
      if (t >= 1 && t - 1 < runs[k]->history.size()) {
        const auto& r = runs[k]->history[t - 1];
        cum_reward[k] += r.reward;
        cum_cost[k] += r.cost;
      }
    }
    const double tt = static_cast<double>(t);
    for (std::size_t metric = 0; metric < names.size(); ++metric) {
      for (std::size_t k = 0; k < runs.size(); ++k) {
        sample[k] = metric == 0 ? tt * opt_value / T - cum_reward[k]
                                : cum_cost[k](static_cast<Eigen::Index>(metric - 1)) - tt * budget / T;
      }
      const auto ms = detail::mean_se(sample);
      s.curves[metric].mean[t] = ms.mean;
      s.curves[metric].se[t] = ms.se.value_or(std::numeric_limits<double>::quiet_NaN());
    }
  }
  std::vector<double> finals;
  std::vector<double> lock_rounds;
  s.final_slack_mean.assign(d, 0.0);
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& r = *runs[k];
    finals.push_back(opt_value - r.history.cumulative_reward());
    for (std::size_t i = 0; i < d; ++i) {
      s.final_slack_mean[i] += (r.history.cumulative_cost()(static_cast<Eigen::Index>(i)) - budget) /
                               static_cast<double>(runs.size());
    }
    if (r.stats.lock_round) {
      ++s.locked_runs;
      lock_rounds.push_back(static_cast<double>(*r.stats.lock_round));
    }
    if (!within_budget(r.history, budget)) s.budget_respected = false;
    if (!(r.stats.played_bonus_sum <= r.stats.bonus_sum_bound)) ++s.bonus_bound_violations;
  }
  const auto fr = detail::mean_se(finals);
  s.final_regret_mean = fr.mean;
  s.final_regret_se = fr.se;
  if (!lock_rounds.empty()) s.mean_lock_round = detail::mean_se(lock_rounds).mean;
  return s;
}

inline nlohmann::json summary_to_json(const MetricsSummary& s) {
  nlohmann::json doc;
  doc["runs"] = s.runs;
  doc["failed_runs"] = s.failed_runs;
  doc["horizon"] = s.horizon;
  doc["opt_value"] = s.opt_value;
  doc["budget"] = s.budget;
  doc["final_regret_mean"] = s.final_regret_mean;
  doc["final_regret_se"] = s.final_regret_se ? nlohmann::json(*s.final_regret_se) : nlohmann::json(nullptr);
  doc["final_slack_mean"] = s.final_slack_mean;
  doc["locked_runs"] = s.locked_runs;
  doc["mean_lock_round"] = s.mean_lock_round ? nlohmann::json(*s.mean_lock_round) : nlohmann::json(nullptr);
  doc["budget_respected"] = s.budget_respected;
  doc["bonus_bound_violations"] = s.bonus_bound_violations;
  doc["bonus_bound_ok"] = s.bonus_bound_violations == 0;
  return doc;
}

/// Inverse of summary_to_json for the scalar fields (curves live in the CSV).
inline MetricsSummary summary_from_json(const nlohmann::json& doc) {
  MetricsSummary s;
  s.runs = doc.at("runs").get<std::size_t>();
  s.failed_runs = doc.at("failed_runs").get<std::size_t>();
  s.horizon = doc.at("horizon").get<std::size_t>();
  s.opt_value = doc.at("opt_value").get<double>();
  s.budget = doc.at("budget").get<double>();
  s.final_regret_mean = doc.at("final_regret_mean").get<double>();
  if (!doc.at("final_regret_se").is_null()) s.final_regret_se = doc.at("final_regret_se").get<double>();
  s.final_slack_mean = doc.at("final_slack_mean").get<std::vector<double>>();
  s.locked_runs = doc.at("locked_runs").get<std::size_t>();
  if (!doc.at("mean_lock_round").is_null()) s.mean_lock_round = doc.at("mean_lock_round").get<double>();
  s.budget_respected = doc.at("budget_respected").get<bool>();
  s.bonus_bound_violations = doc.at("bonus_bound_violations").get<std::size_t>();
  return s;
}

/// Long-format curves (`t,metric,mean,se`, rounds 1..T) plus a JSON summary.
inline void emit_plot_data(const MetricsSummary& s, const std::filesystem::path& dir, const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto csv_path = dir / (stem + "_curves.csv");
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw Error(ErrorKind::IoError, "cannot open " + csv_path.string());
  csv << "t,metric,mean,se\n";
  std::string line;
  for (const auto& c : s.curves) {
    for (std::size_t t = 1; t < c.mean.size(); ++t) {
      line.clear();
      detail::append_number(line, t);
      line += ',' + c.metric + ',';
      detail::append_number(line, c.mean[t]);
      line += ',';
      if (!std::isnan(c.se[t])) detail::append_number(line, c.se[t]);
      csv << line << '\n';
    }
  }
  if (!csv) throw Error(ErrorKind::IoError, "write failed for " + csv_path.string());
  const auto json_path = dir / (stem + "_summary.json");
  std::ofstream js(json_path);
  if (!js) throw Error(ErrorKind::IoError, "cannot open " + json_path.string());
  js << summary_to_json(s).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Conversion-model policy vs. the primal-dual baseline

struct BenchConfig {
  LoanInstanceConfig instance;
  PolicyConfig conversion;
  PolicyConfig baseline;
  std::vector<double> explore_scales{0.025, 0.1, 0.3};
  std::vector<double> etas{0.005, 0.01, 0.05, 0.1, 0.2};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  BenchConfig() {
    conversion.kind = PolicyKind::BoxB;
    conversion.bonus = BonusSchedule::Log;
    conversion.lambda = 0.0129;
    conversion.working_budget = WorkingBudgetMode::Full;
    conversion.warm_start = 50;
    baseline.kind = PolicyKind::BoxD;
    baseline.bonus = BonusSchedule::Log;
    baseline.lambda = 0.2452;
    baseline.working_budget = WorkingBudgetMode::Full;
    baseline.warm_start = 50;
  }
};

inline BenchConfig bench_config_from_json(const nlohmann::json& doc) {
  BenchConfig cfg;
  if (doc.contains("instance")) cfg.instance = loan_config_from_json(doc["instance"]);
  auto merge = [](PolicyConfig base, const nlohmann::json& overrides) {
    nlohmann::json merged = to_json(base);
    merged.merge_patch(overrides);
    return policy_config_from_json(merged);
  };
  if (doc.contains("conversion")) cfg.conversion = merge(cfg.conversion, doc["conversion"]);
  if (doc.contains("baseline")) cfg.baseline = merge(cfg.baseline, doc["baseline"]);
  cfg.conversion.kind = PolicyKind::BoxB;
  cfg.baseline.kind = PolicyKind::BoxD;
  cfg.explore_scales = doc.value("explore_scales", cfg.explore_scales);
  cfg.etas = doc.value("etas", cfg.etas);
  cfg.seeds = doc.value("seeds", cfg.seeds);
  return cfg;
}

struct BenchCell {
  std::string policy;
  double explore_scale = 0.0;
  std::optional<double> eta;
  MetricsSummary summary;
};

struct BenchResult {
  double opt_value = 0.0;
  double Z = 0.0;
  std::vector<BenchCell> conversion;  // one per explore scale
  std::vector<BenchCell> baseline;    // best eta per explore scale
  std::size_t total_runs = 0;
  std::size_t bonus_bound_violations = 0;  // over every run, including discarded eta cells
  bool budget_respected = true;
  bool slack_nonpositive = true;
  bool lower_scale_lower_regret = true;
  bool conversion_beats_baseline = true;
};

/// The explore-scale sweep. Box D gets Z = OPT/B and, per scale, the eta with
/// the lowest mean final regret in hindsight.
inline BenchResult run_bench(const BenchConfig& cfg,
                             const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  const LoanInstance inst = gen_loan_instance(cfg.instance);
  const ProblemSpec& spec = inst.spec;
  BenchResult res;
  res.opt_value = opt_value(spec, inst.theta_star);
  res.Z = res.opt_value / spec.budget;

  auto finish = [&](BenchCell& cell, const std::vector<RunRecord>& runs) {
    cell.summary = aggregate(runs, res.opt_value, spec.horizon, spec.budget);
    res.total_runs += runs.size();
    res.bonus_bound_violations += cell.summary.bonus_bound_violations;
    res.budget_respected = res.budget_respected && cell.summary.budget_respected && cell.summary.failed_runs == 0;
    for (double slack : cell.summary.final_slack_mean) res.slack_nonpositive = res.slack_nonpositive && slack <= 0.0;
  };

  for (double scale : cfg.explore_scales) {
    std::ostringstream tag;
    tag << "C" << scale;
    PolicyConfig pc = cfg.conversion;
    pc.explore_scale = scale;
    BenchCell cell{"box-b", scale, std::nullopt, {}};
    const auto runs = run_experiment(spec, inst.theta_star, pc, cfg.seeds, std::nullopt, "", 1);
    finish(cell, runs);
    if (out_dir) emit_plot_data(cell.summary, *out_dir, "box-b_" + tag.str());
    res.conversion.push_back(std::move(cell));

    std::optional<BenchCell> best;
    for (double eta : cfg.etas) {
      PolicyConfig bc = cfg.baseline;
      bc.explore_scale = scale;
      bc.Z = res.Z;
      bc.eta = eta;
      BenchCell candidate{"box-d", scale, eta, {}};
      const auto druns = run_experiment(spec, inst.theta_star, bc, cfg.seeds, std::nullopt, "", 1);
      finish(candidate, druns);
      if (!best || candidate.summary.final_regret_mean < best->summary.final_regret_mean) best = std::move(candidate);
    }
    if (out_dir) emit_plot_data(best->summary, *out_dir, "box-d_" + tag.str());
    res.baseline.push_back(std::move(*best));
  }

  // Smaller explore scale should not do worse, up to one standard error.
  std::vector<std::size_t> order(res.conversion.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return res.conversion[a].explore_scale < res.conversion[b].explore_scale; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto& lo = res.conversion[order[k - 1]].summary;
    const auto& hi = res.conversion[order[k]].summary;
    const double slack = std::max(lo.final_regret_se.value_or(0.0), hi.final_regret_se.value_or(0.0));
    if (lo.final_regret_mean > hi.final_regret_mean + slack) res.lower_scale_lower_regret = false;
  }
  for (std::size_t k = 0; k < res.conversion.size(); ++k) {
    if (!(res.conversion[k].summary.final_regret_mean < res.baseline[k].summary.final_regret_mean)) {
      res.conversion_beats_baseline = false;
    }
  }
  return res;
}

inline nlohmann::json to_json(const BenchResult& r) {
  nlohmann::json doc;
  doc["opt_value"] = r.opt_value;
  doc["Z"] = r.Z;
  doc["total_runs"] = r.total_runs;
  auto cells = [](const std::vector<BenchCell>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : v) {
      nlohmann::json j = summary_to_json(c.summary);
      j["policy"] = c.policy;
      j["explore_scale"] = c.explore_scale;
      j["eta"] = c.eta ? nlohmann::json(*c.eta) : nlohmann::json(nullptr);
      arr.push_back(std::move(j));
    }
    return arr;
  };
  doc["conversion"] = cells(r.conversion);
  doc["baseline"] = cells(r.baseline);
  doc["checks"] = {{"budget_respected", r.budget_respected},
                   {"bonus_bound_violations", r.bonus_bound_violations},
                   {"slack_nonpositive", r.slack_nonpositive},
                   {"lower_scale_lower_regret", r.lower_scale_lower_regret},
                   {"conversion_beats_baseline", r.conversion_beats_baseline}};
  return doc;
}

}  // namespace cbwk
