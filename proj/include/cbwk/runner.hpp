#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include "cbwk/environment.hpp"
#include "cbwk/error.hpp"
#include "cbwk/policy.hpp"
#include "cbwk/policy_conversion.hpp"
#include "cbwk/policy_linear.hpp"
#include "cbwk/problem.hpp"

namespace cbwk {

inline std::unique_ptr<Policy> make_policy(const ProblemSpec& spec, const PolicyConfig& cfg,
                                           std::uint64_t seed,
                                           std::optional<Vector> true_theta = std::nullopt) {
  switch (cfg.kind) {
    case PolicyKind::BoxB: return std::make_unique<ConversionPolicy>(spec, cfg, seed, std::move(true_theta));
    case PolicyKind::BoxC: return std::make_unique<LinearPolicy>(spec, cfg, seed);
    case PolicyKind::BoxD: return std::make_unique<BoxDPolicy>(spec, cfg, seed);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown policy kind");
}

/// One completed (or failed) run.
struct RunRecord {
  std::uint64_t seed = 0;
  History history;
  std::vector<RoundDiagnostics> diagnostics;
  PolicyStats stats;
  /// Sum of the expected rewards r(a_t,x_t) P(a_t,x_t) of the played actions.
  double expected_reward = 0.0;
  std::optional<std::string> error;

  bool ok() const { return !error.has_value(); }
};

/// Plays the full horizon. `Env` provides next_context(), play(x, a),
/// history() and horizon().
template <class Env, class ExpectedReward>
RunRecord run_policy(Env& env, Policy& policy, std::uint64_t seed, ExpectedReward&& expected_reward) {
  RunRecord rec;
  rec.seed = seed;
  rec.diagnostics.reserve(env.horizon());
  for (std::size_t t = 0; t < env.horizon(); ++t) {
    const ContextId x = env.next_context();
    const ActionId a = policy.act(x);
    rec.diagnostics.push_back(policy.diagnostics());
    rec.expected_reward += expected_reward(a, x);
    policy.record(env.play(x, a));
  }
  rec.history = env.history();
  rec.stats = policy.stats();
  return rec;
}

/// Runs one seed of a policy against the logistic conversion environment.
inline RunRecord simulate(const ProblemSpec& spec, const Vector& theta_star, const PolicyConfig& cfg,
                          std::uint64_t seed) {
  ConversionEnvironment env(spec, theta_star, seed);
  auto policy = make_policy(spec, cfg, seed, theta_star);
  return run_policy(env, *policy, seed, [&](ActionId a, ContextId x) { return env.expected_reward(a, x); });
}

/// True when every cost component stayed within the budget.
inline bool within_budget(const History& h, double budget) {
  return h.empty() || (h.cumulative_cost().array() <= budget).all();
}

namespace detail {

inline void append_number(std::string& out, double v) {
  if (std::isnan(v)) {
    out += "nan";
    return;
  }
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline void append_number(std::string& out, std::size_t v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

}  // namespace detail

inline std::string run_csv_header(std::size_t d) {
  std::string h = "t,context_id,action_id,y,reward";
  for (std::size_t i = 1; i <= d; ++i) h += ",cost_" + std::to_string(i);
  h += ",cum_reward";
  for (std::size_t i = 1; i <= d; ++i) h += ",cum_cost_" + std::to_string(i);
  h += ",gamma,theta_err,max_eps";
  return h;
}

/// Per-round log with shortest round-trip number formatting, so equal runs
/// produce byte-identical files.
inline void write_run_csv(std::ostream& os, const RunRecord& rec) {
  const std::size_t d = rec.history.cost_dim();
  std::string line;
  os << run_csv_header(d) << '\n';
  double cum_reward = 0.0;
  Vector cum_cost = Vector::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t t = 0; t < rec.history.size(); ++t) {
    const auto& r = rec.history[t];
    cum_reward += r.reward;
    cum_cost += r.cost;
    line.clear();
    detail::append_number(line, t + 1);
    line += ',';
    detail::append_number(line, r.context.value);
    line += ',';
    detail::append_number(line, r.action.value);
    line += ',';
    detail::append_number(line, static_cast<std::size_t>(r.y));
    line += ',';
    detail::append_number(line, r.reward);
    for (Eigen::Index i = 0; i < r.cost.size(); ++i) {
      line += ',';
      detail::append_number(line, r.cost(i));
    }
    line += ',';
    detail::append_number(line, cum_reward);
    for (Eigen::Index i = 0; i < cum_cost.size(); ++i) {
      line += ',';
      detail::append_number(line, cum_cost(i));
    }
    const RoundDiagnostics diag = t < rec.diagnostics.size() ? rec.diagnostics[t] : RoundDiagnostics{};
    line += ',';
    detail::append_number(line, diag.gamma);
    line += ',';
    detail::append_number(line, diag.theta_err);
    line += ',';
    detail::append_number(line, diag.max_eps);
    os << line << '\n';
  }
}

inline void write_run_csv(const std::string& path, const RunRecord& rec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IoError, "cannot open " + path);
  write_run_csv(os, rec);
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path);
}

}  // namespace cbwk
