#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbwk/error.hpp"
#include "cbwk/table.hpp"

namespace cbwk {

/// Static description of a CBwK instance with a logistic conversion model.
///
/// Feature, reward and cost tables are indexed by (action, context). Entries
/// at the null action hold zero vectors of the common dimension so the tables
/// stay rectangular.
struct ProblemSpec {
  std::vector<std::string> action_labels;
  ActionId null_action{0};
  std::vector<Vector> contexts;
  ActionContextTable<Vector> transfer;
  ActionContextTable<double> reward;
  ActionContextTable<Vector> cost;
  std::size_t horizon = 0;
  double budget = 0.0;
  double theta_bound = 0.0;
  std::optional<std::vector<double>> context_weights;
  /// Features used by the linear-CBwK policies. Falls back to `transfer`.
  std::optional<ActionContextTable<Vector>> linear_transfer;

  std::size_t num_actions() const { return action_labels.size(); }
  std::size_t num_contexts() const { return contexts.size(); }
  std::size_t feature_dim() const;
  std::size_t cost_dim() const;
  bool is_null(ActionId a) const { return a == null_action; }

  /// Dimension of the non-null entries of a feature table.
  std::size_t feature_dim_of(const ActionContextTable<Vector>& table) const;

  const ActionContextTable<Vector>& linear_features() const {
    return linear_transfer ? *linear_transfer : transfer;
  }

  /// Non-null actions in index order.
  std::vector<ActionId> active_actions() const {
    std::vector<ActionId> out;
    for (std::size_t a = 0; a < num_actions(); ++a) {
      if (ActionId{a} != null_action) out.push_back(ActionId{a});
    }
    return out;
  }
};

inline std::size_t ProblemSpec::feature_dim_of(const ActionContextTable<Vector>& table) const {
  for (std::size_t a = 0; a < table.num_actions(); ++a) {
    if (ActionId{a} == null_action || table.num_contexts() == 0) continue;
    return static_cast<std::size_t>(table(ActionId{a}, ContextId{0}).size());
  }
  return 0;
}

inline std::size_t ProblemSpec::feature_dim() const { return feature_dim_of(transfer); }

inline std::size_t ProblemSpec::cost_dim() const {
  if (cost.size() == 0) return 0;
  return static_cast<std::size_t>(cost.at_flat(0).size());
}

namespace detail {

inline constexpr double kNormSlack = 1e-12;

inline void check_feature_table(const ProblemSpec& spec,
                                const ActionContextTable<Vector>& table,
                                const char* name) {
  if (table.num_actions() != spec.num_actions() ||
      table.num_contexts() != spec.num_contexts()) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(name) + " table does not match |A| x |X|");
  }
  std::optional<Eigen::Index> dim;
  table.for_each([&](ActionId a, ContextId x, const Vector& phi) {
    if (a == spec.null_action) return;
    if (!dim) dim = phi.size();
    if (phi.size() != *dim || phi.size() == 0) {
      throw Error(ErrorKind::ShapeMismatch,
                  std::string(name) + " vectors must share one positive dimension");
    }
    if (!phi.allFinite()) {
      throw Error(ErrorKind::RangeViolation, std::string(name) + " entry is not finite");
    }
    const double norm = phi.norm();
    if (norm > 1.0 + kNormSlack) {
      throw Error(ErrorKind::NormViolation,
                  std::string(name) + "(" + std::to_string(a.value) + "," +
                      std::to_string(x.value) + ") has norm " + std::to_string(norm));
    }
  });
}

}  // namespace detail

/// Throws if any invariant of ProblemSpec is broken.
inline void check_invariants(const ProblemSpec& spec) {
  const std::size_t na = spec.num_actions();
  const std::size_t nx = spec.num_contexts();
  if (na < 2) throw Error(ErrorKind::RangeViolation, "need the null action and at least one other");
  if (nx == 0) throw Error(ErrorKind::RangeViolation, "context set is empty");
  if (spec.null_action.value >= na) {
    throw Error(ErrorKind::RangeViolation, "null_action index out of range");
  }
  if (spec.reward.num_actions() != na || spec.reward.num_contexts() != nx ||
      spec.cost.num_actions() != na || spec.cost.num_contexts() != nx) {
    throw Error(ErrorKind::ShapeMismatch, "reward/cost tables do not match |A| x |X|");
  }
  detail::check_feature_table(spec, spec.transfer, "transfer");
  if (spec.linear_transfer) detail::check_feature_table(spec, *spec.linear_transfer, "linear_transfer");

  const Eigen::Index d = spec.cost.at_flat(0).size();
  if (d == 0) throw Error(ErrorKind::ShapeMismatch, "cost vectors must be non-empty");
  spec.cost.for_each([&](ActionId a, ContextId, const Vector& c) {
    if (c.size() != d) throw Error(ErrorKind::ShapeMismatch, "cost vectors must share one dimension");
    if (!c.allFinite() || (c.array() < 0.0).any() || (c.array() > 1.0).any()) {
      throw Error(ErrorKind::RangeViolation, "cost entries must lie in [0,1]");
    }
    if (a == spec.null_action && (c.array() != 0.0).any()) {
      throw Error(ErrorKind::NullActionNonzero, "cost at the null action must be zero");
    }
  });
  spec.reward.for_each([&](ActionId a, ContextId, double r) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorKind::RangeViolation, "reward entries must lie in [0,1]");
    if (a == spec.null_action && r != 0.0) {
      throw Error(ErrorKind::NullActionNonzero, "reward at the null action must be zero");
    }
  });

  if (spec.horizon == 0) throw Error(ErrorKind::RangeViolation, "horizon must be positive");
  if (!(spec.budget > 0.0) || !std::isfinite(spec.budget)) {
    throw Error(ErrorKind::RangeViolation, "budget must be positive");
  }
  if (!(spec.theta_bound > 0.0) || !std::isfinite(spec.theta_bound)) {
    throw Error(ErrorKind::RangeViolation, "theta_bound must be positive");
  }
  if (spec.context_weights) {
    const auto& nu = *spec.context_weights;
    if (nu.size() != nx) throw Error(ErrorKind::ShapeMismatch, "context_weights has the wrong length");
    double total = 0.0;
    for (double w : nu) {
      if (!(w >= 0.0)) throw Error(ErrorKind::RangeViolation, "context weights must be nonnegative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw Error(ErrorKind::RangeViolation, "context weights must sum to 1");
    }
  }
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key)) {
    throw Error(ErrorKind::MissingField, std::string("missing field '") + key + "'");
  }
  return doc.at(key);
}

inline Vector to_vector(const nlohmann::json& arr) {
  if (!arr.is_array()) throw Error(ErrorKind::ShapeMismatch, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw Error(ErrorKind::ShapeMismatch, "expected a number");
    v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  }
  return v;
}

inline nlohmann::json from_vector(const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

// [a][x] -> vector; a null (or missing) row at the null action is allowed.
inline ActionContextTable<Vector> read_vector_table(const nlohmann::json& doc,
                                                    std::size_t na, std::size_t nx,
                                                    ActionId null_action,
                                                    std::optional<Eigen::Index> zero_dim,
                                                    const char* name) {
  if (!doc.is_array() || doc.size() != na) {
    throw Error(ErrorKind::ShapeMismatch, std::string(name) + " must have one row per action");
  }
  ActionContextTable<Vector> table(na, nx);
  for (std::size_t a = 0; a < na; ++a) {
    const auto& row = doc[a];
    if (ActionId{a} == null_action && row.is_null()) continue;
    if (!row.is_array() || row.size() != nx) {
      throw Error(ErrorKind::ShapeMismatch, std::string(name) + " row must have one entry per context");
    }
    for (std::size_t x = 0; x < nx; ++x) table(ActionId{a}, ContextId{x}) = to_vector(row[x]);
  }
  // Give null-action entries a concrete zero vector of the common dimension.
  Eigen::Index dim = zero_dim.value_or(0);
  if (!zero_dim) {
    for (std::size_t a = 0; a < na && dim == 0; ++a) {
      if (ActionId{a} != null_action) dim = table(ActionId{a}, ContextId{0}).size();
    }
  }
  for (std::size_t x = 0; x < nx; ++x) {
    auto& entry = table(null_action, ContextId{x});
    if (entry.size() == 0) entry = Vector::Zero(dim);
  }
  return table;
}

inline nlohmann::json write_vector_table(const ActionContextTable<Vector>& table) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t a = 0; a < table.num_actions(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t x = 0; x < table.num_contexts(); ++x) {
      row.push_back(from_vector(table(ActionId{a}, ContextId{x})));
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace detail

/// Parses and validates a problem document. See README for the schema.
inline ProblemSpec validate_spec(const nlohmann::json& doc) {
  using detail::require;
  ProblemSpec spec;

  const auto& actions = require(doc, "actions");
  if (!actions.is_array()) throw Error(ErrorKind::ShapeMismatch, "actions must be an array");
  for (const auto& a : actions) spec.action_labels.push_back(a.is_string() ? a.get<std::string>() : a.dump());
  spec.null_action = ActionId{require(doc, "null_action").get<std::size_t>()};
  if (spec.null_action.value >= spec.action_labels.size()) {
    throw Error(ErrorKind::RangeViolation, "null_action index out of range");
  }

  const auto& contexts = require(doc, "contexts");
  if (!contexts.is_array()) throw Error(ErrorKind::ShapeMismatch, "contexts must be an array");
  for (const auto& x : contexts) spec.contexts.push_back(detail::to_vector(x));

  const std::size_t na = spec.num_actions();
  const std::size_t nx = spec.num_contexts();

  const auto& transfer = require(doc, "transfer");
  const auto& reward = require(doc, "reward");
  const auto& cost = require(doc, "cost");
  spec.horizon = require(doc, "horizon").get<std::size_t>();
  spec.budget = require(doc, "budget").get<double>();
  spec.theta_bound = require(doc, "theta_bound").get<double>();

  spec.transfer = detail::read_vector_table(transfer, na, nx, spec.null_action, std::nullopt, "transfer");

  if (!reward.is_array() || reward.size() != na) {
    throw Error(ErrorKind::ShapeMismatch, "reward must have one row per action");
  }
  spec.reward = ActionContextTable<double>(na, nx, 0.0);
  for (std::size_t a = 0; a < na; ++a) {
    if (!reward[a].is_array() || reward[a].size() != nx) {
      throw Error(ErrorKind::ShapeMismatch, "reward row must have one entry per context");
    }
    for (std::size_t x = 0; x < nx; ++x) spec.reward(ActionId{a}, ContextId{x}) = reward[a][x].get<double>();
  }

  spec.cost = detail::read_vector_table(cost, na, nx, spec.null_action, std::nullopt, "cost");

  if (doc.contains("context_weights") && !doc.at("context_weights").is_null()) {
    spec.context_weights = doc.at("context_weights").get<std::vector<double>>();
  }
  if (doc.contains("linear_transfer") && !doc.at("linear_transfer").is_null()) {
    spec.linear_transfer = detail::read_vector_table(doc.at("linear_transfer"), na, nx,
                                                     spec.null_action, std::nullopt, "linear_transfer");
  }

  check_invariants(spec);
  return spec;
}

inline nlohmann::json to_json(const ProblemSpec& spec) {
  nlohmann::json doc;
  doc["actions"] = spec.action_labels;
  doc["null_action"] = spec.null_action.value;
  nlohmann::json contexts = nlohmann::json::array();
  for (const auto& x : spec.contexts) contexts.push_back(detail::from_vector(x));
  doc["contexts"] = std::move(contexts);
  doc["transfer"] = detail::write_vector_table(spec.transfer);
  nlohmann::json reward = nlohmann::json::array();
  for (std::size_t a = 0; a < spec.num_actions(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t x = 0; x < spec.num_contexts(); ++x) row.push_back(spec.reward(ActionId{a}, ContextId{x}));
    reward.push_back(std::move(row));
  }
  doc["reward"] = std::move(reward);
  doc["cost"] = detail::write_vector_table(spec.cost);
  doc["horizon"] = spec.horizon;
  doc["budget"] = spec.budget;
  doc["theta_bound"] = spec.theta_bound;
  if (spec.context_weights) doc["context_weights"] = *spec.context_weights;
  if (spec.linear_transfer) doc["linear_transfer"] = detail::write_vector_table(*spec.linear_transfer);
  return doc;
}

}  // namespace cbwk
