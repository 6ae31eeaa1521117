#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cbwk {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Index into a finite set, tagged so actions and contexts cannot be mixed up.
template <class Tag>
struct Id {
  std::size_t value = 0;

  constexpr Id() = default;
  constexpr explicit Id(std::size_t v) : value(v) {}

  friend constexpr auto operator<=>(Id, Id) = default;
};

using ActionId = Id<struct ActionTag>;
using ContextId = Id<struct ContextTag>;

/// Dense action-major table indexed by (action, context).
template <class T>
class ActionContextTable {
 public:
  ActionContextTable() = default;
  ActionContextTable(std::size_t num_actions, std::size_t num_contexts,
                     const T& init = T{})
      : num_actions_(num_actions),
        num_contexts_(num_contexts),
        data_(num_actions * num_contexts, init) {}

  std::size_t num_actions() const { return num_actions_; }
  std::size_t num_contexts() const { return num_contexts_; }
  std::size_t size() const { return data_.size(); }

  std::size_t flat_index(ActionId a, ContextId x) const {
    return a.value * num_contexts_ + x.value;
  }

  T& operator()(ActionId a, ContextId x) { return data_[flat_index(a, x)]; }
  const T& operator()(ActionId a, ContextId x) const {
    return data_[flat_index(a, x)];
  }

  T& at_flat(std::size_t i) { return data_[i]; }
  const T& at_flat(std::size_t i) const { return data_[i]; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  /// Calls f(action, context, value) for every entry.
  template <class F>
  void for_each(F&& f) const {
    for (std::size_t a = 0; a < num_actions_; ++a) {
      for (std::size_t x = 0; x < num_contexts_; ++x) {
        f(ActionId{a}, ContextId{x}, data_[a * num_contexts_ + x]);
      }
    }
  }

  template <class U, class F>
  ActionContextTable<U> map(F&& f) const {
    ActionContextTable<U> out(num_actions_, num_contexts_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.at_flat(i) = f(data_[i]);
    return out;
  }

 private:
  std::size_t num_actions_ = 0;
  std::size_t num_contexts_ = 0;
  std::vector<T> data_;
};

}  // namespace cbwk
