#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ace/tape.hpp"

namespace ace {

/// Ordered collection of named tensors (one of theta_f, theta_g, theta_q, theta_others).
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t tensor_count() const { return entries_.size(); }
  /// Total number of scalars.
  std::size_t size() const;
  bool empty() const { return entries_.empty(); }

  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);
  /// Same names and shapes, all zeros.
  ParamStore zeros_like() const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// A store's tensors placed on a tape.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(Tape& tape, const ParamStore& store, bool differentiable);
  /// Wraps existing vars, named after `layout`'s entries.
  BoundParams(const ParamStore& layout, std::span<const Var> vars);

  Var operator[](const std::string& name) const;
  const std::vector<Var>& vars() const { return vars_; }
  /// Gradients of every bound tensor, in store order.
  ParamStore gradients(const Gradients& g) const;

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace ace
