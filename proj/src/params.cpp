#include "ace/params.hpp"

#include <cmath>

#include "ace/errors.hpp"

namespace ace {

void ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("missing parameter '" + name + "'");
}

const Tensor& ParamStore::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

std::size_t ParamStore::size() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& [name, t] : entries_) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

void ParamStore::assign_flat(std::span<const double> values) {
  if (values.size() != size()) {
    throw DimensionError("assign_flat: " + std::to_string(values.size()) + " values for " + std::to_string(size()) +
                         " parameters");
  }
  std::size_t off = 0;
  for (auto& [name, t] : entries_) {
    std::copy_n(values.begin() + off, t.size(), t.data().begin());
    off += t.size();
  }
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape()));
  return out;
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, bool differentiable) {
  for (const auto& [name, t] : store.entries()) {
    names_.push_back(name);
    vars_.push_back(differentiable ? tape.leaf(t) : tape.constant(t));
  }
}

BoundParams::BoundParams(const ParamStore& layout, std::span<const Var> vars) {
  if (vars.size() != layout.tensor_count()) throw UsageError("BoundParams: layout and vars differ in length");
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (vars[i].shape() != layout.entries()[i].second.shape()) {
      throw DimensionError("BoundParams: '" + layout.entries()[i].first + "' bound to " +
                           shape_string(vars[i].shape()));
    }
    names_.push_back(layout.entries()[i].first);
    vars_.push_back(vars[i]);
  }
}

Var BoundParams::operator[](const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return vars_[i];
  }
  throw ConfigError("parameter '" + name + "' not bound");
}

ParamStore BoundParams::gradients(const Gradients& g) const {
  ParamStore out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], g.wrt(vars_[i]));
  return out;
}

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace ace
