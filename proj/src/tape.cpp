#include "ace/tape.hpp"

#include <cmath>
#include <string>

#include "ace/errors.hpp"

namespace ace {

const Tensor& Var::value() const {
  if (!tape) throw UsageError("access to a detached Var");
  return tape->value(*this);
}

Tensor Gradients::wrt(Var v) const {
  if (v.tape != tape_) throw UsageError("gradient requested for a Var of another tape");
  if (v.id < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
  return Tensor(v.shape());
}

bool Gradients::reached(Var v) const {
  return v.tape == tape_ && v.id < grads_.size() && !grads_[v.id].empty();
}

bool GradSink::wants(Var v) const { return g_.tape_->requires_grad(v); }

std::span<double> GradSink::operator()(Var v) {
  auto& slot = g_.grads_[v.id];
  if (slot.empty()) slot = Tensor(v.shape());
  return slot.data();
}

void Tape::check_owner(Var v) const {
  if (v.tape != this) throw UsageError("Var belongs to a different tape");
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{"leaf", std::move(value), recording_, true, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), false, true, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id].requires_grad;
  }
  for (double x : value.data()) {
    if (std::isnan(x)) throw NumericError(std::string("NaN produced by ") + op);
  }
  needs = needs && recording_;
  nodes_.push_back(Node{op, std::move(value), needs, false, needs ? std::move(backward) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) const {
  check_owner(loss);
  if (value(loss).size() != 1) {
    throw UsageError("backward(loss) needs a scalar, got " + shape_string(value(loss).shape()));
  }
  return backward(loss, Tensor(value(loss).shape(), 1.0));
}

Gradients Tape::backward(Var out, const Tensor& seed) const {
  std::pair<Var, Tensor> s{out, seed};
  return backward(std::span<const std::pair<Var, Tensor>>(&s, 1));
}

Gradients Tape::backward(std::span<const std::pair<Var, Tensor>> seeds) const {
  Gradients g;
  g.tape_ = this;
  g.grads_.resize(nodes_.size());
  std::size_t top = 0;
  for (const auto& [v, seed] : seeds) {
    check_owner(v);
    if (!nodes_[v.id].requires_grad) {
      throw UsageError(std::string("backward through a detached tensor (") + nodes_[v.id].op + ")");
    }
    if (seed.size() != value(v).size()) {
      throw DimensionError("seed " + shape_string(seed.shape()) + " does not match output " +
                           shape_string(value(v).shape()));
    }
    auto& slot = g.grads_[v.id];
    if (slot.empty()) slot = Tensor(value(v).shape());
    for (std::size_t i = 0; i < seed.size(); ++i) slot[i] += seed[i];
    top = std::max(top, v.id + 1);
  }
  GradSink sink(g);
  for (std::size_t id = top; id-- > 0;) {
    const Node& node = nodes_[id];
    if (node.is_leaf || !node.backward || g.grads_[id].empty()) continue;
    Tensor grad_out = std::move(g.grads_[id]);
    node.backward(grad_out, sink);
    // Intermediate gradients are not part of the result.
    g.grads_[id] = Tensor();
  }
  return g;
}

}  // namespace ace
