#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ace/tensor.hpp"

namespace ace {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

class GradSink;
using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

/// Accumulated gradients from one reverse sweep, indexed by tape handle.
class Gradients {
 public:
  /// Gradient for `v`; zeros when `v` is unreachable from the seeds.
  Tensor wrt(Var v) const;
  bool reached(Var v) const;

 private:
  friend class Tape;
  friend class GradSink;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
};

/// Handed to backward closures so they can add into their inputs' gradients.
class GradSink {
 public:
  bool wants(Var v) const;
  /// Gradient buffer of `v`, zero-initialised on first access. Only valid when wants(v).
  std::span<double> operator()(Var v);

 private:
  friend class Tape;
  explicit GradSink(Gradients& g) : g_(g) {}
  Gradients& g_;
};

/// Append-only record of operations. Confined to a single thread; handles are
/// dense so that every node's inputs precede it.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameters, states).
  Var leaf(Tensor value);
  /// Non-differentiable input.
  Var constant(Tensor value);

  /// Registers an op output. `backward` is dropped unless some input needs gradients.
  Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss.
  Gradients backward(Var loss) const;
  /// Vector-Jacobian product: reverse sweep seeded with `seed` at `out`.
  Gradients backward(Var out, const Tensor& seed) const;
  Gradients backward(std::span<const std::pair<Var, Tensor>> seeds) const;

 private:
  struct Node {
    const char* op;
    Tensor value;
    bool requires_grad;
    bool is_leaf;
    BackwardFn backward;
  };

  void check_owner(Var v) const;

  std::deque<Node> nodes_;
  bool recording_;
};

}  // namespace ace
