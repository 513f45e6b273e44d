#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "ace/ode_functions.hpp"
#include "ace/params.hpp"
#include "ace/solvers.hpp"
#include "ace/tape.hpp"

namespace ace {

enum class AttentionKind { none, pairwise, elementwise, fixed_correlation };

AttentionKind parse_attention_kind(const std::string& name);
std::string attention_kind_name(AttentionKind kind);

/// Per-sample shape of a for a hidden state of shape `h_shape`. Empty for `none`.
Shape attention_shape(AttentionKind kind, const Shape& h_shape);

/// Hidden state and attention logits of one sample.
struct AceState {
  Tensor h;
  Tensor a;
  AttentionKind kind = AttentionKind::none;

  /// Throws DimensionError / ConfigError when h and a do not fit `kind`.
  void validate() const;
  /// h values followed by a values.
  std::vector<double> pack() const;
  static AceState unpack(std::span<const double> packed, const Shape& h_shape, AttentionKind kind);

  friend bool operator==(const AceState&, const AceState&) = default;
};

/// h'_i = sum_j softmax_row_i(a)_j h_j. h is [d] or [B x d]; a is [d x d] or [B x d x d].
Var apply_pairwise(Var h, Var a);
/// h * sigmoid(a), shapes equal.
Var apply_elementwise(Var h, Var a);
/// h' (or h'') for `kind`; `none` returns h.
Var attend(AttentionKind kind, Var h, Var a);

Tensor apply_pairwise(const Tensor& h, const Tensor& a);
Tensor apply_elementwise(const Tensor& h, const Tensor& a);

/// Pearson correlation of the columns of a [n x d] window. Zero-variance columns get
/// 0 off the diagonal; the diagonal is exactly 1.
Tensor init_attention_correlation(const Tensor& window);

/// Network q producing a(0) from h(0).
class InitialAttention {
 public:
  enum class Kind { fc, conv };

  InitialAttention() = default;
  InitialAttention(Kind kind, AttentionKind attention, Shape h_shape);

  Kind kind() const { return kind_; }
  ParamStore init(std::mt19937_64& rng) const;
  std::size_t parameter_count() const;
  /// h0 is [B x h_shape...]; returns [B x a_shape...].
  Var eval(const BoundParams& p, Var h0) const;

 private:
  Kind kind_ = Kind::fc;
  Shape h_shape_;
  Shape a_shape_;
};

/// dh/dt = f(h', t), da/dt = g(h', t) over a batch packed as [all h | all a].
struct CoupledSystem {
  AttentionKind kind = AttentionKind::none;
  OdeFunction f;
  /// Unused for `none` and `fixed_correlation`, whose a is frozen.
  OdeFunction g;
  Shape h_shape;
  std::size_t batch = 1;

  Shape a_shape() const { return attention_shape(kind, h_shape); }
  std::size_t h_size() const { return batch * shape_size(h_shape); }
  std::size_t a_size() const;
  std::size_t state_size() const { return h_size() + a_size(); }

  /// Checks that f and g fit the state shapes.
  void validate() const;

  /// Packed derivative of the packed state z (rank 1).
  Var rhs(const BoundParams& pf, const BoundParams& pg, Var z, double t) const;
  /// Views of the packed state as [B x h_shape...] and [B x a_shape...].
  Var hidden(Var z) const;
  Var attention(Var z) const;
  Var pack(Var h, Var a) const;
};

/// Plain-double right-hand side of `sys` for the solvers (no gradients recorded).
Rhs numeric_rhs(const CoupledSystem& sys, const ParamStore& theta_f, const ParamStore& theta_g);

}  // namespace ace
