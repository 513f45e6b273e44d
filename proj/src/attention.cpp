#include "ace/attention.hpp"

#include <algorithm>
#include <cmath>

#include "ace/errors.hpp"
#include "ace/ops.hpp"

namespace ace {

namespace {

Shape batched(std::size_t batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace

AttentionKind parse_attention_kind(const std::string& name) {
  if (name == "none") return AttentionKind::none;
  if (name == "pairwise") return AttentionKind::pairwise;
  if (name == "elementwise") return AttentionKind::elementwise;
  if (name == "fixed_correlation") return AttentionKind::fixed_correlation;
  throw ConfigError("unknown attention kind '" + name + "'");
}

std::string attention_kind_name(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none: return "none";
    case AttentionKind::pairwise: return "pairwise";
    case AttentionKind::elementwise: return "elementwise";
    case AttentionKind::fixed_correlation: return "fixed_correlation";
  }
  return "?";
}

Shape attention_shape(AttentionKind kind, const Shape& h_shape) {
  switch (kind) {
    case AttentionKind::none:
      return {};
    case AttentionKind::elementwise:
      return h_shape;
    case AttentionKind::pairwise:
    case AttentionKind::fixed_correlation:
      if (h_shape.size() != 1) {
        throw ConfigError(attention_kind_name(kind) + " attention needs a vector hidden state, got " +
                          shape_string(h_shape));
      }
      return {h_shape[0], h_shape[0]};
  }
  return {};
}

void AceState::validate() const {
  const Shape want = attention_shape(kind, h.shape());
  if (kind == AttentionKind::none) {
    if (!a.empty()) throw DimensionError("attention kind none carries no a");
    return;
  }
  if (a.shape() != want) {
    throw DimensionError("a has shape " + shape_string(a.shape()) + ", expected " + shape_string(want) + " for " +
                         attention_kind_name(kind));
  }
}

std::vector<double> AceState::pack() const {
  validate();
  std::vector<double> out(h.data().begin(), h.data().end());
  out.insert(out.end(), a.data().begin(), a.data().end());
  return out;
}

AceState AceState::unpack(std::span<const double> packed, const Shape& h_shape, AttentionKind kind) {
  const Shape a_shape = attention_shape(kind, h_shape);
  const std::size_t nh = shape_size(h_shape);
  const std::size_t na = kind == AttentionKind::none ? 0 : shape_size(a_shape);
  if (packed.size() != nh + na) {
    throw DimensionError("packed state of length " + std::to_string(packed.size()) + ", expected " +
                         std::to_string(nh + na));
  }
  AceState s;
  s.kind = kind;
  s.h = Tensor(h_shape, std::vector<double>(packed.begin(), packed.begin() + nh));
  if (na) s.a = Tensor(a_shape, std::vector<double>(packed.begin() + nh, packed.end()));
  return s;
}

Var apply_pairwise(Var h, Var a) {
  const Shape& hs = h.shape();
  const Shape& as = a.shape();
  if (hs.size() == 1) {
    if (as.size() != 2 || as[0] != as[1] || as[0] != hs[0]) {
      throw DimensionError("pairwise attention: a " + shape_string(as) + " does not fit h " + shape_string(hs));
    }
    const std::size_t d = hs[0];
    return reshape(apply_pairwise(reshape(h, {1, d}), reshape(a, {1, d, d})), {d});
  }
  if (hs.size() != 2 || as.size() != 3 || as[0] != hs[0] || as[1] != as[2] || as[1] != hs[1]) {
    throw DimensionError("pairwise attention: a " + shape_string(as) + " does not fit h " + shape_string(hs));
  }
  return batched_matvec(softmax_rows(a), h);
}

Var apply_elementwise(Var h, Var a) {
  if (h.shape() != a.shape()) {
    throw DimensionError("elementwise attention: a " + shape_string(a.shape()) + " vs h " + shape_string(h.shape()));
  }
  return mul(h, sigmoid(a));
}

Var attend(AttentionKind kind, Var h, Var a) {
  switch (kind) {
    case AttentionKind::none: return h;
    case AttentionKind::elementwise: return apply_elementwise(h, a);
    case AttentionKind::pairwise:
    case AttentionKind::fixed_correlation: return apply_pairwise(h, a);
  }
  return h;
}

Tensor apply_pairwise(const Tensor& h, const Tensor& a) {
  Tape tape(false);
  return apply_pairwise(tape.constant(h), tape.constant(a)).value();
}

Tensor apply_elementwise(const Tensor& h, const Tensor& a) {
  Tape tape(false);
  return apply_elementwise(tape.constant(h), tape.constant(a)).value();
}

Tensor init_attention_correlation(const Tensor& window) {
  if (window.rank() != 2) throw DimensionError("correlation window must be [n x d], got " + shape_string(window.shape()));
  const std::size_t n = window.dim(0), d = window.dim(1);
  if (n < 2) throw DataError("correlation needs at least 2 observations, got " + std::to_string(n));
  std::vector<double> mu(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += window.at(r, j);
  }
  for (auto& m : mu) m /= static_cast<double>(n);
  Tensor cov({d, d});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      const double di = window.at(r, i) - mu[i];
      for (std::size_t j = 0; j < d; ++j) cov.at(i, j) += di * (window.at(r, j) - mu[j]);
    }
  }
  Tensor corr({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (i == j) {
        corr.at(i, j) = 1.0;
        continue;
      }
      const double denom = std::sqrt(cov.at(i, i) * cov.at(j, j));
      corr.at(i, j) = denom > 0.0 ? std::clamp(cov.at(i, j) / denom, -1.0, 1.0) : 0.0;
    }
  }
  // exact symmetry regardless of summation order
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) corr.at(j, i) = corr.at(i, j);
  }
  return corr;
}

InitialAttention::InitialAttention(Kind kind, AttentionKind attention, Shape h_shape)
    : kind_(kind), h_shape_(std::move(h_shape)), a_shape_(attention_shape(attention, h_shape_)) {
  if (attention == AttentionKind::none || attention == AttentionKind::fixed_correlation) {
    throw ConfigError("no network q for attention kind " + attention_kind_name(attention));
  }
  if (kind_ == Kind::conv && (h_shape_.size() != 3 || a_shape_ != h_shape_)) {
    throw ConfigError("convolutional q needs elementwise attention over a [C x H x W] state");
  }
}

ParamStore InitialAttention::init(std::mt19937_64& rng) const {
  ParamStore p;
  if (kind_ == Kind::fc) {
    const std::size_t in = shape_size(h_shape_), out = shape_size(a_shape_);
    p.add("W", uniform_fan_in({out, in}, in, rng));
    p.add("b", Tensor({out}));
  } else {
    const std::size_t c = h_shape_[0];
    p.add("conv0", uniform_fan_in({c, c, 3, 3}, 9 * c, rng));
    p.add("conv1", uniform_fan_in({c, c, 3, 3}, 9 * c, rng));
  }
  return p;
}

std::size_t InitialAttention::parameter_count() const {
  if (kind_ == Kind::fc) return shape_size(a_shape_) * (shape_size(h_shape_) + 1);
  return 2 * 9 * h_shape_[0] * h_shape_[0];
}

Var InitialAttention::eval(const BoundParams& p, Var h0) const {
  const std::size_t batch = h0.shape().at(0);
  if (h0.shape() != batched(batch, h_shape_)) {
    throw DimensionError("q expects h(0) of per-sample shape " + shape_string(h_shape_) + ", got " +
                         shape_string(h0.shape()));
  }
  if (kind_ == Kind::fc) {
    Var b = p["b"];
    Var flat = reshape(h0, {batch, shape_size(h_shape_)});
    return reshape(linear(flat, p["W"], &b), batched(batch, a_shape_));
  }
  return conv2d(relu(conv2d(h0, p["conv0"])), p["conv1"]);
}

std::size_t CoupledSystem::a_size() const {
  return kind == AttentionKind::none ? 0 : batch * shape_size(a_shape());
}

void CoupledSystem::validate() const {
  const Shape as = a_shape();
  if (f.spec().state_shape != h_shape || f.spec().input_shape != h_shape) {
    throw ConfigError("f must map " + shape_string(h_shape) + " to itself");
  }
  if (kind == AttentionKind::pairwise || kind == AttentionKind::elementwise) {
    if (g.spec().state_shape != as || g.spec().input_shape != h_shape) {
      throw ConfigError("g must map " + shape_string(h_shape) + " to " + shape_string(as));
    }
  }
}

Var CoupledSystem::hidden(Var z) const { return slice(z, 0, batched(batch, h_shape)); }

Var CoupledSystem::attention(Var z) const { return slice(z, h_size(), batched(batch, a_shape())); }

Var CoupledSystem::pack(Var h, Var a) const {
  Var hf = reshape(h, {h_size()});
  if (kind == AttentionKind::none) return hf;
  const Var parts[] = {hf, reshape(a, {a_size()})};
  return concat(parts);
}

Var CoupledSystem::rhs(const BoundParams& pf, const BoundParams& pg, Var z, double t) const {
  if (z.shape() != Shape{state_size()}) {
    throw DimensionError("packed state " + shape_string(z.shape()) + ", expected [" + std::to_string(state_size()) + "]");
  }
  Var h = hidden(z);
  if (kind == AttentionKind::none) return reshape(f.eval(pf, h, h, t), {h_size()});
  Var a = attention(z);
  Var hp = attend(kind, h, a);
  Var dh = f.eval(pf, hp, hp, t);
  Var da;
  if (kind == AttentionKind::fixed_correlation) {
    da = z.tape->constant(Tensor(a.shape()));
  } else {
    da = g.eval(pg, hp, a, t);
  }
  return pack(dh, da);
}

Rhs numeric_rhs(const CoupledSystem& sys, const ParamStore& theta_f, const ParamStore& theta_g) {
  return [&sys, &theta_f, &theta_g](double t, std::span<const double> y, std::span<double> dydt) {
    Tape tape(false);
    BoundParams pf(tape, theta_f, false);
    BoundParams pg(tape, theta_g, false);
    Var z = tape.constant(Tensor({y.size()}, std::vector<double>(y.begin(), y.end())));
    const Tensor& d = sys.rhs(pf, pg, z, t).value();
    std::copy(d.data().begin(), d.data().end(), dydt.begin());
  };
}

}  // namespace ace
