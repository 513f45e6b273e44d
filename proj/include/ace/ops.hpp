#pragma once

#include <span>
#include <vector>

#include "ace/tape.hpp"

namespace ace {

// Elementwise arithmetic on equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

Var matmul(Var a, Var b);
/// x [B x in] (or [in]) times W^T [in x out] plus optional bias [out].
Var linear(Var x, Var weight, const Var* bias = nullptr);
/// y_b = A_b x_b for A [B x d x d], x [B x d].
Var batched_matvec(Var a, Var x);

/// Softmax over the last axis, max-shifted.
Var softmax_rows(Var x);

enum class Pointwise { sigmoid, tanh, relu };
Var pointwise(Pointwise kind, Var x);
inline Var sigmoid(Var x) { return pointwise(Pointwise::sigmoid, x); }
inline Var tanh(Var x) { return pointwise(Pointwise::tanh, x); }
inline Var relu(Var x) { return pointwise(Pointwise::relu, x); }

/// 3x3 convolution, stride 1, zero padding 1. x is [C x H x W] or [B x C x H x W],
/// weight [O x C x 3 x 3].
Var conv2d(Var x, Var weight);

/// Group normalisation with per-channel affine. x is [C x H x W], [B x C x H x W] or [B x C].
Var group_norm(Var x, Var gamma, Var beta, std::size_t groups, double eps = 1e-5);

/// 2x2 average pooling with stride 2 on [B x C x H x W].
Var avg_pool2(Var x);

/// Appends a constant channel holding `t` ([B x C x H x W] -> [B x C+1 x H x W]).
Var append_time_channel(Var x, double t);
/// Appends a constant column holding `t` ([B x d] -> [B x d+1]).
Var append_time_column(Var x, double t);

Var reshape(Var x, Shape shape);
/// Flat slice [offset, offset + product(shape)) viewed as `shape`.
Var slice(Var x, std::size_t offset, Shape shape);
/// Flat concatenation into a rank-1 tensor.
Var concat(std::span<const Var> parts);
/// Columns [start, start + count) of a [B x d] matrix.
Var take_columns(Var x, std::size_t start, std::size_t count);

Var sum(Var x);
Var mean(Var x);
Var abs_sum(Var x);
Var square_sum(Var x);

/// Mean squared error against a constant target of the same shape.
Var mse_loss(Var prediction, const Tensor& target);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace ace
