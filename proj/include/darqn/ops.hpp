#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "darqn/autograd.hpp"

/// Differentiable primitives. Every op records its local gradient rule on the
/// tape owning its inputs.
namespace darqn::ops {

enum class Elementwise { Add, Sub, Mul, Tanh, Relu, Sigmoid, Log, Neg, Scale };

/// Dispatcher over the pointwise family. Binary ops take two equally shaped
/// inputs; unary ops take one. `factor` is used by Scale only.
Var elementwise(Elementwise op, std::span<const Var> inputs,
                double factor = 1.0);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
Var tanh(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
/// Throws DomainError on any non-positive entry.
Var log(const Var& a);
Var abs(const Var& a);
/// Pointwise clamp; the gradient is zero where the input was clipped.
Var clamp(const Var& a, double lo, double hi);

/// [m x k] . [k x n] -> [m x n]
Var matmul(const Var& a, const Var& b);
/// x . W^T for x [n x in], W [out x in] -> [n x out]
Var linear(const Var& x, const Var& weight);
/// x [n x d] + b [d] broadcast over rows (1-D x is treated as one row).
Var add_bias(const Var& x, const Var& bias);
/// x [C x H x W] or [N x C x H x W] plus b[C] on every spatial position.
Var add_channel_bias(const Var& x, const Var& bias);

/// Softmax along the last axis of a [L] or [n x L] tensor, computed with
/// max-subtraction. Throws NumericError on non-finite logits.
Var softmax(const Var& logits);

/// Valid (unpadded) cross-correlation. `input` is [C x H x W] or
/// [N x C x H x W]; `kernels` is [F x C x kh x kw].
Var conv2d(const Var& input, const Var& kernels, std::size_t stride);
/// Zero padding of the two trailing (spatial) axes.
Var pad2d(const Var& input, std::size_t pad);
/// Nearest-neighbour 2x upsampling of the two trailing axes.
Var upsample2x(const Var& input);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(const Var& x, Shape shape);

Var sum(const Var& x);
Var mean(const Var& x);

/// [n x d] -> [n*times x d]; row i*times+t is a copy of row i.
Var repeat_rows(const Var& x, std::size_t times);
/// Scales row i of x [n x d] by s[i].
Var row_scale(const Var& x, const Var& s);
/// [n*group x d] -> [n x d] summing consecutive blocks of `group` rows.
Var group_sum_rows(const Var& x, std::size_t group);
/// out[i] = x[i, index[i]] for x [n x k].
Var pick(const Var& x, std::span<const std::size_t> index);

}  // namespace darqn::ops

namespace darqn {

inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }
inline Var operator-(const Var& a) { return ops::neg(a); }

}  // namespace darqn
