#pragma once

#include <functional>
#include <span>
#include <vector>

#include "darqn/autograd.hpp"

namespace darqn {

/// Builds a scalar-valued graph from leaf inputs recorded on `tape`.
using GraphFn = std::function<Var(Tape& tape, const std::vector<Var>& inputs)>;

struct GradCheckResult {
  /// Error per input tensor, in the order the inputs were supplied.
  std::vector<double> errors;
  double max_error = 0.0;
};

/// Norm-wise relative error ||a - n|| / max(||a||, ||n||). Falls back to the
/// absolute error ||a - n|| when both norms are below 1e-7, where a relative
/// measure is dominated by rounding noise.
double relative_error(std::span<const double> analytic,
                      std::span<const double> numeric);

/// Compares tape gradients of `fn` with central finite differences
/// (f(x+h) - f(x-h)) / 2h for every element of every input.
GradCheckResult check_gradients(const GraphFn& fn,
                                const std::vector<Tensor>& inputs,
                                double step = 1e-5);

/// Tape gradients of `fn` at `inputs`, one tensor per input.
std::vector<Tensor> tape_gradients(const GraphFn& fn,
                                   const std::vector<Tensor>& inputs);

/// Central-difference gradients of `fn` at `inputs`.
std::vector<Tensor> numeric_gradients(const GraphFn& fn,
                                      const std::vector<Tensor>& inputs,
                                      double step = 1e-5);

}  // namespace darqn
