#include "darqn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace darqn {
namespace {

double evaluate(const GraphFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return fn(tape, vars).value().item();
}

}  // namespace

double relative_error(std::span<const double> analytic,
                      std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  diff = std::sqrt(diff);
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  if (scale < 1e-7) return diff;
  return diff / scale;
}

std::vector<Tensor> tape_gradients(const GraphFn& fn,
                                   const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  Var loss = fn(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (const auto& v : vars) grads.push_back(tape.grad(v));
  return grads;
}

std::vector<Tensor> numeric_gradients(const GraphFn& fn,
                                      const std::vector<Tensor>& inputs,
                                      double step) {
  std::vector<Tensor> probe = inputs;
  std::vector<Tensor> grads;
  grads.reserve(inputs.size());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    Tensor g(probe[k].shape());
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + step;
      const double up = evaluate(fn, probe);
      probe[k][i] = orig - step;
      const double down = evaluate(fn, probe);
      probe[k][i] = orig;
      g[i] = (up - down) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

GradCheckResult check_gradients(const GraphFn& fn,
                                const std::vector<Tensor>& inputs,
                                double step) {
  const auto analytic = tape_gradients(fn, inputs);
  const auto numeric = numeric_gradients(fn, inputs, step);
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const double e = relative_error(analytic[k].data(), numeric[k].data());
    result.errors.push_back(e);
    result.max_error = std::max(result.max_error, e);
  }
  return result;
}

}  // namespace darqn
