#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "darqn/tensor.hpp"

namespace darqn {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic record of primitive operations for reverse-mode differentiation.
///
/// Ops are appended in execution order, which is a topological order of the
/// graph, so backward() walks the op list once in reverse. A tape is confined
/// to one thread and is rebuilt for every forward pass.
class Tape {
 public:
  /// Receives the gradient of the op output; accumulates into input grads.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked iff value.requires_grad() is set.
  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Appends an op. `fn` is stored only if some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every tracked node.
  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }

  /// Gradient after backward(); zeros if nothing flowed into `v`.
  Tensor grad(const Var& v) const;

  /// Gradient buffer for an input inside a BackwardFn; nullptr if untracked.
  Tensor* grad_buffer(const Var& v);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return ops_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
  };
  struct Op {
    std::size_t output;
    BackwardFn fn;
  };

  std::deque<Node> nodes_;
  std::vector<Op> ops_;
  bool backward_done_ = false;
};

}  // namespace darqn
