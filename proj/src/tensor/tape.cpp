#include "darqn/autograd.hpp"

namespace darqn {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::leaf(Tensor value) {
  const bool tracked = value.requires_grad();
  nodes_.push_back(Node{std::move(value), Tensor(), tracked, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

Var Tape::variable(Tensor value) {
  value.set_requires_grad(true);
  return leaf(std::move(value));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool tracked = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) {
      throw ContractError("op inputs belong to a different tape");
    }
    tracked = tracked || nodes_[in.id()].needs_grad;
  }
  value.set_requires_grad(false);
  nodes_.push_back(Node{std::move(value), Tensor(), tracked, false});
  const std::size_t id = nodes_.size() - 1;
  if (tracked) ops_.push_back(Op{id, std::move(fn)});
  return Var(this, id);
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("loss belongs to another tape");
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  }
  if (backward_done_) throw ContractError("backward() already ran on tape");
  backward_done_ = true;
  Node& root = nodes_[loss.id()];
  if (!root.needs_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);
  root.has_grad = true;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& out = nodes_[it->output];
    if (!out.has_grad) continue;
    it->fn(*this, out.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor* Tape::grad_buffer(const Var& v) {
  Node& n = nodes_[v.id()];
  if (!n.needs_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

}  // namespace darqn
