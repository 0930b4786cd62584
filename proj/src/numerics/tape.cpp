#include "cicr/numerics/tape.hpp"

namespace cicr::num {

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!enabled_) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1 || loss.rank() > 2)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (nodes_.empty()) throw ContractError("backward() on an empty tape");

  for (auto& node : nodes_) {
    node.output.clear_grad();
  }
  Tensor seed = loss;
  seed.grad_mut()[0] += 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) it->fn();
  }
}

}  // namespace cicr::num
