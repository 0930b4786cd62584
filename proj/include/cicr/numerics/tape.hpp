#pragma once

#include <functional>
#include <vector>

#include "cicr/numerics/tensor.hpp"

namespace cicr::num {

// Ordered record of differentiable operations.
//
// Every op appends one node after its inputs exist, so the node list is already
// in topological order and backward() is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

  // True when an op over `inputs` has to be recorded.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients of leaf tensors
  // accumulate across calls; intermediate gradients are reset on each call.
  void backward(const Tensor& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  bool enabled_ = true;
};

// Disables recording for its lifetime.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.enabled()) { tape_.set_enabled(false); }
  ~NoGradGuard() { tape_.set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

}  // namespace cicr::num
