#pragma once

#include <map>
#include <string>
#include <vector>

#include "cicr/numerics/tensor.hpp"

namespace cicr::num {

struct AdamConfig;

// Named trainable tensors plus their Adam moments. Iteration order is
// insertion order so checkpoints and updates are deterministic.
class ParameterStore {
 public:
  // Registers a parameter (marks it requires_grad) and returns the shared handle.
  Tensor add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t element_count() const;

  // Allocates (if needed) and zeroes every gradient.
  void zero_grads();
  // Scales all gradients so their joint L2 norm is at most max_norm. Returns the pre-clip norm.
  double clip_grad_norm(double max_norm);

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  Moments& moments(const std::string& name);
  const Moments& moments(const std::string& name) const;
  long long step() const { return step_; }
  void set_step(long long step) { step_ = step; }

 private:
  friend void adam_step(ParameterStore&, const AdamConfig&);
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<Tensor> tensors_;
  std::vector<Moments> moments_;
  long long step_ = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Classic Adam; weight decay enters as an extra weight_decay * w gradient term.
void adam_step(ParameterStore& store, const AdamConfig& config);

}  // namespace cicr::num
