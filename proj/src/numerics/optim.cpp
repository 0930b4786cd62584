#include "cicr/numerics/optim.hpp"

#include <cmath>

namespace cicr::num {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  index_[name] = tensors_.size();
  names_.push_back(name);
  moments_.push_back(Moments{std::vector<double>(value.size(), 0.0), std::vector<double>(value.size(), 0.0)});
  tensors_.push_back(std::move(value));
  return tensors_.back();
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return tensors_[it->second];
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return tensors_[it->second];
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& t : tensors_) {
    t.grad_mut();
    t.zero_grad();
  }
}

double ParameterStore::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& t : tensors_)
    for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& t : tensors_)
      for (double& g : t.grad_mut()) g *= f;
  }
  return norm;
}

ParameterStore::Moments& ParameterStore::moments(const std::string& name) {
  get(name);
  return moments_[index_.at(name)];
}

const ParameterStore::Moments& ParameterStore::moments(const std::string& name) const {
  get(name);
  return moments_[index_.at(name)];
}

void adam_step(ParameterStore& store, const AdamConfig& config) {
  std::string missing;
  for (std::size_t i = 0; i < store.tensors_.size(); ++i)
    if (!store.tensors_[i].has_grad()) missing += (missing.empty() ? "" : ", ") + store.names_[i];
  if (!missing.empty()) throw ContractError("adam_step: no gradient for " + missing);

  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < store.tensors_.size(); ++i) {
    Tensor& w = store.tensors_[i];
    auto& mom = store.moments_[i];
    auto wv = w.values_mut();
    auto g = w.grad();
    for (std::size_t j = 0; j < wv.size(); ++j) {
      const double grad = g[j] + config.weight_decay * wv[j];
      mom.m[j] = config.beta1 * mom.m[j] + (1.0 - config.beta1) * grad;
      mom.v[j] = config.beta2 * mom.v[j] + (1.0 - config.beta2) * grad * grad;
      const double mhat = mom.m[j] / bc1;
      const double vhat = mom.v[j] / bc2;
      wv[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace cicr::num
