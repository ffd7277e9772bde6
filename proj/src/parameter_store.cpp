#include "inkwell/parameter_store.hpp"

#include <cmath>
#include <stdexcept>

namespace inkwell {

Parameter& ParameterStore::add(std::string id, Tensor value, bool trainable) {
  if (params_.count(id)) throw std::invalid_argument("duplicate parameter id '" + id + "'");
  Parameter p{id, std::move(value), Tensor{}, trainable};
  p.value.requires_grad = trainable;
  return params_.emplace(id, std::move(p)).first->second;
}

Parameter& ParameterStore::add_weight(std::string id, Shape shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
  for (auto& v : t.values()) v = rng_.normal(0.0f, stddev);
  return add(std::move(id), std::move(t));
}

Parameter& ParameterStore::add_constant(std::string id, Shape shape, float value, bool trainable) {
  return add(std::move(id), Tensor(std::move(shape), value), trainable);
}

Parameter& ParameterStore::at(const std::string& id) {
  auto it = params_.find(id);
  if (it == params_.end()) throw std::out_of_range("unbound parameter id '" + id + "'");
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& id) const {
  auto it = params_.find(id);
  if (it == params_.end()) throw std::out_of_range("unbound parameter id '" + id + "'");
  return it->second;
}

void ParameterStore::erase(const std::string& id) { params_.erase(id); }

std::vector<std::string> ParameterStore::ids() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [id, p] : params_) out.push_back(id);
  return out;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [id, p] : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& [id, p] : params_) p.grad = Tensor::zeros(p.value.shape());
}

void ParameterStore::clear_grads() {
  for (auto& [id, p] : params_) p.grad = Tensor{};
}

}  // namespace inkwell
