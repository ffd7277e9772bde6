#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "inkwell/rng.hpp"
#include "inkwell/tensor.hpp"

namespace inkwell {

struct Parameter {
  std::string id;
  Tensor value;
  Tensor grad;  // empty until a backward pass reaches this parameter
  // Buffers such as batch-norm running statistics live in the store so that
  // checkpoints capture them, but optimizers and pruning skip them.
  bool trainable = true;
};

// Single authoritative set of parameters shared by the forward and the
// transposed graph. Iteration order is the lexicographic order of ids.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  Parameter& add(std::string id, Tensor value, bool trainable = true);
  // Fan-in scaled normal init, std = sqrt(2 / fan_in).
  Parameter& add_weight(std::string id, Shape shape, std::size_t fan_in);
  Parameter& add_constant(std::string id, Shape shape, float value, bool trainable = true);

  bool contains(const std::string& id) const { return params_.count(id) != 0; }
  Parameter& at(const std::string& id);
  const Parameter& at(const std::string& id) const;
  void erase(const std::string& id);

  std::map<std::string, Parameter>& entries() { return params_; }
  const std::map<std::string, Parameter>& entries() const { return params_; }

  std::vector<std::string> ids() const;
  std::size_t trainable_count() const;  // number of trainable scalars
  std::size_t size() const { return params_.size(); }

  void zero_grads();
  void clear_grads();

  std::uint64_t seed() const { return seed_; }
  Rng& rng() { return rng_; }

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::map<std::string, Parameter> params_;
};

}  // namespace inkwell
