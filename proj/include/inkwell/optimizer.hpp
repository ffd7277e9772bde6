#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "inkwell/parameter_store.hpp"

namespace inkwell {

enum class OptimizerKind { Adam, SGD };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  float learning_rate = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adam with bias correction, or plain SGD. No weight decay, no clipping.
// One instance per task: the main task and the watermark keep separate
// moment estimates over the same shared parameters.
class Optimizer {
 public:
  struct Moments {
    Tensor m, v;
  };

  explicit Optimizer(OptimizerConfig config);

  // Applies one update to every trainable parameter, then clears the
  // gradients. Throws if any trainable parameter has no gradient.
  void step(ParameterStore& store);

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_learning_rate(float lr) { config_.learning_rate = lr; }

 private:
  OptimizerConfig config_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

}  // namespace inkwell
