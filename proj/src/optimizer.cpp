#include "inkwell/optimizer.hpp"

#include <cmath>

#include <Eigen/Core>

namespace inkwell {

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0f)) throw std::invalid_argument("learning rate must be positive");
}

void Optimizer::step(ParameterStore& store) {
  std::string missing;
  for (const auto& [id, p] : store.entries()) {
    if (!p.trainable) continue;
    if (p.grad.empty()) {
      missing += missing.empty() ? id : ", " + id;
    } else if (p.grad.shape() != p.value.shape()) {
      throw OptimizerError("gradient of '" + id + "' has shape " + to_string(p.grad.shape()) + ", expected " +
                           to_string(p.value.shape()));
    }
  }
  if (!missing.empty()) throw OptimizerError("missing gradients for: " + missing);

  ++t_;
  const float lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::SGD) {
    for (auto& [id, p] : store.entries()) {
      if (!p.trainable) continue;
      const auto n = static_cast<Eigen::Index>(p.value.size());
      Eigen::Map<Eigen::ArrayXf>(p.value.data(), n) -= lr * Eigen::Map<const Eigen::ArrayXf>(p.grad.data(), n);
      p.grad = Tensor{};
    }
    return;
  }

  const float b1 = config_.beta1, b2 = config_.beta2, eps = config_.eps;
  const float c1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(b1), static_cast<double>(t_)));
  const float c2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(b2), static_cast<double>(t_)));
  for (auto& [id, p] : store.entries()) {
    if (!p.trainable) continue;
    auto& mom = moments_[id];
    if (mom.m.shape() != p.value.shape()) {
      // New or re-shaped parameter (e.g. a swapped head): fresh moments.
      mom.m = Tensor::zeros(p.value.shape());
      mom.v = Tensor::zeros(p.value.shape());
    }
    const auto n = static_cast<Eigen::Index>(p.value.size());
    Eigen::Map<Eigen::ArrayXf> w(p.value.data(), n), m(mom.m.data(), n), v(mom.v.data(), n);
    Eigen::Map<const Eigen::ArrayXf> g(p.grad.data(), n);
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    w -= (lr / c1) * m / ((v / c2).sqrt() + eps);
    p.grad = Tensor{};
  }
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::SGD;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or sgd)");
}

}  // namespace inkwell
