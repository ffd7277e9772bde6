#pragma once

#include <span>
#include <vector>

#include "inkwell/data.hpp"
#include "inkwell/graph.hpp"
#include "inkwell/optimizer.hpp"

namespace inkwell {

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

// Random permutation of [0, n).
std::vector<std::size_t> shuffled(std::size_t n, Rng& rng);
// Images and labels of the given indices.
Tensor gather_images(const Dataset& d, std::span<const std::size_t> idx);
std::vector<int> gather_labels(const Dataset& d, std::span<const std::size_t> idx);

// One cross-entropy step on a minibatch. Returns the loss.
double classification_step(const Graph& g, ParameterStore& store, Optimizer& opt, const Tensor& x,
                           std::span<const int> y, Rng& rng);

// Invokes fn(images, labels) for each shuffled minibatch of one epoch.
template <class Fn>
void for_each_batch(const Dataset& d, std::size_t batch, Rng& rng, Fn&& fn) {
  const auto order = shuffled(d.size(), rng);
  for (std::size_t b = 0; b < order.size(); b += batch) {
    std::span<const std::size_t> idx(order.data() + b, std::min(batch, order.size() - b));
    fn(gather_images(d, idx), gather_labels(d, idx));
  }
}

// Plain cross-entropy training for one epoch.
EpochStats train_epoch(const Graph& g, ParameterStore& store, Optimizer& opt, const Dataset& d, std::size_t batch,
                       Rng& rng);

}  // namespace inkwell
