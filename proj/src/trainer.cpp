#include "inkwell/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace inkwell {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
  return v;
}

Tensor gather_images(const Dataset& d, std::span<const std::size_t> idx) {
  const std::size_t per = d.images.size() / d.images.dim(0);
  Shape shape = d.images.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(d.images.data() + idx[k] * per, d.images.data() + (idx[k] + 1) * per, out.data() + k * per);
  return out;
}

std::vector<int> gather_labels(const Dataset& d, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = d.labels[idx[k]];
  return out;
}

double classification_step(const Graph& g, ParameterStore& store, Optimizer& opt, const Tensor& x,
                           std::span<const int> y, Rng& rng) {
  Tape t;
  RunContext ctx{Mode::Train, &rng, nullptr};
  Var logits = g.forward(t, t.constant_ref(x), store, ctx);
  Var loss = ops::cross_entropy(t, logits, y);
  const double l = t.value(loss)[0];
  if (!std::isfinite(l)) throw std::runtime_error("classification loss is not finite");
  t.backward(loss, &store);
  opt.step(store);
  return l;
}

EpochStats train_epoch(const Graph& g, ParameterStore& store, Optimizer& opt, const Dataset& d, std::size_t batch,
                       Rng& rng) {
  EpochStats s;
  double total = 0.0;
  for_each_batch(d, batch, rng, [&](const Tensor& x, const std::vector<int>& y) {
    total += classification_step(g, store, opt, x, y, rng);
    ++s.steps;
  });
  s.mean_loss = s.steps ? total / static_cast<double>(s.steps) : 0.0;
  return s;
}

}  // namespace inkwell
