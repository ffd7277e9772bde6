#include "inkwell/metrics.hpp"

namespace inkwell {

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw MetricError("mse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (a.empty()) throw MetricError("mse: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double accuracy(const Graph& g, ParameterStore& store, const Dataset& d) {
  if (d.size() == 0) throw MetricError("accuracy: empty dataset");
  const std::vector<int> pred = g.predict(d.images, store);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == d.labels[i];
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

double ber(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size())
    throw MetricError("ber: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) throw MetricError("ber: empty bit strings");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < a.size(); ++i) wrong += (a[i] != 0) != (b[i] != 0);
  return static_cast<double>(wrong) / static_cast<double>(a.size());
}

}  // namespace inkwell
