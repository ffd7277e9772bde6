#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "inkwell/data.hpp"
#include "inkwell/graph.hpp"
#include "inkwell/ssim.hpp"

namespace inkwell {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mean of squared differences.
double mse(const Tensor& a, const Tensor& b);

// Fraction of argmax-correct predictions in eval mode.
double accuracy(const Graph& g, ParameterStore& store, const Dataset& d);

// Wrong bits / total bits.
double ber(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

}  // namespace inkwell
