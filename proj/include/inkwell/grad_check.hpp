#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "inkwell/autograd.hpp"

namespace inkwell {

struct GradCheckReport {
  // Largest |analytic - numeric| / max(1, |analytic|, |numeric|) over all
  // input elements. The unit floor keeps near-zero gradients from reporting
  // huge ratios caused only by float round-off.
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_error <= tolerance; }
  std::string summary() const;
};

using OpUnderTest = std::function<Var(Tape&, std::span<const Var>)>;

// Compares reverse-mode gradients of sum(op(inputs) * r), r a fixed random
// projection, against central differences with step h. Inputs should be small
// (<= 512 elements each).
GradCheckReport grad_check(const OpUnderTest& op, std::vector<Tensor> inputs, double tolerance, float h = 1e-3f,
                           std::uint64_t seed = 7);

}  // namespace inkwell
