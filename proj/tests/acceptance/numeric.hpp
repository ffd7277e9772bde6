#pragma once

#include <string>

namespace inkwell::acceptance {

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome numerical_soundness();
Outcome weight_sharing();
Outcome residual_toy_oracle();

}  // namespace inkwell::acceptance
