#include "inkwell/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "inkwell/ops.hpp"
#include "inkwell/rng.hpp"

namespace inkwell {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (pass() ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error << " (tol " << tolerance << ", input "
     << worst_input << " index " << worst_index << ")";
  return os.str();
}

namespace {

double projected(const OpUnderTest& op, const std::vector<Tensor>& inputs, std::vector<float>& proj, Rng& rng) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Tensor& out = tape.value(op(tape, vars));
  if (proj.empty()) {
    proj.resize(out.size());
    for (auto& p : proj) p = rng.uniform(-1.0f, 1.0f);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * proj[i];
  return s;
}

}  // namespace

GradCheckReport grad_check(const OpUnderTest& op, std::vector<Tensor> inputs, double tolerance, float h,
                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> proj;
  projected(op, inputs, proj, rng);

  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  Var out = op(tape, vars);
  Var loss = ops::sum(tape, ops::mul(tape, out, tape.constant(Tensor(tape.value(out).shape(), proj))));
  tape.backward(loss);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const float orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double up = projected(op, inputs, proj, rng);
      inputs[k][i] = orig - h;
      const double down = projected(op, inputs, proj, rng);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = k;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace inkwell
