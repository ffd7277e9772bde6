#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "inkwell/parameter_store.hpp"
#include "inkwell/tensor.hpp"

namespace inkwell {

// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

struct BackwardContext {
  const Tensor& grad_out;
  const Tensor& out;
  std::span<const Tensor* const> in;
  // nullptr where the input does not require a gradient. Backward functions
  // accumulate (+=) into these buffers.
  std::span<Tensor* const> in_grad;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

class AutogradError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Append-only record of differentiable operations. Nodes are stored in
// creation order, which is a topological order.
class Tape {
 public:
  struct Options {
    bool check_finite = false;  // raise on NaN/Inf in any recorded value
    bool track_params = true;   // false: parameters enter as constants (inference)
  };

  Tape() = default;
  explicit Tape(Options options) : options_(options) {}

  Var constant(Tensor value);
  // Records a reference; `value` must outlive the tape and stay unchanged.
  Var constant_ref(const Tensor& value);
  Var param(Parameter& p);
  // Free leaf that requires a gradient (read it back with grad()).
  Var variable(Tensor value);
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id).get(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const char* op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }
  const Options& options() const { return options_; }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every parameter
  // reached. When `store` is given, parameters it holds that were not reached
  // get a zero gradient so the optimizer sees a complete set.
  void backward(Var loss, ParameterStore* store = nullptr);

  // Gradient of the last backward pass for a non-parameter node (tests, grad
  // checks). Parameter gradients are handed to Parameter::grad instead.
  const Tensor& grad(Var v) const;

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    const Tensor* external = nullptr;  // parameters and borrowed constants

    const Tensor& get() const { return external ? *external : value; }
  };

  Options options_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

}  // namespace inkwell
