#include "inkwell/autograd.hpp"

#include <algorithm>

namespace inkwell {

namespace {

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
    dst.requires_grad = false;
    return;
  }
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

Var Tape::constant(Tensor value) {
  if (options_.check_finite && !value.all_finite())
    throw AutogradError("non-finite constant recorded on tape");
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, nullptr, false});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant_ref(const Tensor& value) {
  if (options_.check_finite && !value.all_finite())
    throw AutogradError("non-finite constant recorded on tape");
  nodes_.push_back(Node{"constant", Tensor{}, {}, {}, nullptr, false, &value});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  if (!options_.track_params || !p.trainable) return constant_ref(p.value);
  if (options_.check_finite && !p.value.all_finite())
    throw AutogradError("parameter '" + p.id + "' holds non-finite values");
  nodes_.push_back(Node{"param", Tensor{}, {}, {}, &p, true, &p.value});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{"variable", std::move(value), {}, {}, nullptr, true});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  if (options_.check_finite && !value.all_finite())
    throw AutogradError(std::string("non-finite output from op '") + op + "'");
  bool needs = false;
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw AutogradError(std::string("op '") + op + "' uses an unknown value");
    needs = needs || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{op, std::move(value), std::vector<Var>(inputs), needs ? std::move(fn) : BackwardFn{},
                        nullptr, needs});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::backward(Var loss, ParameterStore* store) {
  if (!loss.valid() || loss.id >= nodes_.size()) throw AutogradError("loss is not on this tape");
  const Tensor& root = nodes_[loss.id].get();
  if (root.size() != 1) throw AutogradError("loss must be a scalar, got " + to_string(root.shape()));

  grads_.assign(nodes_.size(), Tensor{});
  grads_[loss.id] = Tensor(root.shape(), 1.0f);

  std::vector<const Tensor*> in;
  std::vector<Tensor*> in_grad;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || grads_[i].empty() || !node.backward) continue;
    in.clear();
    in_grad.clear();
    for (Var v : node.inputs) {
      in.push_back(&nodes_[v.id].get());
      if (nodes_[v.id].requires_grad) {
        if (grads_[v.id].empty()) grads_[v.id] = Tensor::zeros(nodes_[v.id].get().shape());
        in_grad.push_back(&grads_[v.id]);
      } else {
        in_grad.push_back(nullptr);
      }
    }
    node.backward(BackwardContext{grads_[i], node.get(), in, in_grad});
    if (options_.check_finite)
      for (Tensor* g : in_grad)
        if (g && !g->all_finite()) throw AutogradError(std::string("non-finite gradient below op '") + node.op + "'");
  }

  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& node = nodes_[i];
    if (!node.param || grads_[i].empty()) continue;
    if (node.param->grad.empty())
      node.param->grad = std::move(grads_[i]);  // grad() of a parameter node is not kept
    else
      add_into(node.param->grad, grads_[i]);
  }
  if (store) {
    for (auto& [id, p] : store->entries())
      if (p.trainable && p.grad.empty()) p.grad = Tensor::zeros(p.value.shape());
  }
}

const Tensor& Tape::grad(Var v) const {
  static const Tensor empty;
  if (v.id >= grads_.size()) return empty;
  return grads_[v.id];
}

}  // namespace inkwell
