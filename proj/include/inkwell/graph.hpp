#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "inkwell/autograd.hpp"
#include "inkwell/model_spec.hpp"
#include "inkwell/ops.hpp"

namespace inkwell {

enum class Mode { Train, Eval };

struct RunContext {
  Mode mode = Mode::Eval;
  Rng* rng = nullptr;  // required when a dropout node runs in train mode
  // When set, residual blocks store their per-batch input here, keyed by block name.
  std::map<std::string, Tensor>* probe = nullptr;

  bool train() const { return mode == Mode::Train; }
};

struct GraphNode;

namespace node {
struct Linear {
  std::string weight, bias;
};
struct LinearT {
  std::string weight, bias;
};
struct Conv {
  std::string weight, bias;
  ops::ConvGeometry geometry;
};
struct ConvT {
  std::string weight;
  ops::ConvGeometry geometry;
  std::size_t out_h = 0, out_w = 0;
};
struct BatchNorm {
  std::string gamma, beta, running_mean, running_var;
  float eps = 1e-5f, momentum = 0.1f;
};
struct BatchNormT {
  std::string gamma, beta;
  float eps = 1e-5f;
};
struct MaxPool {
  std::size_t kernel = 2, stride = 2;
};
struct Upsample {
  std::size_t factor = 2, out_h = 0, out_w = 0;
};
struct Relu {};
struct Dropout {
  float rate = 0.0f;
};
struct Reshape {
  Shape shape;  // per sample
};
// out = inner(x) + x
struct Residual {
  std::vector<GraphNode> inner;
};
// x = inner(c - frozen), frozen broadcast over the batch
struct ResidualT {
  std::vector<GraphNode> inner;
  Tensor frozen;  // per-sample shape
};
}  // namespace node

using NodeKind = std::variant<node::Linear, node::LinearT, node::Conv, node::ConvT, node::BatchNorm, node::BatchNormT,
                              node::MaxPool, node::Upsample, node::Relu, node::Dropout, node::Reshape, node::Residual,
                              node::ResidualT>;

struct GraphNode {
  std::string name;
  NodeKind kind;
};

std::string kind_name(const NodeKind& kind);

// Executable layer list bound by parameter id to a ParameterStore. The graph
// holds no parameter values itself, so any number of graphs can share a store.
class Graph {
 public:
  Graph() = default;
  Graph(std::vector<GraphNode> nodes, Shape input_shape, Shape output_shape);

  // x is (N, input_shape...). Errors name the failing node.
  Var forward(Tape& t, Var x, ParameterStore& store, RunContext& ctx) const;

  // Eval-mode batched inference without gradient tracking.
  Tensor infer(const Tensor& x, ParameterStore& store, std::size_t batch = 256) const;
  // Argmax class per row of infer().
  std::vector<int> predict(const Tensor& x, ParameterStore& store, std::size_t batch = 256) const;

  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }

  // Distinct parameter ids referenced by any node, sorted.
  std::vector<std::string> parameter_ids() const;
  // Throws ModelError naming the first node whose id is missing from `store`.
  void check_bindings(const ParameterStore& store) const;
  // Top-level node kinds in execution order, e.g. {"LinearT", "Dropout", ...}.
  std::vector<std::string> describe() const;

 private:
  std::vector<GraphNode> nodes_;
  Shape input_shape_, output_shape_;
};

// Forward graph of `spec`, with every parameter id checked against `store`.
Graph build_forward(const ModelSpec& spec, const ParameterStore& store);

}  // namespace inkwell
