#include "inkwell/graph.hpp"

#include <algorithm>
#include <set>

namespace inkwell {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Parameter& bind(ParameterStore& store, const std::string& id) {
  if (!store.contains(id)) throw ModelError("unbound parameter id '" + id + "'");
  return store.at(id);
}

Var run_nodes(const std::vector<GraphNode>& nodes, Tape& t, Var x, ParameterStore& store, RunContext& ctx);

Var run_node(const GraphNode& n, Tape& t, Var x, ParameterStore& store, RunContext& ctx) {
  return std::visit(
      overloaded{
          [&](const node::Linear& s) {
            return ops::linear(t, x, t.param(bind(store, s.weight)), t.param(bind(store, s.bias)));
          },
          [&](const node::LinearT& s) {
            return ops::linear_transposed(t, x, t.param(bind(store, s.weight)), t.param(bind(store, s.bias)));
          },
          [&](const node::Conv& s) {
            return ops::conv2d(t, x, t.param(bind(store, s.weight)), t.param(bind(store, s.bias)), s.geometry);
          },
          [&](const node::ConvT& s) {
            return ops::conv_transpose2d(t, x, t.param(bind(store, s.weight)), s.geometry, s.out_h, s.out_w);
          },
          [&](const node::BatchNorm& s) {
            Tensor& rm = bind(store, s.running_mean).value;
            Tensor& rv = bind(store, s.running_var).value;
            return ops::batch_norm(t, x, t.param(bind(store, s.gamma)), t.param(bind(store, s.beta)), rm, rv, s.eps,
                                   s.momentum, ctx.train());
          },
          [&](const node::BatchNormT& s) {
            return ops::batch_norm_transposed(t, x, t.param(bind(store, s.gamma)), t.param(bind(store, s.beta)),
                                              s.eps);
          },
          [&](const node::MaxPool& s) { return ops::max_pool2d(t, x, s.kernel, s.stride); },
          [&](const node::Upsample& s) { return ops::upsample_nearest(t, x, s.factor, s.out_h, s.out_w); },
          [&](const node::Relu&) { return ops::relu(t, x); },
          [&](const node::Dropout& s) {
            if (ctx.train() && s.rate > 0.0f && !ctx.rng) throw ModelError("dropout in train mode needs an rng");
            Rng dummy(0);
            return ops::dropout(t, x, s.rate, ctx.rng ? *ctx.rng : dummy, ctx.train());
          },
          [&](const node::Reshape& s) {
            Shape shape{t.value(x).dim(0)};
            shape.insert(shape.end(), s.shape.begin(), s.shape.end());
            return ops::reshape(t, x, std::move(shape));
          },
          [&](const node::Residual& s) {
            if (ctx.probe) (*ctx.probe)[n.name] = t.value(x);
            Var inner = run_nodes(s.inner, t, x, store, ctx);
            return ops::add(t, inner, x);
          },
          [&](const node::ResidualT& s) {
            const Tensor& c = t.value(x);
            if (c.size() % s.frozen.size() != 0 || c.size() / c.dim(0) != s.frozen.size())
              throw ShapeError("frozen branch " + to_string(s.frozen.shape()) + " does not match " +
                               to_string(c.shape()));
            Tensor tiled(c.shape());
            const std::size_t per = s.frozen.size();
            for (std::size_t i = 0; i < c.dim(0); ++i)
              std::copy(s.frozen.data(), s.frozen.data() + per, tiled.data() + i * per);
            Var a = ops::sub(t, x, t.constant(std::move(tiled)));
            return run_nodes(s.inner, t, a, store, ctx);
          }},
      n.kind);
}

Var run_nodes(const std::vector<GraphNode>& nodes, Tape& t, Var x, ParameterStore& store, RunContext& ctx) {
  for (const auto& n : nodes) {
    try {
      x = run_node(n, t, x, store, ctx);
    } catch (const ModelError& e) {
      if (std::string(e.what()).rfind("node '", 0) == 0) throw;
      throw ModelError("node '" + n.name + "' (" + kind_name(n.kind) + "): " + e.what());
    } catch (const std::exception& e) {
      throw ModelError("node '" + n.name + "' (" + kind_name(n.kind) + "): " + e.what());
    }
  }
  return x;
}

void collect_ids(const std::vector<GraphNode>& nodes, std::vector<std::pair<std::string, std::string>>& out) {
  for (const auto& n : nodes) {
    auto add = [&](const std::string& id) { out.emplace_back(n.name, id); };
    std::visit(overloaded{[&](const node::Linear& s) { add(s.weight), add(s.bias); },
                          [&](const node::LinearT& s) { add(s.weight), add(s.bias); },
                          [&](const node::Conv& s) { add(s.weight), add(s.bias); },
                          [&](const node::ConvT& s) { add(s.weight); },
                          [&](const node::BatchNorm& s) {
                            add(s.gamma), add(s.beta), add(s.running_mean), add(s.running_var);
                          },
                          [&](const node::BatchNormT& s) { add(s.gamma), add(s.beta); },
                          [&](const node::Residual& s) { collect_ids(s.inner, out); },
                          [&](const node::ResidualT& s) { collect_ids(s.inner, out); },
                          [](const auto&) {}},
               n.kind);
  }
}

GraphNode lower(const LayerSpec& l, Shape& cur) {
  const std::string& n = l.name;
  const Shape out = layer_output_shape(l, cur);
  GraphNode g = std::visit(
      overloaded{[&](const layer::Linear&) { return GraphNode{n, node::Linear{n + ".weight", n + ".bias"}}; },
                 [&](const layer::Conv2d& s) {
                   return GraphNode{n, node::Conv{n + ".weight", n + ".bias", {s.kernel, s.stride, s.pad}}};
                 },
                 [&](const layer::BatchNorm& s) {
                   return GraphNode{n, node::BatchNorm{n + ".gamma", n + ".beta", n + ".running_mean",
                                                       n + ".running_var", s.eps, s.momentum}};
                 },
                 [&](const layer::MaxPool& s) { return GraphNode{n, node::MaxPool{s.kernel, s.stride}}; },
                 [&](const layer::ReLU&) { return GraphNode{n, node::Relu{}}; },
                 [&](const layer::Dropout& s) { return GraphNode{n, node::Dropout{s.rate}}; },
                 [&](const layer::Flatten&) { return GraphNode{n, node::Reshape{out}}; },
                 [&](const layer::Residual& s) {
                   node::Residual r;
                   Shape inner_shape = cur;
                   for (const auto& inner : s.inner) r.inner.push_back(lower(inner, inner_shape));
                   return GraphNode{n, std::move(r)};
                 }},
      l.kind);
  cur = out;
  return g;
}

}  // namespace

std::string kind_name(const NodeKind& kind) {
  static const char* names[] = {"Linear",  "LinearT", "Conv",    "ConvT",   "BatchNorm", "BatchNormT", "MaxPool",
                                "Upsample", "ReLU",    "Dropout", "Reshape", "Residual",  "ResidualT"};
  return names[kind.index()];
}

Graph::Graph(std::vector<GraphNode> nodes, Shape input_shape, Shape output_shape)
    : nodes_(std::move(nodes)), input_shape_(std::move(input_shape)), output_shape_(std::move(output_shape)) {
  if (nodes_.empty()) throw ModelError("graph has no nodes");
}

Var Graph::forward(Tape& t, Var x, ParameterStore& store, RunContext& ctx) const {
  const Shape& in = t.value(x).shape();
  if (in.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), in.begin() + 1))
    throw ModelError("graph input " + to_string(in) + " does not match (N, " + to_string(input_shape_) + ")");
  return run_nodes(nodes_, t, x, store, ctx);
}

Tensor Graph::infer(const Tensor& x, ParameterStore& store, std::size_t batch) const {
  if (x.rank() == 0 || x.dim(0) == 0) throw ModelError("infer: empty input");
  const std::size_t n = x.dim(0);
  Shape out_shape{n};
  out_shape.insert(out_shape.end(), output_shape_.begin(), output_shape_.end());
  Tensor out(out_shape);
  const std::size_t per = numel(output_shape_);
  RunContext ctx;
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    Tape t({.check_finite = false, .track_params = false});
    Var y = forward(t, t.constant(b == 0 && e == n ? x : x.slice_batch(b, e)), store, ctx);
    const Tensor& v = t.value(y);
    std::copy(v.data(), v.data() + v.size(), out.data() + b * per);
  }
  return out;
}

std::vector<int> Graph::predict(const Tensor& x, ParameterStore& store, std::size_t batch) const {
  const Tensor logits = infer(x, store, batch);
  const std::size_t n = logits.dim(0), k = logits.size() / n;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

std::vector<std::string> Graph::parameter_ids() const {
  std::vector<std::pair<std::string, std::string>> pairs;
  collect_ids(nodes_, pairs);
  std::set<std::string> ids;
  for (auto& [_, id] : pairs) ids.insert(id);
  return {ids.begin(), ids.end()};
}

void Graph::check_bindings(const ParameterStore& store) const {
  std::vector<std::pair<std::string, std::string>> pairs;
  collect_ids(nodes_, pairs);
  for (auto& [name, id] : pairs)
    if (!store.contains(id)) throw ModelError("node '" + name + "': unbound parameter id '" + id + "'");
}

std::vector<std::string> Graph::describe() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_) out.push_back(kind_name(n.kind));
  return out;
}

Graph build_forward(const ModelSpec& spec, const ParameterStore& store) {
  const Shape out = validate(spec);
  std::vector<GraphNode> nodes;
  Shape cur = spec.input_shape;
  for (const auto& l : spec.layers) nodes.push_back(lower(l, cur));
  Graph g(std::move(nodes), spec.input_shape, out);
  g.check_bindings(store);
  return g;
}

}  // namespace inkwell
