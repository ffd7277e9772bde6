#include "inkwell/transpose.hpp"

#include "inkwell/trainer.hpp"

namespace inkwell {

namespace {

const LayerSpec* first_weighted(const std::vector<LayerSpec>& layers) {
  for (const auto& l : layers) {
    if (std::holds_alternative<layer::Linear>(l.kind) || std::holds_alternative<layer::Conv2d>(l.kind)) return &l;
    if (const auto* r = std::get_if<layer::Residual>(&l.kind))
      if (const LayerSpec* inner = first_weighted(r->inner)) return inner;
  }
  return nullptr;
}

struct Transposer {
  float rate;
  const FrozenBranches& frozen;
  const LayerSpec* final_layer;

  void dropout_after(const LayerSpec& l, std::vector<GraphNode>& out) const {
    if (&l != final_layer && rate > 0.0f) out.push_back({l.name + ".drop", node::Dropout{rate}});
  }

  // Appends the transposed form of `layers` (given their per-sample input shape) to `out`.
  void run(const std::vector<LayerSpec>& layers, const Shape& input, std::vector<GraphNode>& out) const {
    std::vector<Shape> in_shapes;
    Shape cur = input;
    for (const auto& l : layers) {
      in_shapes.push_back(cur);
      cur = layer_output_shape(l, cur);
    }
    for (std::size_t i = layers.size(); i-- > 0;) {
      const LayerSpec& l = layers[i];
      const Shape& in = in_shapes[i];
      const std::string tn = l.name + ".T";
      if (std::holds_alternative<layer::Linear>(l.kind)) {
        out.push_back({tn, node::LinearT{l.name + ".weight", l.name + ".bias"}});
        dropout_after(l, out);
      } else if (const auto* c = std::get_if<layer::Conv2d>(&l.kind)) {
        ops::ConvGeometry g{c->kernel, c->stride, c->pad};
        try {
          ops::transposed_output_padding(g, in[1]);
          ops::transposed_output_padding(g, in[2]);
        } catch (const std::exception& e) {
          throw ModelError("layer '" + l.name + "' (Conv2d): no transposed output padding restores " +
                           to_string(in) + ": " + e.what());
        }
        out.push_back({tn, node::ConvT{l.name + ".weight", g, in[1], in[2]}});
        dropout_after(l, out);
      } else if (const auto* b = std::get_if<layer::BatchNorm>(&l.kind)) {
        out.push_back({tn, node::BatchNormT{l.name + ".gamma", l.name + ".beta", b->eps}});
      } else if (const auto* p = std::get_if<layer::MaxPool>(&l.kind)) {
        if (p->stride < 2)
          throw ModelError("layer '" + l.name + "' (MaxPool): stride " + std::to_string(p->stride) +
                           " has no upsampling transpose (factor must be >= 2)");
        out.push_back({tn, node::Upsample{p->stride, in[1], in[2]}});
      } else if (std::holds_alternative<layer::ReLU>(l.kind)) {
        out.push_back({tn, node::Relu{}});
      } else if (const auto* d = std::get_if<layer::Dropout>(&l.kind)) {
        out.push_back({tn, node::Dropout{d->rate}});
      } else if (std::holds_alternative<layer::Flatten>(l.kind)) {
        out.push_back({tn, node::Reshape{in}});
      } else if (const auto* r = std::get_if<layer::Residual>(&l.kind)) {
        auto it = frozen.find(l.name);
        if (it == frozen.end())
          throw ModelError("layer '" + l.name + "' (ResidualBlock): no frozen branch captured");
        if (it->second.shape() != in)
          throw ModelError("layer '" + l.name + "' (ResidualBlock): frozen branch " + to_string(it->second.shape()) +
                           " does not match merge shape " + to_string(in));
        node::ResidualT rt;
        rt.frozen = it->second;
        run(r->inner, in, rt.inner);
        out.push_back({tn, std::move(rt)});
      } else {
        throw ModelError("layer '" + l.name + "' (" + kind_name(l.kind) + "): no transposition rule");
      }
    }
  }
};

}  // namespace

TransposedModel transpose_model(const ModelSpec& spec, const ParameterStore& store, float added_dropout_rate,
                                const FrozenBranches& frozen) {
  if (added_dropout_rate < 0.0f || added_dropout_rate >= 1.0f)
    throw ModelError("added dropout rate must be in [0, 1)");
  const Shape out = validate(spec);
  Transposer tr{added_dropout_rate, frozen, first_weighted(spec.layers)};
  std::vector<GraphNode> nodes;
  tr.run(spec.layers, spec.input_shape, nodes);
  TransposedModel m{Graph(std::move(nodes), out, spec.input_shape), added_dropout_rate, frozen};
  m.graph.check_bindings(store);
  return m;
}

FrozenBranches capture_frozen_branches(const ModelSpec& spec, ParameterStore& store, const Dataset& data,
                                       const WarmupConfig& cfg, Rng& rng) {
  const auto blocks = residual_blocks(spec);
  if (blocks.empty()) throw ModelError("model has no residual blocks to freeze");
  if (cfg.epochs == 0) throw ModelError("frozen branch capture needs at least one warm-up epoch");
  const Graph g = build_forward(spec, store);
  Optimizer opt(cfg.optimizer);
  for (std::size_t e = 0; e < cfg.epochs; ++e) train_epoch(g, store, opt, data, cfg.batch, rng);

  FrozenBranches sums;
  std::size_t seen = 0;
  for (std::size_t b = 0; b < data.size(); b += cfg.batch) {
    const std::size_t e = std::min(data.size(), b + cfg.batch);
    std::map<std::string, Tensor> probe;
    RunContext ctx{Mode::Eval, nullptr, &probe};
    Tape t({.check_finite = false, .track_params = false});
    g.forward(t, t.constant(data.images.slice_batch(b, e)), store, ctx);
    for (auto& [name, act] : probe) {
      const std::size_t per = act.size() / act.dim(0);
      Shape s(act.shape().begin() + 1, act.shape().end());
      auto [it, _] = sums.try_emplace(name, Tensor(s));
      for (std::size_t i = 0; i < act.size(); ++i) it->second[i % per] += act[i];
    }
    seen += e - b;
  }
  for (auto& [_, v] : sums)
    for (auto& x : v.values()) x /= static_cast<float>(seen);
  return sums;
}

ArchivedHead swap_last_layer(ModelSpec& spec, ParameterStore& store, std::size_t new_output_dim) {
  if (spec.layers.empty() || !std::holds_alternative<layer::Linear>(spec.layers.back().kind))
    throw ModelError("swap_last_layer: last layer is not Linear");
  if (new_output_dim == 0) throw ModelError("swap_last_layer: output width must be positive");
  LayerSpec& last = spec.layers.back();
  ArchivedHead head{last, {}};
  for (const auto& id : parameter_ids(last)) {
    head.params.emplace_back(id, store.at(id).value);
    store.erase(id);
  }
  std::get<layer::Linear>(last.kind).out = new_output_dim;
  init_layer(last, store);
  spec.output_dim = new_output_dim;
  return head;
}

void restore_last_layer(ModelSpec& spec, ParameterStore& store, const ArchivedHead& head) {
  if (spec.layers.empty() || spec.layers.back().name != head.layer.name)
    throw ModelError("restore_last_layer: archived head '" + head.layer.name + "' does not match the model");
  for (const auto& id : parameter_ids(spec.layers.back()))
    if (store.contains(id)) store.erase(id);
  spec.layers.back() = head.layer;
  for (const auto& [id, value] : head.params) store.add(id, value);
  spec.output_dim = std::get<layer::Linear>(head.layer.kind).out;
}

}  // namespace inkwell
