#include "inkwell/model_spec.hpp"

#include <type_traits>

#include "inkwell/ops.hpp"

namespace inkwell {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void fail(const LayerSpec& layer, const std::string& msg) {
  throw ModelError("layer '" + layer.name + "' (" + kind_name(layer.kind) + "): " + msg);
}

std::size_t features_of(const Shape& s) { return numel(s); }

}  // namespace

std::string kind_name(const LayerKind& kind) {
  return std::visit(overloaded{[](const layer::Linear&) { return std::string("Linear"); },
                               [](const layer::Conv2d&) { return std::string("Conv2d"); },
                               [](const layer::BatchNorm&) { return std::string("BatchNorm"); },
                               [](const layer::MaxPool&) { return std::string("MaxPool"); },
                               [](const layer::ReLU&) { return std::string("ReLU"); },
                               [](const layer::Dropout&) { return std::string("Dropout"); },
                               [](const layer::Flatten&) { return std::string("Flatten"); },
                               [](const layer::Residual&) { return std::string("ResidualBlock"); }},
                    kind);
}

Shape layer_output_shape(const LayerSpec& l, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const layer::Linear& s) -> Shape {
            if (in.size() != 1) fail(l, "expects a flat feature vector, got " + to_string(in));
            if (in[0] != s.in) fail(l, "expects " + std::to_string(s.in) + " inputs, got " + std::to_string(in[0]));
            if (s.out == 0) fail(l, "output width must be positive");
            return {s.out};
          },
          [&](const layer::Conv2d& s) -> Shape {
            if (in.size() != 3) fail(l, "expects a (C, H, W) input, got " + to_string(in));
            if (in[0] != s.in_ch)
              fail(l, "expects " + std::to_string(s.in_ch) + " channels, got " + std::to_string(in[0]));
            if (s.out_ch == 0) fail(l, "output channels must be positive");
            try {
              ops::ConvGeometry g{s.kernel, s.stride, s.pad};
              return {s.out_ch, g.out_size(in[1]), g.out_size(in[2])};
            } catch (const ShapeError& e) {
              fail(l, e.what());
            }
          },
          [&](const layer::BatchNorm& s) -> Shape {
            const std::size_t f = in.size() == 3 ? in[0] : (in.size() == 1 ? in[0] : 0);
            if (f != s.features)
              fail(l, "expects " + std::to_string(s.features) + " features/channels, got shape " + to_string(in));
            return in;
          },
          [&](const layer::MaxPool& s) -> Shape {
            if (in.size() != 3) fail(l, "expects a (C, H, W) input, got " + to_string(in));
            if (s.kernel == 0 || s.stride == 0) fail(l, "kernel and stride must be positive");
            if (in[1] < s.kernel || in[2] < s.kernel) fail(l, "kernel larger than input " + to_string(in));
            return {in[0], (in[1] - s.kernel) / s.stride + 1, (in[2] - s.kernel) / s.stride + 1};
          },
          [&](const layer::ReLU&) -> Shape { return in; },
          [&](const layer::Dropout& s) -> Shape {
            if (s.rate < 0.0f || s.rate >= 1.0f) fail(l, "rate must be in [0, 1)");
            return in;
          },
          [&](const layer::Flatten&) -> Shape { return {features_of(in)}; },
          [&](const layer::Residual& s) -> Shape {
            if (s.inner.empty()) fail(l, "residual block has no inner layers");
            Shape cur = in;
            for (const auto& inner : s.inner) cur = layer_output_shape(inner, cur);
            if (cur != in) fail(l, "inner path maps " + to_string(in) + " to " + to_string(cur) + ", skip needs equal shapes");
            return in;
          }},
      l.kind);
}

Shape validate(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ModelError("model has no layers");
  if (spec.input_shape.empty()) throw ModelError("model input shape is empty");
  Shape cur = spec.input_shape;
  for (const auto& l : spec.layers) cur = layer_output_shape(l, cur);
  if (cur.size() != 1) throw ModelError("model output must be a flat vector, got " + to_string(cur));
  if (spec.output_dim != 0 && cur[0] != spec.output_dim)
    throw ModelError("model output width " + std::to_string(cur[0]) + " differs from output_dim " +
                     std::to_string(spec.output_dim));
  return cur;
}

std::vector<std::string> parameter_ids(const LayerSpec& l) {
  const std::string& n = l.name;
  return std::visit(overloaded{[&](const layer::Linear&) { return std::vector<std::string>{n + ".weight", n + ".bias"}; },
                               [&](const layer::Conv2d&) { return std::vector<std::string>{n + ".weight", n + ".bias"}; },
                               [&](const layer::BatchNorm&) {
                                 return std::vector<std::string>{n + ".gamma", n + ".beta", n + ".running_mean",
                                                                 n + ".running_var"};
                               },
                               [&](const layer::Residual& r) {
                                 std::vector<std::string> ids;
                                 for (const auto& inner : r.inner)
                                   for (auto& id : parameter_ids(inner)) ids.push_back(std::move(id));
                                 return ids;
                               },
                               [](const auto&) { return std::vector<std::string>{}; }},
                    l.kind);
}

std::vector<std::string> parameter_ids(const ModelSpec& spec) {
  std::vector<std::string> ids;
  for (const auto& l : spec.layers)
    for (auto& id : parameter_ids(l)) ids.push_back(std::move(id));
  return ids;
}

void init_layer(const LayerSpec& l, ParameterStore& store) {
  const std::string& n = l.name;
  std::visit(overloaded{[&](const layer::Linear& s) {
                          store.add_weight(n + ".weight", {s.out, s.in}, s.in);
                          store.add_constant(n + ".bias", {s.out}, 0.0f);
                        },
                        [&](const layer::Conv2d& s) {
                          store.add_weight(n + ".weight", {s.out_ch, s.in_ch, s.kernel, s.kernel},
                                           s.in_ch * s.kernel * s.kernel);
                          store.add_constant(n + ".bias", {s.out_ch}, 0.0f);
                        },
                        [&](const layer::BatchNorm& s) {
                          store.add_constant(n + ".gamma", {s.features}, 1.0f);
                          store.add_constant(n + ".beta", {s.features}, 0.0f);
                          store.add_constant(n + ".running_mean", {s.features}, 0.0f, false);
                          store.add_constant(n + ".running_var", {s.features}, 1.0f, false);
                        },
                        [&](const layer::Residual& r) {
                          for (const auto& inner : r.inner) init_layer(inner, store);
                        },
                        [](const auto&) {}},
             l.kind);
}

void init_parameters(const ModelSpec& spec, ParameterStore& store) {
  validate(spec);
  for (const auto& l : spec.layers) init_layer(l, store);
}

std::vector<std::string> residual_blocks(const ModelSpec& spec) {
  std::vector<std::string> out;
  for (const auto& l : spec.layers)
    if (std::holds_alternative<layer::Residual>(l.kind)) out.push_back(l.name);
  return out;
}

namespace zoo {

ModelSpec default_cnn(std::size_t channels, std::size_t side, std::size_t classes, std::size_t conv1,
                      std::size_t conv2) {
  const std::size_t pooled = side / 2 / 2;
  ModelSpec m;
  m.input_shape = {channels, side, side};
  m.output_dim = classes;
  m.layers = {
      {"conv1", layer::Conv2d{channels, conv1, 3, 1, 1}},
      {"relu1", layer::ReLU{}},
      {"pool1", layer::MaxPool{2, 2}},
      {"conv2", layer::Conv2d{conv1, conv2, 3, 1, 1}},
      {"relu2", layer::ReLU{}},
      {"pool2", layer::MaxPool{2, 2}},
      {"flatten", layer::Flatten{}},
      {"fc1", layer::Linear{conv2 * pooled * pooled, 512}},
      {"relu3", layer::ReLU{}},
      {"fc2", layer::Linear{512, 256}},
      {"relu4", layer::ReLU{}},
      {"fc3", layer::Linear{256, classes}},
  };
  return m;
}

ModelSpec batchnorm_cnn(std::size_t channels, std::size_t side, std::size_t classes) {
  ModelSpec m = default_cnn(channels, side, classes);
  std::vector<LayerSpec> layers;
  for (auto& l : m.layers) {
    layers.push_back(l);
    if (const auto* c = std::get_if<layer::Conv2d>(&l.kind))
      layers.push_back({"bn_" + l.name, layer::BatchNorm{c->out_ch}});
  }
  m.layers = std::move(layers);
  return m;
}

ModelSpec fc_only(std::size_t channels, std::size_t side, std::size_t classes, std::size_t width) {
  ModelSpec m;
  m.input_shape = {channels, side, side};
  m.output_dim = classes;
  m.layers = {
      {"flatten", layer::Flatten{}},
      {"fc1", layer::Linear{channels * side * side, width}},
      {"relu1", layer::ReLU{}},
      {"fc2", layer::Linear{width, width}},
      {"relu2", layer::ReLU{}},
      {"fc3", layer::Linear{width, width}},
      {"relu3", layer::ReLU{}},
      {"head", layer::Linear{width, classes}},
  };
  return m;
}

ModelSpec tiny_resnet(std::size_t channels, std::size_t side, std::size_t classes, std::size_t width,
                      std::size_t blocks) {
  ModelSpec m;
  m.input_shape = {channels, side, side};
  m.output_dim = classes;
  m.layers.push_back({"stem", layer::Conv2d{channels, width, 3, 1, 1}});
  m.layers.push_back({"stem_relu", layer::ReLU{}});
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::string p = "block" + std::to_string(b + 1);
    layer::Residual r;
    r.inner = {{p + ".conv1", layer::Conv2d{width, width, 3, 1, 1}},
               {p + ".relu", layer::ReLU{}},
               {p + ".conv2", layer::Conv2d{width, width, 3, 1, 1}}};
    m.layers.push_back({p, std::move(r)});
    m.layers.push_back({p + "_relu", layer::ReLU{}});
  }
  m.layers.push_back({"pool", layer::MaxPool{2, 2}});
  m.layers.push_back({"flatten", layer::Flatten{}});
  m.layers.push_back({"head", layer::Linear{width * (side / 2) * (side / 2), classes}});
  return m;
}

}  // namespace zoo

}  // namespace inkwell
