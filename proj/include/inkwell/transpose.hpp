#pragma once

#include <map>
#include <string>

#include "inkwell/checkpoint.hpp"
#include "inkwell/data.hpp"
#include "inkwell/graph.hpp"
#include "inkwell/optimizer.hpp"

namespace inkwell {

// Residual block name -> frozen skip-branch activation (per-sample shape).
using FrozenBranches = std::map<std::string, Tensor>;

struct TransposedModel {
  Graph graph;  // maps (N, output_dim) keys to (N, input_shape) images
  float added_dropout_rate = 0.3f;
  FrozenBranches frozen;
};

// Reverses the layer list and applies the per-layer rules:
//   Linear -> LinearT (x = (y - b) w), Conv2d -> ConvT (input gradient of the
//   conv), BatchNorm -> BatchNormT, MaxPool -> nearest upsample by its stride,
//   Flatten -> reshape to the pre-flatten shape, ReLU and Dropout unchanged,
//   Residual -> ResidualT (inner path on c - b_frozen).
// A dropout node follows every transposed Linear/Conv except the one that
// produces the final output. All nodes reference the forward parameter ids.
TransposedModel transpose_model(const ModelSpec& spec, const ParameterStore& store, float added_dropout_rate = 0.3f,
                                const FrozenBranches& frozen = {});

struct WarmupConfig {
  std::size_t epochs = 3;
  std::size_t batch = 64;
  OptimizerConfig optimizer;
};

// Trains the plain forward model for cfg.epochs, then records the mean input
// of every residual block over one pass of `data`.
FrozenBranches capture_frozen_branches(const ModelSpec& spec, ParameterStore& store, const Dataset& data,
                                       const WarmupConfig& cfg, Rng& rng);

// Original last Linear layer and its parameter values.
struct ArchivedHead {
  LayerSpec layer;
  NamedTensors params;
};

// Replaces the final Linear layer with a freshly initialized one of width
// `new_output_dim`; returns the archived original.
ArchivedHead swap_last_layer(ModelSpec& spec, ParameterStore& store, std::size_t new_output_dim);
// Re-installs an archived head bit-exactly.
void restore_last_layer(ModelSpec& spec, ParameterStore& store, const ArchivedHead& head);

}  // namespace inkwell
