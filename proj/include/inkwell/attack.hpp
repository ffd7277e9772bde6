#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "inkwell/data.hpp"
#include "inkwell/graph.hpp"
#include "inkwell/optimizer.hpp"
#include "inkwell/transpose.hpp"
#include "inkwell/watermark.hpp"

namespace inkwell {

// What an attack is measured against: the forward graph on `eval`, and the
// owner's watermark extracted through `twd`.
struct AttackContext {
  const Graph& fwd;
  const Graph& twd;
  const Watermark& wm;
  const Dataset& eval;
};

struct TracePoint {
  std::size_t step = 0;  // epoch, hardening step or pruning level index
  double level = 0.0;    // pruning level where applicable
  double accuracy = 0.0;
  double mean_ssim = 0.0;  // owner's watermark, eval mode, unclamped
  std::vector<Tensor> extracted;  // clamped extractions of the owner's keys
};

struct AttackTrace {
  std::string kind;
  std::vector<TracePoint> points;

  const TracePoint& last() const { return points.back(); }
  // One row per trace point: the secrets first, then each point's extractions.
  Tensor strip(const Watermark& wm) const;
};

TracePoint measure(ParameterStore& store, const AttackContext& ctx, std::size_t step, double level = 0.0);

struct FineTuneConfig {
  float base_lr = 1e-4f;
  float lr_factor = 1.0f;
  std::size_t epochs = 4;
  std::size_t batch = 64;
  OptimizerKind optimizer = OptimizerKind::Adam;
};

// Cross-entropy training only, measured after every epoch (point 0 = before).
AttackTrace fine_tune(ParameterStore& store, const AttackContext& ctx, const Dataset& data, const FineTuneConfig& cfg,
                      Rng& rng);

// Zeroes the floor(level * N) smallest-magnitude entries among all N trainable
// weight tensors (ids ending in ".weight"), ranked globally. Ties break by id
// order and position. Returns the number of entries zeroed.
std::size_t prune(ParameterStore& store, double level);
// Trainable ids that take part in pruning.
std::vector<std::string> prunable_ids(const ParameterStore& store);

// Accuracy and SSIM at each level, every level applied to a copy of `store`.
AttackTrace pruning_curve(const ParameterStore& store, const AttackContext& ctx, const std::vector<double>& levels);

// fine_tune for cfg.epochs, then prune at `level`; the final point is after pruning.
AttackTrace fine_prune(ParameterStore& store, const AttackContext& ctx, const Dataset& data, const FineTuneConfig& cfg,
                       double level, Rng& rng);

enum class KeySource { Embedded, Random };
enum class SecretSource { Noise, Black, UnwatermarkedExtraction };
KeySource parse_key_source(const std::string& s);
SecretSource parse_secret_source(const std::string& s);
std::string to_string(KeySource k);
std::string to_string(SecretSource s);

// Builds the adversary's watermark. Random keys use `seed`; the
// unwatermarked-extraction secret is what a freshly initialized copy of `spec`
// (seeded with `seed`) extracts for each key.
Watermark make_adversary(const Watermark& owner, KeySource keys, SecretSource secrets, std::size_t n_keys,
                         const ModelSpec& spec, float dropout_rate, std::uint64_t seed);

struct AdaptiveConfig {
  std::size_t steps = 11;
  float lr = 1e-3f;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::vector<std::size_t> checkpoints;  // empty: every step up to 25
};

// Hardening on the adversary's pairs through the shared transposed graph.
// The trace records the owner's watermark at step 0 and every checkpoint.
AttackTrace erase_watermark(ParameterStore& store, const AttackContext& ctx, const Watermark& adversary,
                            const AdaptiveConfig& cfg, Rng& rng);
// Same mechanism with a new key/secret watermark of the adversary's choosing.
AttackTrace overwrite_watermark(ParameterStore& store, const AttackContext& ctx, const Watermark& new_wm,
                                const AdaptiveConfig& cfg, Rng& rng);

struct CrossDatasetResult {
  AttackTrace trace;            // new-task accuracy per epoch; SSIM with the original head restored
  double ssim_restored = 0.0;   // after restore_last_layer
  double ssim_swapped = 0.0;    // keys cut/zero-padded to the new width, swapped head kept
};

// Swaps the head for `new_classes` outputs, fine-tunes on `data`, measures on
// `eval`, then restores the original head and extracts.
CrossDatasetResult cross_dataset_finetune(ModelSpec& spec, ParameterStore& store, const Watermark& wm,
                                          const Dataset& data, const Dataset& eval, std::size_t new_classes,
                                          const FineTuneConfig& cfg, float dropout_rate, Rng& rng);

}  // namespace inkwell
