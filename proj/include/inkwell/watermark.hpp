#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "inkwell/data.hpp"
#include "inkwell/graph.hpp"
#include "inkwell/optimizer.hpp"
#include "inkwell/ssim.hpp"

namespace inkwell {

class WatermarkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WatermarkKey {
  Tensor vector;  // (width,)
  std::uint64_t seed = 0;
};

struct WatermarkPair {
  WatermarkKey key;
  Tensor secret;  // model input shape (C, H, W), values in [0, 1]
};

struct Watermark {
  std::vector<WatermarkPair> pairs;
  double ssim_stop = 0.95;
  std::size_t max_hardening_steps = 10000;
  float ssim_weight = 1.0f;
  float mse_weight = 1.0f;

  void validate() const;
  Tensor key_batch() const;     // (K, width)
  Tensor secret_batch() const;  // (K, C, H, W)
  std::vector<Tensor> secrets() const;
};

inline constexpr float kKeyLow = -10.0f;
inline constexpr float kKeyHigh = 10.0f;

// n i.i.d. uniform keys in [lo, hi]; key i uses seed + i.
std::vector<WatermarkKey> generate_keys(std::size_t n, std::size_t width, std::uint64_t seed, float lo = kKeyLow,
                                        float hi = kKeyHigh);
// Throws WatermarkError unless every value lies in [lo, hi].
void validate_key(const WatermarkKey& key, float lo = kKeyLow, float hi = kKeyHigh);

// JSON: {"keys": [{"seed": s, "values": [...]}, ...]}
void write_keys(const std::vector<WatermarkKey>& keys, const std::filesystem::path& path);
std::vector<WatermarkKey> read_keys(const std::filesystem::path& path);

// Text secrets "ABCD", "EFGH", ... cycling through A-Z0-9.
std::vector<std::string> default_secret_texts(std::size_t n);

// Watermark loss on the whole key batch:
//   ssim_weight * (1 - SSIM) + mse_weight * MSE.
struct WatermarkStepResult {
  double loss = 0.0;
  double ssim = 0.0;  // train-mode SSIM of this step's batch
};
WatermarkStepResult watermark_step(const Graph& twd, ParameterStore& store, Optimizer& opt, const Tensor& keys,
                                   const Tensor& secrets, float ssim_weight, float mse_weight, Rng& rng);

// Eval-mode transposed inference, one image per key row.
Tensor extract_batch(const Graph& twd, ParameterStore& store, const Tensor& keys);
std::vector<Tensor> extract(const Graph& twd, ParameterStore& store, const std::vector<WatermarkKey>& keys);
// Eval-mode SSIM of each key's extraction against its secret (unclamped).
std::vector<double> watermark_ssim(const Graph& twd, ParameterStore& store, const Watermark& wm);
double mean(const std::vector<double>& v);

Tensor clamp01(Tensor t);

struct HardeningCheckpoint {
  std::size_t step = 0;
  double mean_ssim = 0.0;
  double best_mean_ssim = 0.0;
};

struct HardeningReport {
  std::size_t steps_taken = 0;
  double final_mean_ssim = 0.0;
  std::vector<double> per_key_ssim;
  double wall_seconds = 0.0;
  bool reached_stop = false;
  std::vector<HardeningCheckpoint> checkpoints;  // every `checkpoint_every` steps
};

struct HardenOptions {
  std::size_t checkpoint_every = 100;
  // Called after every step with (step, eval-mode mean SSIM).
  std::function<void(std::size_t, double)> on_step;
};

// Transposed-only training on the key batch until the eval-mode mean SSIM
// reaches wm.ssim_stop or wm.max_hardening_steps steps were taken.
HardeningReport harden(ParameterStore& store, const Graph& twd, const Watermark& wm, Optimizer& opt, Rng& rng,
                       const HardenOptions& options = {});

struct EpochReport {
  std::size_t epoch = 0;
  double main_loss = 0.0;
  double watermark_loss = 0.0;
  double accuracy = 0.0;   // on the evaluation set
  double mean_ssim = 0.0;  // eval-mode, unclamped
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  double wall_seconds = 0.0;
};

struct ConstraintTrainOptions {
  std::size_t epochs = 5;
  std::size_t batch = 64;
  const Dataset* eval = nullptr;  // accuracy reported on this set when given
};

// Alternating training: for each main-task minibatch, one cross-entropy step
// on the forward graph, then one watermark step on the full key batch.
TrainReport constraint_train(ParameterStore& store, const Graph& fwd, const Graph& twd, const Dataset& data,
                             const Watermark& wm, Optimizer& main_opt, Optimizer& wm_opt, Rng& rng,
                             const ConstraintTrainOptions& options);

struct ExtractionReport {
  std::vector<Tensor> images;  // clamped to [0, 1]
  std::vector<double> ssim;
  std::vector<double> mse;
  double mean_ssim = 0.0;
  std::vector<std::filesystem::path> files;
};

// Compares extracted images with the secrets. Writes one side-by-side image
// per key (secret | extraction) and a two-row composite strip to `emit_dir`
// when it is non-empty. No threshold is applied.
ExtractionReport verify(const std::vector<Tensor>& extracted, const std::vector<Tensor>& secrets,
                        const std::filesystem::path& emit_dir = {}, const std::string& prefix = "key");

}  // namespace inkwell
