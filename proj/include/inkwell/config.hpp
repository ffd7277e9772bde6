#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "inkwell/codec.hpp"
#include "inkwell/optimizer.hpp"

namespace inkwell {

// Raised for anything wrong with a config file: unknown keys, bad types,
// missing seeds, referenced files that do not exist. The CLI maps it to exit
// code 2 before anything is written.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerSection {
  OptimizerKind kind = OptimizerKind::Adam;
  float lr = 1e-4f;
};

struct ModelSection {
  std::string arch = "default_cnn";  // default_cnn | batchnorm_cnn | fc_only | tiny_resnet
  std::size_t conv1 = 16, conv2 = 32;
  std::size_t width = 0;  // fc_only hidden units or tiny_resnet channels; 0 = architecture default
  std::size_t blocks = 1;
  float dropout = 0.3f;  // added dropout in the transposed graph
  std::size_t warmup_epochs = 3;
};

struct DatasetSection {
  std::string source = "mnist";  // mnist | cifar10 | synthetic
  std::filesystem::path path;     // directory with the raw files
  std::size_t subset = 0;         // training samples per class, 0 = all
  std::size_t test_subset = 0;    // test samples per class, 0 = all
  // synthetic only
  std::size_t classes = 10, per_class = 100, test_per_class = 20, channels = 1, side = 28;
  std::uint64_t seed = 0;
};

struct PayloadSection {
  std::filesystem::path file;  // payload bytes; empty = `bits` random bits
  std::size_t bits = 36;
  std::uint64_t seed = 0;
  std::size_t images = 1;       // dot-code secrets, one key each
  std::size_t chunk_bits = 36;  // bits per image
  std::vector<Ecc> ecc{Ecc::None};
  std::size_t finetune_epochs = 4;
  float finetune_lr_factor = 0.1f;
};

struct SecretSection {
  std::string source = "text";  // text | files | dotcode
  std::vector<std::string> texts;
  std::vector<std::filesystem::path> files;
};

struct WatermarkSection {
  bool enabled = true;
  std::size_t n_keys = 1;
  std::uint64_t key_seed = 0;
  std::filesystem::path keys_file;  // overrides n_keys / key_seed when set
  SecretSection secret;
  double ssim_stop = 0.95;
  std::size_t max_hardening_steps = 15000;
  float ssim_weight = 1.0f;
  float mse_weight = 1.0f;
};

struct TrainingSection {
  OptimizerSection harden{OptimizerKind::Adam, 1e-3f};
  OptimizerSection main{OptimizerKind::Adam, 1e-4f};
  OptimizerSection watermark{OptimizerKind::Adam, 1e-4f};
  std::size_t epochs = 5;
  std::size_t batch = 64;
  bool baseline = false;  // also train an unwatermarked copy from the same init
};

struct AttackSection {
  std::string kind;  // fine_tune | prune | fine_prune | erase | overwrite | cross_dataset
  std::string name;  // label in reports; defaults to kind
  // fine_tune, fine_prune, cross_dataset
  std::size_t epochs = 4;
  float lr_factor = 1.0f;
  std::string split = "train";  // train | test
  // prune
  std::vector<double> levels;
  // fine_prune
  double level = 0.0;
  // erase, overwrite
  std::string keys = "embedded";  // embedded | random
  std::string secrets = "black";  // noise | black | unwatermarked_extraction
  std::size_t n_keys = 1;
  std::size_t steps = 11;
  float lr = 1e-3f;
  std::vector<std::size_t> checkpoints;  // empty: every step up to 25, then every checkpoint_every
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;
  std::string text = "WXYZ";  // overwrite secret
  // cross_dataset
  std::optional<DatasetSection> dataset;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out;
  ModelSection model;
  DatasetSection dataset;
  WatermarkSection watermark;
  TrainingSection training;
  std::vector<AttackSection> attacks;
  std::optional<PayloadSection> payload;
  std::filesystem::path base_dir;  // relative paths resolve against this
};

// Strict parse: unknown keys, wrong types and missing required keys throw
// ConfigError naming the offending key path.
ExperimentConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Semantic checks: referenced files exist, sizes are feasible, attack kinds
// are known. Throws ConfigError.
void validate(const ExperimentConfig& cfg);

std::filesystem::path resolve(const ExperimentConfig& cfg, const std::filesystem::path& p);

// Fully resolved config, defaults included, as YAML that parse_config accepts.
std::string to_yaml(const ExperimentConfig& cfg);
// FNV-1a 64 of to_yaml(cfg) with the output directory cleared, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace inkwell
