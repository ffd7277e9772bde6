#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "inkwell/attack.hpp"
#include "inkwell/config.hpp"
#include "inkwell/transpose.hpp"
#include "inkwell/watermark.hpp"

namespace inkwell {

using Json = nlohmann::ordered_json;

inline constexpr const char* kMetricsSchema = "inkwell.metrics/1";
inline constexpr double kErasedSsim = 0.1;

// Error raised inside a pipeline phase; what() is prefixed with "[phase] ".
class PhaseError : public std::runtime_error {
 public:
  PhaseError(std::string phase, const std::string& message)
      : std::runtime_error("[" + phase + "] " + message), phase_(std::move(phase)) {}
  const std::string& phase() const { return phase_; }

 private:
  std::string phase_;
};

// Output directory that remembers every file written through it.
class ArtifactDir {
 public:
  ArtifactDir() = default;  // disabled: nothing is written
  explicit ArtifactDir(std::filesystem::path root);

  bool enabled() const { return !root_.empty(); }
  const std::filesystem::path& root() const { return root_; }
  // Creates parent directories and records `rel`.
  std::filesystem::path file(const std::string& rel);
  void text(const std::string& rel, const std::string& content);
  void json(const std::string& rel, const Json& j);
  void image(const std::string& rel, const Tensor& img);
  // Registers files written by someone else, given as absolute paths under root.
  void adopt(const std::vector<std::filesystem::path>& paths);
  const std::vector<std::string>& files() const { return files_; }

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

struct PhaseTiming {
  std::string phase;
  double seconds = 0.0;
};

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<PhaseTiming> timings;
  std::vector<std::string> files;
  Json summary = Json::object();

  double seconds(const std::string& phase) const;
  Json to_json() const;
};

// Runs fn() as phase `name`: records its wall time and prefixes any error.
template <class Fn>
auto timed_phase(RunManifest& m, const std::string& name, Fn&& fn);

// Independent generator for a named phase of a seeded experiment.
Rng phase_rng(std::uint64_t seed, const std::string& phase);

struct Datasets {
  Dataset train, test;
};

// Per-sample input shape and class count implied by a dataset section.
Shape input_shape(const DatasetSection& d);
std::size_t class_count(const DatasetSection& d);
Datasets load_datasets(const ExperimentConfig& cfg, const DatasetSection& d);

ModelSpec build_model(const ModelSection& m, const Shape& input, std::size_t classes);

// Keys from keys_file or generated from key_seed; secrets rendered from the
// texts, read from files, or encoded from `dotcode` bit chunks.
Watermark build_watermark(const ExperimentConfig& cfg, const Shape& input, std::size_t key_width,
                          const std::vector<Bits>& dotcode = {});

// Model, data and watermark of one experiment. `initial` is the parameter
// state right after initialization, kept for the unwatermarked baseline.
struct Session {
  ExperimentConfig cfg;
  Datasets data;
  ModelSpec spec;
  ParameterStore store;
  ParameterStore initial;
  FrozenBranches frozen;
  Graph fwd;
  TransposedModel tm;
  Watermark wm;

  AttackContext context() const { return {fwd, tm.graph, wm, data.test}; }
};

struct SessionOptions {
  bool load_data = true;
  bool warmup = true;  // residual warm-up; skipped when frozen branches come from a checkpoint
  std::vector<Bits> dotcode;
};

// Loads data, builds and initializes the model, runs the residual warm-up
// when the model has skip blocks, and builds the watermark.
Session make_session(const ExperimentConfig& cfg, RunManifest& manifest, const SessionOptions& options = {});

ParameterStore copy_store(const ParameterStore& s);

Json to_json(const HardeningReport& r);
Json to_json(const TrainReport& r);
Json to_json(const AttackTrace& t);
Json to_json(const ExtractionReport& r);

// Individual phases. Each returns its metrics section.
Json harden_phase(Session& s, RunManifest& m);
Json train_phase(Session& s, RunManifest& m);
Json baseline_phase(Session& s, RunManifest& m);
Json attack_phase(Session& s, const AttackSection& a, ArtifactDir& out, RunManifest& m);
Json verify_phase(Session& s, ArtifactDir& out, RunManifest& m, const std::string& dir = "verify");

struct RunResult {
  Json metrics;
  RunManifest manifest;
};

// harden -> constraint train -> attacks -> extract -> verify, plus the
// unwatermarked baseline when training.baseline is set. Writes config.yaml,
// model.ckpt, keys.json, images, metrics.json and manifest.json when `out`
// is enabled. `session` receives the trained state when non-null.
RunResult run_experiment(const ExperimentConfig& cfg, ArtifactDir& out, Session* session = nullptr);

// Loads model.ckpt-style checkpoints written by run_experiment.
void load_model(Session& s, const std::filesystem::path& checkpoint);
void save_model(const Session& s, const std::filesystem::path& checkpoint);

// Standalone extraction with the given keys. When the config describes
// secrets for the same number of keys the report carries per-key SSIM.
RunResult run_extract(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                      const std::filesystem::path& keys_file, ArtifactDir& out, bool compare);

// Runs the config's attacks against a stored watermarked checkpoint.
RunResult run_attacks(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                      const std::filesystem::path& keys_file, ArtifactDir& out);

// Dot-code capacity run: for every configured ECC mode, embeds the payload
// into fresh models with identical seeds, decodes after training and after
// low-lr fine-tuning, and reports raw and post-ECC bit error rates.
RunResult run_capacity(const ExperimentConfig& cfg, ArtifactDir& out);

Bits payload_bits(const ExperimentConfig& cfg);

// -- implementation --

template <class Fn>
auto timed_phase(RunManifest& m, const std::string& name, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  auto record = [&] {
    m.timings.push_back({name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
  };
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record();
    } else {
      auto r = fn();
      record();
      return r;
    }
  } catch (const PhaseError&) {
    throw;
  } catch (const std::exception& e) {
    throw PhaseError(name, e.what());
  }
}

}  // namespace inkwell
