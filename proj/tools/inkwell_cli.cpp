#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "inkwell/experiment.hpp"

using namespace inkwell;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kBelowThreshold = 3 };

struct Common {
  std::string config, out, checkpoint, keys;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> subset;
  std::optional<double> threshold;
};

ExperimentConfig prepare(const Common& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.subset) cfg.dataset.subset = *o.subset;
  if (!o.out.empty()) cfg.out = fs::absolute(o.out);
  if (cfg.out.empty()) throw ConfigError("no output directory: set 'out' in the config or pass --out");
  cfg.out = resolve(cfg, cfg.out);
  validate(cfg);
  return cfg;
}

void require_file(const std::string& flag, const std::string& path) {
  if (path.empty()) throw ConfigError(flag + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(flag + ": no such file " + path);
}

void report(const RunResult& r) {
  Json j = r.manifest.summary;
  j["command"] = r.manifest.command;
  j["config_hash"] = r.manifest.config_hash;
  std::cout << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual white-box watermarks for neural networks"};
  app.require_subcommand(1);
  Common o;

  auto add_common = [&](CLI::App* sub, bool model_inputs) {
    sub->add_option("--config", o.config, "experiment config (YAML)")->required();
    sub->add_option("--out", o.out, "output directory (overrides 'out')");
    sub->add_option("--seed", o.seed, "experiment seed (overrides 'seed')");
    sub->add_option("--subset", o.subset, "training samples per class (overrides dataset.subset)");
    if (model_inputs) {
      sub->add_option("--checkpoint", o.checkpoint, "model checkpoint written by 'run'")->required();
      sub->add_option("--keys", o.keys, "keys JSON written by 'run'")->required();
    }
  };
  auto* run = app.add_subcommand("run", "harden, train, attack, extract and verify");
  add_common(run, false);
  auto* extract = app.add_subcommand("extract", "extract watermark images from a checkpoint");
  add_common(extract, true);
  auto* verify = app.add_subcommand("verify", "extract and compare against the configured secrets");
  add_common(verify, true);
  verify->add_option("--threshold", o.threshold, "exit with 3 when the mean SSIM is below this value");
  auto* capacity = app.add_subcommand("capacity", "dot-code payload bit error rates");
  add_common(capacity, false);
  auto* attack = app.add_subcommand("attack", "run the configured attacks on a checkpoint");
  add_common(attack, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  ExperimentConfig cfg;
  try {
    cfg = prepare(o);
    if (extract->parsed() || verify->parsed() || attack->parsed()) {
      require_file("--checkpoint", o.checkpoint);
      require_file("--keys", o.keys);
    }
  } catch (const std::exception& e) {
    std::cerr << "inkwell: config error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    ArtifactDir out(cfg.out);
    RunResult r;
    if (run->parsed()) {
      r = run_experiment(cfg, out);
    } else if (extract->parsed()) {
      r = run_extract(cfg, o.checkpoint, o.keys, out, false);
    } else if (verify->parsed()) {
      r = run_extract(cfg, o.checkpoint, o.keys, out, true);
    } else if (capacity->parsed()) {
      r = run_capacity(cfg, out);
    } else {
      r = run_attacks(cfg, o.checkpoint, o.keys, out);
    }
    report(r);
    if (verify->parsed() && o.threshold && r.manifest.summary["mean_ssim"].get<double>() < *o.threshold)
      return kBelowThreshold;
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "inkwell: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "inkwell: " << e.what() << "\n";
    return kFailed;
  }
}
