#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "inkwell/experiment.hpp"

using namespace inkwell;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = INKWELL_SOURCE_DIR;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("inkwell_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kMinimal = R"(
seed: 3
dataset: {source: synthetic, classes: 4, per_class: 10, test_per_class: 5, side: 20, seed: 8}
watermark: {key_seed: 4}
)";

ExperimentConfig smoke() { return load_config(kSource / "configs/smoke.yaml"); }

int cli(const std::string& args) {
  const int status = std::system((std::string(INKWELL_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, MinimalConfigTakesDefaults) {
  const ExperimentConfig c = parse_config(kMinimal);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.model.arch, "default_cnn");
  EXPECT_FLOAT_EQ(c.model.dropout, 0.3f);
  EXPECT_EQ(c.watermark.n_keys, 1u);
  EXPECT_EQ(c.watermark.max_hardening_steps, 15000u);
  EXPECT_FLOAT_EQ(c.training.harden.lr, 1e-3f);
  EXPECT_FLOAT_EQ(c.training.main.lr, 1e-4f);
  EXPECT_FLOAT_EQ(c.training.watermark.lr, 1e-4f);
  EXPECT_EQ(c.training.epochs, 5u);
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, UnknownKeysAreRejectedWithTheirPath) {
  const std::string base = kMinimal;
  for (const auto& [extra, path] : std::vector<std::pair<std::string, std::string>>{
           {"colour: red\n", "colour"},
           {"model: {arch: default_cnn, depth: 3}\n", "model.depth"},
           {"training: {main: {kind: adam, momentum: 0.9}}\n", "training.main.momentum"},
           {"attacks: [{kind: prune, levels: [0.5], strength: 2}]\n", "attacks[0].strength"}}) {
    try {
      parse_config(base + extra);
      ADD_FAILURE() << extra;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("'" + path + "'"), std::string::npos) << e.what();
    }
  }
}

TEST(Config, TypesAndRequiredSeeds) {
  EXPECT_THROW(parse_config("seed: -1\nwatermark: {key_seed: 1}\n"), ConfigError);
  EXPECT_THROW(parse_config("seed: abc\nwatermark: {key_seed: 1}\n"), ConfigError);
  EXPECT_THROW(parse_config("watermark: {key_seed: 1}\n"), ConfigError);
  EXPECT_THROW(parse_config("seed: 1\n"), ConfigError);  // key seed needed while enabled
  EXPECT_NO_THROW(parse_config("seed: 1\nwatermark: {enabled: false}\n"));
  EXPECT_THROW(parse_config("seed: 1\nwatermark: {enabled: false}\ndataset: {source: synthetic}\n"), ConfigError);
  EXPECT_THROW(parse_config("seed: 1\nwatermark: {key_seed: 1}\ntraining: {main: {kind: rmsprop}}\n"),
               ConfigError);
  EXPECT_THROW(parse_config("seed: 1\nwatermark: {key_seed: 1}\npayload: {ecc: [rs]}\n"), ConfigError);
  EXPECT_THROW(parse_config("- 1\n- 2\n"), ConfigError);
  EXPECT_THROW(parse_config("seed: [1\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.yaml"), ConfigError);
}

TEST(Config, SemanticValidation) {
  auto bad = [](const std::string& extra) { return parse_config(std::string(kMinimal) + extra); };
  EXPECT_THROW(validate(bad("model: {arch: vgg11}\n")), ConfigError);
  EXPECT_THROW(validate(bad("model: {dropout: 1.0}\n")), ConfigError);
  EXPECT_THROW(validate(bad("attacks: [{kind: distill}]\n")), ConfigError);
  EXPECT_THROW(validate(bad("attacks: [{kind: prune, levels: [1.0]}]\n")), ConfigError);
  EXPECT_THROW(validate(bad("attacks: [{kind: prune}]\n")), ConfigError);
  EXPECT_THROW(validate(bad("attacks: [{kind: cross_dataset}]\n")), ConfigError);
  EXPECT_THROW(validate(bad("attacks: [{kind: erase, keys: stolen}]\n")), ConfigError);

  ExperimentConfig c = parse_config(kMinimal);
  c.watermark.secret.source = "dotcode";
  EXPECT_THROW(validate(c), ConfigError);
  c.watermark.secret.source = "files";
  c.watermark.secret.files = {"/nonexistent.pgm"};
  EXPECT_THROW(validate(c), ConfigError);
  c = parse_config(kMinimal);
  c.dataset.source = "mnist";
  c.dataset.path = "/nonexistent";
  EXPECT_THROW(validate(c), ConfigError);
  c = parse_config(kMinimal);
  c.watermark.keys_file = "/nonexistent/keys.json";
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, CanonicalYamlRoundTrips) {
  for (const auto& entry : fs::directory_iterator(kSource / "configs")) {
    if (entry.path().extension() != ".yaml") continue;
    const ExperimentConfig c = load_config(entry.path());
    const std::string once = to_yaml(c);
    const ExperimentConfig again = parse_config(once, c.base_dir);
    EXPECT_EQ(to_yaml(again), once) << entry.path();
    EXPECT_EQ(config_hash(again), config_hash(c));
  }
}

TEST(Config, HashIgnoresOutputButNotSeeds) {
  ExperimentConfig a = parse_config(kMinimal), b = a;
  b.out = "/somewhere/else";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.seed = 4;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, BundledConfigsValidate) {
  const bool have_mnist = fs::exists(kSource / "data/mnist/train-images-idx3-ubyte");
  for (const auto& entry : fs::directory_iterator(kSource / "configs")) {
    if (entry.path().extension() != ".yaml") continue;
    const ExperimentConfig c = load_config(entry.path());
    if (c.dataset.source == "mnist" && !have_mnist) continue;
    EXPECT_NO_THROW(validate(c)) << entry.path();
  }
}

TEST(Run, ManifestListsEveryFileAndMetricsAreReproducible) {
  TempDir a, b;
  ExperimentConfig cfg = smoke();
  ArtifactDir da(a.path), db(b.path);
  const RunResult ra = run_experiment(cfg, da);
  run_experiment(cfg, db);
  EXPECT_EQ(slurp(a.path / "metrics.json"), slurp(b.path / "metrics.json"));

  std::set<std::string> listed(ra.manifest.files.begin(), ra.manifest.files.end()), on_disk;
  for (const auto& e : fs::recursive_directory_iterator(a.path))
    if (e.is_regular_file()) on_disk.insert(fs::relative(e.path(), a.path).generic_string());
  EXPECT_EQ(listed, on_disk);
  for (const char* f : {"manifest.json", "metrics.json", "model.ckpt", "keys.json", "config.yaml"})
    EXPECT_TRUE(on_disk.count(f)) << f;

  std::set<std::string> phases;
  for (const auto& t : ra.manifest.timings) phases.insert(t.phase);
  for (const char* p : {"harden", "train", "extract", "verify", "baseline"}) EXPECT_TRUE(phases.count(p)) << p;

  const auto m = Json::parse(slurp(a.path / "metrics.json"));
  EXPECT_EQ(m["schema"], kMetricsSchema);
  EXPECT_EQ(m["attacks"].size(), 3u);
  EXPECT_EQ(m["attacks"][1]["points"].size(), 3u);
  EXPECT_TRUE(m["hardening"]["reached_stop"].get<bool>());
  EXPECT_GE(m["final"]["verify"]["mean_ssim"].get<double>(), 0.8);
  EXPECT_NEAR(m["final"]["accuracy_gap"].get<double>(),
              m["baseline"]["accuracy"].get<double>() - m["final"]["accuracy"].get<double>(), 1e-12);
}

TEST(Run, PhaseErrorsNameThePhase) {
  ExperimentConfig cfg = smoke();
  cfg.watermark.mse_weight = std::nanf("");
  ArtifactDir none;
  try {
    run_experiment(cfg, none);
    FAIL();
  } catch (const PhaseError& e) {
    EXPECT_EQ(e.phase(), "harden");
    EXPECT_EQ(std::string(e.what()).rfind("[harden] ", 0), 0u);
  }
}

TEST(Extract, ReadsBackWatermarkAndRejectsForeignModels) {
  TempDir wm_dir, plain_dir, ex;
  ExperimentConfig cfg = smoke();
  cfg.attacks.clear();
  ArtifactDir dw(wm_dir.path);
  run_experiment(cfg, dw);

  ArtifactDir de(ex.path);
  const RunResult own = run_extract(cfg, wm_dir.path / "model.ckpt", wm_dir.path / "keys.json", de, true);
  EXPECT_GE(own.metrics["verify"]["mean_ssim"].get<double>(), 0.8);
  EXPECT_TRUE(fs::exists(ex.path / "extract/key_0.pgm"));

  // Same architecture, no watermark: the owner's keys find nothing.
  ExperimentConfig plain = cfg;
  plain.watermark.enabled = false;
  plain.training.baseline = false;
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    plain.seed = seed;
    ArtifactDir dp(plain_dir.path);
    run_experiment(plain, dp);
    ArtifactDir skip;
    const RunResult other = run_extract(cfg, plain_dir.path / "model.ckpt", wm_dir.path / "keys.json", skip, true);
    EXPECT_LE(std::fabs(other.metrics["verify"]["mean_ssim"].get<double>()), 0.2) << seed;
  }

  ArtifactDir skip;
  EXPECT_THROW(run_extract(cfg, wm_dir.path / "model.ckpt", "/nonexistent/keys.json", skip, false), PhaseError);
  write_keys(generate_keys(1, 7, 0), ex.path / "narrow.json");
  try {
    run_extract(cfg, wm_dir.path / "model.ckpt", ex.path / "narrow.json", skip, false);
    FAIL();
  } catch (const PhaseError& e) {
    EXPECT_NE(std::string(e.what()).find("width 7"), std::string::npos) << e.what();
  }
}

TEST(Attack, CommandRunsAgainstStoredCheckpoint) {
  TempDir run_dir, out_dir;
  ExperimentConfig cfg = smoke();
  ArtifactDir dr(run_dir.path);
  const RunResult r = run_experiment(cfg, dr);
  ArtifactDir da(out_dir.path);
  const RunResult a = run_attacks(cfg, run_dir.path / "model.ckpt", run_dir.path / "keys.json", da);
  ASSERT_EQ(a.metrics["attacks"].size(), 3u);
  // Same seeds, same starting weights: identical traces to the in-run attacks.
  EXPECT_EQ(a.metrics["attacks"].dump(), r.metrics["attacks"].dump());
  EXPECT_TRUE(fs::exists(out_dir.path / "attacks/prune.pgm"));
}

TEST(Capacity, DotCodeRoundTripThroughTraining) {
  TempDir dir;
  ExperimentConfig cfg = smoke();
  cfg.attacks.clear();
  cfg.payload = PayloadSection{};
  cfg.payload->bits = 36;
  cfg.payload->chunk_bits = 36;
  cfg.payload->images = 2;
  cfg.payload->ecc = {Ecc::None, Ecc::Hamming74};
  cfg.payload->finetune_epochs = 1;
  cfg.watermark.ssim_stop = 0.95;
  ArtifactDir out(dir.path);
  const RunResult r = run_capacity(cfg, out);
  const auto& modes = r.metrics["modes"];
  ASSERT_EQ(modes.size(), 2u);
  EXPECT_EQ(modes[0]["payload_bits"], 36u);
  EXPECT_EQ(modes[0]["images"], 1u);
  EXPECT_EQ(modes[1]["payload_bits"], 36u);  // 72 slots hold 40 data bits
  EXPECT_EQ(modes[1]["encoded_bits"], 63u);
  EXPECT_EQ(modes[1]["images"], 2u);
  for (const auto& m : modes) {
    EXPECT_LE(m["after_training"]["payload_ber"].get<double>(), 0.06) << m["ecc"];
    EXPECT_LE(m["after_fine_tune"]["payload_ber"].get<double>(), 0.06) << m["ecc"];
  }
  EXPECT_TRUE(fs::exists(dir.path / "capacity/none_trained.pgm"));
}

TEST(Capacity, Errors) {
  ExperimentConfig cfg = smoke();
  ArtifactDir none;
  EXPECT_THROW(run_capacity(cfg, none), ConfigError);  // no payload section

  TempDir dir;
  fs::create_directories(dir.path);
  std::ofstream(dir.path / "empty.bin").close();
  cfg.payload = PayloadSection{};
  cfg.payload->file = dir.path / "empty.bin";
  EXPECT_THROW(run_capacity(cfg, none), PhaseError);

  cfg.payload = PayloadSection{};
  cfg.payload->bits = 500;
  cfg.payload->chunk_bits = 500;  // 23 columns do not fit 20 px
  EXPECT_THROW(run_capacity(cfg, none), CodecError);

  cfg.payload->chunk_bits = 36;
  cfg.payload->images = 0;
  EXPECT_THROW(run_capacity(cfg, none), ConfigError);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  fs::create_directories(dir.path);
  const fs::path bad = dir.path / "bad.yaml";
  std::ofstream(bad) << kMinimal << "bogus: 1\n";
  const fs::path out = dir.path / "out";
  EXPECT_EQ(cli("run --config " + bad.string() + " --out " + out.string()), 2);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(cli("run --out " + out.string()), 2);
  EXPECT_EQ(cli("frobnicate"), 2);

  const fs::path smoke_cfg = kSource / "configs/smoke.yaml";
  EXPECT_EQ(cli("run --config " + smoke_cfg.string() + " --out " + out.string() + " --seed 5 --subset 10"), 0);
  const auto m = Json::parse(slurp(out / "metrics.json"));
  EXPECT_EQ(m["seed"], 5u);
  EXPECT_EQ(m["dataset"]["train_size"], 100u);

  const std::string model = " --checkpoint " + (out / "model.ckpt").string();
  const std::string keys = " --keys " + (out / "keys.json").string();
  EXPECT_EQ(cli("extract --config " + smoke_cfg.string() + model + " --keys /nonexistent.json --out " +
                (dir.path / "x").string()),
            2);
  EXPECT_EQ(cli("verify --config " + smoke_cfg.string() + model + keys + " --out " + (dir.path / "v").string() +
                " --threshold 0.5"),
            0);
  EXPECT_EQ(cli("verify --config " + smoke_cfg.string() + model + keys + " --out " + (dir.path / "v2").string() +
                " --threshold 1.01"),
            3);
}
