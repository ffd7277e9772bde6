#include "inkwell/experiment.hpp"

#include <fstream>
#include <sstream>

#include "inkwell/checkpoint.hpp"
#include "inkwell/font.hpp"
#include "inkwell/metrics.hpp"
#include "inkwell/trainer.hpp"

namespace inkwell {

namespace fs = std::filesystem;

// ---- artifacts and manifest ----

ArtifactDir::ArtifactDir(fs::path root) : root_(std::move(root)) {}

fs::path ArtifactDir::file(const std::string& rel) {
  if (!enabled()) throw std::logic_error("artifact directory is disabled");
  const fs::path p = root_ / rel;
  fs::create_directories(p.parent_path());
  if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  return p;
}

void ArtifactDir::text(const std::string& rel, const std::string& content) {
  if (!enabled()) return;
  std::ofstream out(file(rel), std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + (root_ / rel).string());
}

void ArtifactDir::json(const std::string& rel, const Json& j) { text(rel, j.dump(2) + "\n"); }

void ArtifactDir::image(const std::string& rel, const Tensor& img) {
  if (!enabled()) return;
  write_image(img, file(rel));
}

void ArtifactDir::adopt(const std::vector<fs::path>& paths) {
  for (const auto& p : paths) {
    const std::string rel = fs::relative(p, root_).generic_string();
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  }
}

double RunManifest::seconds(const std::string& phase) const {
  double total = 0.0;
  for (const auto& t : timings)
    if (t.phase == phase) total += t.seconds;
  return total;
}

Json RunManifest::to_json() const {
  Json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["seeds"] = Json::object();
  for (const auto& [k, v] : seeds) j["seeds"][k] = v;
  j["timings"] = Json::array();
  for (const auto& t : timings) j["timings"].push_back({{"phase", t.phase}, {"seconds", t.seconds}});
  j["files"] = files;
  j["summary"] = summary;
  return j;
}

Rng phase_rng(std::uint64_t seed, const std::string& phase) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : phase) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  Rng mix(seed ^ h);
  return Rng(mix());
}

// ---- data, model, watermark ----

Shape input_shape(const DatasetSection& d) {
  if (d.source == "mnist") return {1, 28, 28};
  if (d.source == "cifar10") return {3, 32, 32};
  return {d.channels, d.side, d.side};
}

std::size_t class_count(const DatasetSection& d) { return d.source == "synthetic" ? d.classes : 10; }

Datasets load_datasets(const ExperimentConfig& cfg, const DatasetSection& d) {
  Datasets out;
  const fs::path dir = resolve(cfg, d.path);
  if (d.source == "mnist") {
    out.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", "train");
    out.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", "test");
  } else if (d.source == "cifar10") {
    std::vector<fs::path> batches;
    for (int i = 1; i <= 5; ++i)
      if (fs::exists(dir / ("data_batch_" + std::to_string(i) + ".bin")))
        batches.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    out.train = load_cifar10(batches, "train");
    out.test = load_cifar10({dir / "test_batch.bin"}, "test");
  } else if (d.source == "synthetic") {
    // One generated set split per class, so both splits share the class templates.
    SyntheticSpec ss;
    ss.classes = d.classes;
    ss.per_class = d.per_class + d.test_per_class;
    ss.channels = d.channels;
    ss.side = d.side;
    ss.seed = d.seed;
    const Dataset all = make_synthetic(ss);
    std::vector<std::size_t> seen(d.classes, 0), train_idx, test_idx;
    for (std::size_t i = 0; i < all.size(); ++i)
      (seen[static_cast<std::size_t>(all.labels[i])]++ < d.per_class ? train_idx : test_idx).push_back(i);
    out.train = select(all, train_idx);
    out.test = select(all, test_idx);
    out.train.split = "train";
    out.test.split = "test";
  } else {
    throw DataError("unknown dataset source '" + d.source + "'");
  }
  if (d.subset) out.train = subset_per_class(out.train, d.subset);
  if (d.test_subset) out.test = subset_per_class(out.test, d.test_subset);
  return out;
}

ModelSpec build_model(const ModelSection& m, const Shape& input, std::size_t classes) {
  if (input.size() != 3 || input[1] != input[2]) throw ModelError("models expect square (C, H, W) inputs");
  const std::size_t c = input[0], side = input[1];
  if (m.arch == "default_cnn") return zoo::default_cnn(c, side, classes, m.conv1, m.conv2);
  if (m.arch == "batchnorm_cnn") return zoo::batchnorm_cnn(c, side, classes);
  if (m.arch == "fc_only") return zoo::fc_only(c, side, classes, m.width ? m.width : 1024);
  if (m.arch == "tiny_resnet") return zoo::tiny_resnet(c, side, classes, m.width ? m.width : 8, m.blocks);
  throw ModelError("unknown architecture '" + m.arch + "'");
}

Watermark build_watermark(const ExperimentConfig& cfg, const Shape& input, std::size_t key_width,
                          const std::vector<Bits>& dotcode) {
  const auto& w = cfg.watermark;
  std::vector<WatermarkKey> keys;
  if (!w.keys_file.empty()) {
    keys = read_keys(resolve(cfg, w.keys_file));
  } else {
    keys = generate_keys(w.n_keys, key_width, w.key_seed);
  }
  for (std::size_t i = 0; i < keys.size(); ++i)
    if (keys[i].vector.size() != key_width)
      throw WatermarkError("key " + std::to_string(i) + " has width " + std::to_string(keys[i].vector.size()) +
                           ", the model has " + std::to_string(key_width) + " outputs");

  const std::size_t n = keys.size(), c = input[0], h = input[1], wd = input[2];
  std::vector<Tensor> secrets;
  if (w.secret.source == "text") {
    const auto texts = w.secret.texts.empty() ? default_secret_texts(n) : w.secret.texts;
    if (texts.size() != n)
      throw WatermarkError(std::to_string(texts.size()) + " secret texts for " + std::to_string(n) + " keys");
    for (const auto& t : texts) secrets.push_back(render_text(t, h, wd, c));
  } else if (w.secret.source == "files") {
    if (w.secret.files.size() != n)
      throw WatermarkError(std::to_string(w.secret.files.size()) + " secret files for " + std::to_string(n) +
                           " keys");
    for (const auto& f : w.secret.files) {
      Tensor img = c == 3 ? read_ppm(resolve(cfg, f)) : read_pgm(resolve(cfg, f));
      if (img.shape() != input)
        throw WatermarkError(resolve(cfg, f).string() + " has shape " + to_string(img.shape()) + ", expected " +
                             to_string(input));
      secrets.push_back(std::move(img));
    }
  } else if (w.secret.source == "dotcode") {
    if (dotcode.size() != n)
      throw WatermarkError(std::to_string(dotcode.size()) + " dot-code chunks for " + std::to_string(n) + " keys");
    for (const auto& bits : dotcode) secrets.push_back(dotcode_encode(bits, c, h, wd));
  } else {
    throw WatermarkError("unknown secret source '" + w.secret.source + "'");
  }

  Watermark wm;
  for (std::size_t i = 0; i < n; ++i) wm.pairs.push_back({keys[i], secrets[i]});
  wm.ssim_stop = w.ssim_stop;
  wm.max_hardening_steps = w.max_hardening_steps;
  wm.ssim_weight = w.ssim_weight;
  wm.mse_weight = w.mse_weight;
  wm.validate();
  return wm;
}

ParameterStore copy_store(const ParameterStore& s) {
  ParameterStore out(s.seed());
  for (const auto& [id, p] : s.entries()) out.add(id, p.value, p.trainable);
  return out;
}

Session make_session(const ExperimentConfig& cfg, RunManifest& m, const SessionOptions& o) {
  Session s;
  s.cfg = cfg;
  const Shape input = input_shape(cfg.dataset);
  if (o.load_data) s.data = timed_phase(m, "load_data", [&] { return load_datasets(cfg, cfg.dataset); });
  s.spec = build_model(cfg.model, input, class_count(cfg.dataset));
  validate(s.spec);
  s.store = ParameterStore(cfg.seed);
  init_parameters(s.spec, s.store);
  s.initial = copy_store(s.store);
  m.seeds["init"] = cfg.seed;

  if (o.warmup && !residual_blocks(s.spec).empty()) {
    if (!o.load_data) throw PhaseError("warmup", "residual warm-up needs training data");
    s.frozen = timed_phase(m, "warmup", [&] {
      WarmupConfig wc;
      wc.epochs = cfg.model.warmup_epochs;
      wc.batch = cfg.training.batch;
      wc.optimizer = {cfg.training.main.kind, cfg.training.main.lr};
      Rng rng = phase_rng(cfg.seed, "warmup");
      return capture_frozen_branches(s.spec, s.store, s.data.train, wc, rng);
    });
  }
  s.fwd = build_forward(s.spec, s.store);
  s.tm = transpose_model(s.spec, s.store, cfg.model.dropout, s.frozen);
  if (cfg.watermark.enabled) {
    s.wm = timed_phase(m, "watermark", [&] { return build_watermark(cfg, input, s.spec.output_dim, o.dotcode); });
    if (cfg.watermark.keys_file.empty()) m.seeds["keys"] = cfg.watermark.key_seed;
  }
  return s;
}

void save_model(const Session& s, const fs::path& checkpoint) {
  ParameterStore out = copy_store(s.store);
  for (const auto& [block, t] : s.frozen) out.add("frozen/" + block, t, false);
  write_checkpoint(out, checkpoint);
}

void load_model(Session& s, const fs::path& checkpoint) {
  NamedTensors params;
  FrozenBranches frozen;
  for (auto& [id, t] : read_checkpoint(checkpoint)) {
    if (id.starts_with("frozen/"))
      frozen[id.substr(7)] = std::move(t);
    else
      params.emplace_back(id, std::move(t));
  }
  load_into(s.store, params);
  s.frozen = std::move(frozen);
  s.tm = transpose_model(s.spec, s.store, s.cfg.model.dropout, s.frozen);
}

// ---- json ----

Json to_json(const HardeningReport& r) {
  Json j;
  j["steps"] = r.steps_taken;
  j["reached_stop"] = r.reached_stop;
  j["final_mean_ssim"] = r.final_mean_ssim;
  j["per_key_ssim"] = r.per_key_ssim;
  j["checkpoints"] = Json::array();
  for (const auto& c : r.checkpoints)
    j["checkpoints"].push_back({{"step", c.step}, {"mean_ssim", c.mean_ssim}, {"best_mean_ssim", c.best_mean_ssim}});
  return j;
}

Json to_json(const TrainReport& r) {
  Json j = Json::array();
  for (const auto& e : r.epochs)
    j.push_back({{"epoch", e.epoch},
                 {"main_loss", e.main_loss},
                 {"watermark_loss", e.watermark_loss},
                 {"accuracy", e.accuracy},
                 {"mean_ssim", e.mean_ssim}});
  return j;
}

Json to_json(const AttackTrace& t) {
  Json j = Json::array();
  for (const auto& p : t.points)
    j.push_back({{"step", p.step}, {"level", p.level}, {"accuracy", p.accuracy}, {"mean_ssim", p.mean_ssim}});
  return j;
}

Json to_json(const ExtractionReport& r) {
  Json j;
  j["mean_ssim"] = r.mean_ssim;
  j["per_key_ssim"] = r.ssim;
  j["per_key_mse"] = r.mse;
  return j;
}

namespace {

std::string image_ext(const Tensor& img) { return img.dim(0) == 3 ? ".ppm" : ".pgm"; }

Json header(const ExperimentConfig& cfg, const std::string& command) {
  Json j;
  j["schema"] = kMetricsSchema;
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  return j;
}

Json describe(const Session& s) {
  Json j;
  j["arch"] = s.cfg.model.arch;
  j["trainable_parameters"] = s.store.trainable_count();
  j["transposed_nodes"] = s.tm.graph.describe();
  j["added_dropout"] = s.cfg.model.dropout;
  return j;
}

Json describe(const Datasets& d) {
  Json j;
  j["train_size"] = d.train.size();
  j["test_size"] = d.test.size();
  j["classes"] = d.train.classes;
  return j;
}

void finish(RunResult& r, ArtifactDir& out) {
  if (!out.enabled()) return;
  out.json("metrics.json", r.metrics);
  out.file("manifest.json");
  r.manifest.files = out.files();
  out.json("manifest.json", r.manifest.to_json());
}

Json watermark_state(Session& s) {
  Json j;
  j["accuracy"] = accuracy(s.fwd, s.store, s.data.test);
  j["mean_ssim"] = mean(watermark_ssim(s.tm.graph, s.store, s.wm));
  return j;
}

}  // namespace

// ---- phases ----

Json harden_phase(Session& s, RunManifest& m) {
  return timed_phase(m, "harden", [&] {
    Rng rng = phase_rng(s.cfg.seed, "harden");
    Optimizer opt({s.cfg.training.harden.kind, s.cfg.training.harden.lr});
    const HardeningReport r = harden(s.store, s.tm.graph, s.wm, opt, rng);
    Json j = to_json(r);
    if (!s.data.test.labels.empty()) j["accuracy"] = accuracy(s.fwd, s.store, s.data.test);
    return j;
  });
}

Json train_phase(Session& s, RunManifest& m) {
  return timed_phase(m, "train", [&] {
    Rng rng = phase_rng(s.cfg.seed, "train");
    const auto& t = s.cfg.training;
    Optimizer main({t.main.kind, t.main.lr});
    Json j;
    if (s.cfg.watermark.enabled) {
      Optimizer wopt({t.watermark.kind, t.watermark.lr});
      ConstraintTrainOptions o;
      o.epochs = t.epochs;
      o.batch = t.batch;
      o.eval = &s.data.test;
      j["epochs"] = to_json(constraint_train(s.store, s.fwd, s.tm.graph, s.data.train, s.wm, main, wopt, rng, o));
    } else {
      j["epochs"] = Json::array();
      for (std::size_t e = 1; e <= t.epochs; ++e) {
        const EpochStats st = train_epoch(s.fwd, s.store, main, s.data.train, t.batch, rng);
        j["epochs"].push_back({{"epoch", e}, {"main_loss", st.mean_loss}, {"accuracy", accuracy(s.fwd, s.store, s.data.test)}});
      }
    }
    return j;
  });
}

Json baseline_phase(Session& s, RunManifest& m) {
  return timed_phase(m, "baseline", [&] {
    ParameterStore b = copy_store(s.initial);
    Rng rng = phase_rng(s.cfg.seed, "train");
    const auto& t = s.cfg.training;
    Optimizer opt({t.main.kind, t.main.lr});
    Json j;
    j["epochs"] = Json::array();
    for (std::size_t e = 1; e <= t.epochs; ++e) {
      const EpochStats st = train_epoch(s.fwd, b, opt, s.data.train, t.batch, rng);
      j["epochs"].push_back({{"epoch", e}, {"main_loss", st.mean_loss}, {"accuracy", accuracy(s.fwd, b, s.data.test)}});
    }
    j["accuracy"] = j["epochs"].empty() ? accuracy(s.fwd, b, s.data.test) : j["epochs"].back()["accuracy"].get<double>();
    if (s.cfg.watermark.enabled) {
      const TransposedModel tm = transpose_model(s.spec, b, s.cfg.model.dropout, s.frozen);
      j["per_key_ssim"] = watermark_ssim(tm.graph, b, s.wm);
    }
    return j;
  });
}

Json attack_phase(Session& s, const AttackSection& a, ArtifactDir& out, RunManifest& m) {
  return timed_phase(m, "attack:" + a.name, [&] {
    ParameterStore store = copy_store(s.store);
    const AttackContext ctx = s.context();
    Rng rng = phase_rng(a.seed, "attack:" + a.name);
    m.seeds["attack:" + a.name] = a.seed;
    FineTuneConfig ft;
    ft.base_lr = s.cfg.training.main.lr;
    ft.optimizer = s.cfg.training.main.kind;
    ft.lr_factor = a.lr_factor;
    ft.epochs = a.epochs;
    ft.batch = s.cfg.training.batch;
    const Dataset& tune = a.split == "test" ? s.data.test : s.data.train;

    Json j;
    j["name"] = a.name;
    j["kind"] = a.kind;
    AttackTrace trace;
    if (a.kind == "fine_tune") {
      j["split"] = a.split;
      j["lr"] = ft.base_lr * ft.lr_factor;
      trace = fine_tune(store, ctx, tune, ft, rng);
    } else if (a.kind == "prune") {
      trace = pruning_curve(store, ctx, a.levels);
    } else if (a.kind == "fine_prune") {
      j["level"] = a.level;
      trace = fine_prune(store, ctx, tune, ft, a.level, rng);
    } else if (a.kind == "erase" || a.kind == "overwrite") {
      AdaptiveConfig ac;
      ac.steps = a.steps;
      ac.lr = a.lr;
      ac.checkpoints = a.checkpoints;
      if (ac.checkpoints.empty() && a.checkpoint_every > 0) {
        for (std::size_t k = 1; k <= std::min<std::size_t>(a.steps, 25); ++k) ac.checkpoints.push_back(k);
        for (std::size_t k = a.checkpoint_every; k <= a.steps; k += a.checkpoint_every)
          if (k > 25) ac.checkpoints.push_back(k);
      }
      Watermark adv;
      if (a.kind == "erase") {
        adv = make_adversary(s.wm, parse_key_source(a.keys), parse_secret_source(a.secrets), a.n_keys, s.spec,
                             s.cfg.model.dropout, a.seed);
        j["keys"] = a.keys;
        j["secrets"] = a.secrets;
        trace = erase_watermark(store, ctx, adv, ac, rng);
      } else {
        for (const auto& k : generate_keys(a.n_keys, s.spec.output_dim, a.seed))
          adv.pairs.push_back({k, render_text(a.text, s.spec.input_shape[1], s.spec.input_shape[2], s.spec.input_shape[0])});
        trace = overwrite_watermark(store, ctx, adv, ac, rng);
        j["new_watermark_ssim"] = mean(watermark_ssim(s.tm.graph, store, adv));
      }
      // First checkpoint where the owner's watermark is gone, and what it cost.
      j["erased_below"] = kErasedSsim;
      j["erased_at_step"] = nullptr;
      for (const auto& p : trace.points)
        if (p.mean_ssim < kErasedSsim) {
          j["erased_at_step"] = p.step;
          j["accuracy_drop"] = trace.points.front().accuracy - p.accuracy;
          break;
        }
    } else if (a.kind == "cross_dataset") {
      const Datasets other = load_datasets(s.cfg, *a.dataset);
      ModelSpec spec = s.spec;
      const CrossDatasetResult r = cross_dataset_finetune(spec, store, s.wm, other.train, other.test,
                                                          class_count(*a.dataset), ft, s.cfg.model.dropout, rng);
      trace = r.trace;
      j["ssim_restored"] = r.ssim_restored;
      j["ssim_swapped"] = r.ssim_swapped;
    } else {
      throw std::invalid_argument("unknown attack '" + a.kind + "'");
    }
    j["points"] = to_json(trace);
    j["final_accuracy"] = trace.last().accuracy;
    j["final_mean_ssim"] = trace.last().mean_ssim;
    if (out.enabled() && a.kind != "cross_dataset") {
      const Tensor strip = trace.strip(s.wm);
      out.image("attacks/" + a.name + image_ext(strip), strip);
    }
    return j;
  });
}

Json verify_phase(Session& s, ArtifactDir& out, RunManifest& m, const std::string& dir) {
  std::vector<WatermarkKey> keys;
  for (const auto& p : s.wm.pairs) keys.push_back(p.key);
  const auto images = timed_phase(m, "extract", [&] { return extract(s.tm.graph, s.store, keys); });
  return timed_phase(m, "verify", [&] {
    const ExtractionReport r = verify(images, s.wm.secrets(), out.enabled() ? out.root() / dir : fs::path{}, "key");
    out.adopt(r.files);
    return to_json(r);
  });
}

// ---- commands ----

RunResult run_experiment(const ExperimentConfig& cfg, ArtifactDir& out, Session* keep) {
  validate(cfg);
  RunResult r;
  auto& m = r.manifest;
  m.command = "run";
  m.config_hash = config_hash(cfg);
  out.text("config.yaml", to_yaml(cfg));

  Session s = make_session(cfg, m);
  Json& j = r.metrics = header(cfg, "run");
  j["model"] = describe(s);
  j["dataset"] = describe(s.data);
  if (cfg.watermark.enabled && out.enabled()) {
    std::vector<WatermarkKey> keys;
    for (const auto& p : s.wm.pairs) keys.push_back(p.key);
    write_keys(keys, out.file("keys.json"));
    for (std::size_t i = 0; i < s.wm.pairs.size(); ++i)
      out.image("secrets/secret_" + std::to_string(i) + image_ext(s.wm.pairs[i].secret), s.wm.pairs[i].secret);
  }

  if (cfg.training.baseline) j["baseline"] = baseline_phase(s, m);
  if (cfg.watermark.enabled) j["hardening"] = harden_phase(s, m);
  j["training"] = train_phase(s, m);
  if (out.enabled()) save_model(s, out.file("model.ckpt"));

  if (!cfg.attacks.empty()) {
    j["attacks"] = Json::array();
    for (const auto& a : cfg.attacks) j["attacks"].push_back(attack_phase(s, a, out, m));
  }

  const double acc = accuracy(s.fwd, s.store, s.data.test);
  j["final"] = {{"accuracy", acc}};
  m.summary["accuracy"] = acc;
  if (cfg.watermark.enabled) {
    j["final"]["verify"] = verify_phase(s, out, m);
    m.summary["mean_ssim"] = j["final"]["verify"]["mean_ssim"];
  }
  if (cfg.training.baseline) {
    const double base = j["baseline"]["accuracy"].get<double>();
    j["final"]["accuracy_gap"] = base - acc;
    m.summary["baseline_accuracy"] = base;
    const double tb = m.seconds("baseline");
    if (tb > 0.0) m.summary["training_overhead"] = m.seconds("train") / tb - 1.0;
  }
  finish(r, out);
  if (keep) *keep = std::move(s);
  return r;
}

RunResult run_extract(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& keys_file,
                      ArtifactDir& out, bool compare) {
  validate(cfg);
  RunResult r;
  auto& m = r.manifest;
  m.command = compare ? "verify" : "extract";
  m.config_hash = config_hash(cfg);

  ExperimentConfig c = cfg;
  c.watermark.enabled = false;
  SessionOptions so;
  so.load_data = false;
  so.warmup = false;
  Session s = make_session(c, m, so);
  timed_phase(m, "load_model", [&] { load_model(s, checkpoint); });
  const auto keys = timed_phase(m, "load_keys", [&] {
    auto k = read_keys(keys_file);
    for (std::size_t i = 0; i < k.size(); ++i)
      if (k[i].vector.size() != s.spec.output_dim)
        throw WatermarkError("key " + std::to_string(i) + " has width " + std::to_string(k[i].vector.size()) +
                             ", the model has " + std::to_string(s.spec.output_dim) + " outputs");
    return k;
  });
  const auto images = timed_phase(m, "extract", [&] { return extract(s.tm.graph, s.store, keys); });

  Json& j = r.metrics = header(cfg, m.command);
  j["keys"] = keys.size();
  for (std::size_t i = 0; i < images.size(); ++i)
    out.image("extract/key_" + std::to_string(i) + image_ext(images[i]), clamp01(images[i]));

  if (compare) {
    if (cfg.watermark.secret.source == "dotcode")
      throw ConfigError("verify: dot-code secrets are checked by the capacity command");
    const Watermark wm = timed_phase(m, "secrets", [&] {
      ExperimentConfig k = cfg;
      k.watermark.keys_file = fs::absolute(keys_file);
      return build_watermark(k, s.spec.input_shape, s.spec.output_dim);
    });
    j["verify"] = timed_phase(m, "verify", [&] {
      const ExtractionReport rep = verify(images, wm.secrets(), out.enabled() ? out.root() / "verify" : fs::path{}, "key");
      out.adopt(rep.files);
      return to_json(rep);
    });
    m.summary["mean_ssim"] = j["verify"]["mean_ssim"];
  }
  finish(r, out);
  return r;
}

RunResult run_attacks(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& keys_file,
                      ArtifactDir& out) {
  validate(cfg);
  if (!cfg.watermark.enabled) throw ConfigError("attack: the config has no watermark section enabled");
  if (cfg.attacks.empty()) throw ConfigError("attack: the config lists no attacks");
  RunResult r;
  auto& m = r.manifest;
  m.command = "attack";
  m.config_hash = config_hash(cfg);

  ExperimentConfig c = cfg;
  c.watermark.keys_file = fs::absolute(keys_file);
  SessionOptions so;
  so.warmup = false;
  Session s = make_session(c, m, so);
  timed_phase(m, "load_model", [&] { load_model(s, checkpoint); });

  Json& j = r.metrics = header(cfg, "attack");
  j["before"] = watermark_state(s);
  j["attacks"] = Json::array();
  for (const auto& a : cfg.attacks) j["attacks"].push_back(attack_phase(s, a, out, m));
  finish(r, out);
  return r;
}

Bits payload_bits(const ExperimentConfig& cfg) {
  const auto& p = *cfg.payload;
  if (!p.file.empty()) {
    std::ifstream in(resolve(cfg, p.file), std::ios::binary);
    if (!in) throw CodecError("cannot read payload " + resolve(cfg, p.file).string());
    std::stringstream ss;
    ss << in.rdbuf();
    return bytes_to_bits(ss.str());
  }
  Rng rng(p.seed);
  Bits b(p.bits);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng.index(2));
  return b;
}

RunResult run_capacity(const ExperimentConfig& cfg, ArtifactDir& out) {
  validate(cfg);
  if (!cfg.payload) throw ConfigError("capacity: the config has no payload section");
  RunResult r;
  auto& m = r.manifest;
  m.command = "capacity";
  m.config_hash = config_hash(cfg);
  out.text("config.yaml", to_yaml(cfg));
  const auto& p = *cfg.payload;

  const Bits payload = timed_phase(m, "payload", [&] {
    Bits b = payload_bits(cfg);
    if (b.empty()) throw CodecError("payload is empty");
    return b;
  });
  m.seeds["payload"] = p.seed;
  const Shape input = input_shape(cfg.dataset);
  DotCodeLayout::make(p.chunk_bits, input[1], input[2]);

  Json& j = r.metrics = header(cfg, "capacity");
  j["payload_bits"] = payload.size();
  j["images"] = p.images;
  j["chunk_bits"] = p.chunk_bits;
  j["modes"] = Json::array();

  for (Ecc ecc : p.ecc) {
    const std::string tag = to_string(ecc);
    const std::size_t slots = p.images * p.chunk_bits;
    const std::size_t room = ecc == Ecc::Hamming74 ? slots / 7 * 4 : slots;
    if (room == 0) throw CodecError("no room for a payload with " + tag);
    // The same payload prefix that fits this mode's capacity.
    const Bits bits(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(std::min(room, payload.size())));
    const EncodedPayload enc = encode_payload(bits, ecc, p.chunk_bits);

    ExperimentConfig c = cfg;
    c.watermark.enabled = true;
    c.watermark.keys_file.clear();
    c.watermark.n_keys = enc.chunks.size();
    c.watermark.secret.source = "dotcode";
    SessionOptions so;
    so.dotcode = enc.chunks;
    Session s = make_session(c, m, so);

    Json mode;
    mode["ecc"] = tag;
    mode["payload_bits"] = bits.size();
    mode["encoded_bits"] = enc.manifest.encoded_length;
    mode["images"] = enc.chunks.size();
    mode["hardening"] = harden_phase(s, m);
    mode["training"] = train_phase(s, m);

    auto decode = [&](const std::string& stage) {
      return timed_phase(m, "decode", [&] {
        std::vector<WatermarkKey> keys;
        for (const auto& pr : s.wm.pairs) keys.push_back(pr.key);
        std::vector<Bits> got;
        Bits channel, sent;
        for (const auto& img : extract(s.tm.graph, s.store, keys)) got.push_back(dotcode_decode(clamp01(img), p.chunk_bits));
        for (std::size_t i = 0; i < got.size(); ++i) {
          channel.insert(channel.end(), got[i].begin(), got[i].end());
          sent.insert(sent.end(), enc.chunks[i].begin(), enc.chunks[i].end());
        }
        std::size_t corrections = 0;
        const Bits decoded = decode_payload(got, enc.manifest, &corrections);
        Json d;
        d["channel_ber"] = ber(channel, sent);
        d["payload_ber"] = ber(decoded, bits);
        d["corrections"] = corrections;
        d["accuracy"] = accuracy(s.fwd, s.store, s.data.test);
        d["mean_ssim"] = mean(watermark_ssim(s.tm.graph, s.store, s.wm));
        if (out.enabled()) {
          std::vector<Tensor> shown;
          for (const auto& img : extract(s.tm.graph, s.store, keys)) shown.push_back(clamp01(img));
          const Tensor grid = image_grid({s.wm.secrets(), shown});
          out.image("capacity/" + tag + "_" + stage + image_ext(grid), grid);
        }
        return d;
      });
    };
    mode["after_training"] = decode("trained");

    const Json tuned = timed_phase(m, "fine_tune", [&] {
      FineTuneConfig ft;
      ft.base_lr = c.training.main.lr;
      ft.optimizer = c.training.main.kind;
      ft.lr_factor = p.finetune_lr_factor;
      ft.epochs = p.finetune_epochs;
      ft.batch = c.training.batch;
      Rng rng = phase_rng(c.seed, "capacity_fine_tune");
      return to_json(fine_tune(s.store, s.context(), s.data.train, ft, rng));
    });
    mode["fine_tune"] = tuned;
    mode["after_fine_tune"] = decode("fine_tuned");
    j["modes"].push_back(mode);
  }

  m.summary["modes"] = Json::array();
  for (const auto& mode : j["modes"])
    m.summary["modes"].push_back({{"ecc", mode["ecc"]},
                                  {"payload_ber", mode["after_training"]["payload_ber"]},
                                  {"payload_ber_fine_tuned", mode["after_fine_tune"]["payload_ber"]}});
  finish(r, out);
  return r;
}

}  // namespace inkwell
