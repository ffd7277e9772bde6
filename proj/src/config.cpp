#include "inkwell/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace inkwell {

namespace {

namespace fs = std::filesystem;

// Tracks which keys of a mapping were consumed so leftovers can be rejected.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(where() + " must be a mapping");
  }

  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    seen_.insert(key);
    out = convert<T>(node_[key], key);
  }

  template <class T>
  void require(const std::string& key, T& out) {
    if (!has(key)) throw ConfigError("missing required key '" + join(key) + "'");
    get(key, out);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(has(key) ? node_[key] : YAML::Node(), join(key));
  }

  YAML::Node raw(const std::string& key) {
    seen_.insert(key);
    return node_[key];
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown key '" + join(key) + "'");
    }
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  template <class T>
  T convert(const YAML::Node& n, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        const auto v = n.as<long long>();
        if (v < 0) throw ConfigError("'" + join(key) + "' must be non-negative");
        return static_cast<T>(v);
      } else if constexpr (std::is_same_v<T, fs::path>) {
        return fs::path(n.as<std::string>());
      } else if constexpr (std::is_same_v<T, OptimizerKind>) {
        return parse_optimizer_kind(n.as<std::string>());
      } else if constexpr (std::is_same_v<T, std::vector<fs::path>>) {
        std::vector<fs::path> out;
        for (const auto& s : n.as<std::vector<std::string>>()) out.emplace_back(s);
        return out;
      } else if constexpr (std::is_same_v<T, std::vector<Ecc>>) {
        std::vector<Ecc> out;
        for (const auto& s : n.as<std::vector<std::string>>()) out.push_back(parse_ecc(s));
        return out;
      } else {
        return n.as<T>();
      }
    } catch (const YAML::Exception&) {
      throw ConfigError("'" + join(key) + "' has the wrong type");
    } catch (const CodecError& e) {
      throw ConfigError("'" + join(key) + "': " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("'" + join(key) + "': " + e.what());
    }
  }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_optimizer(Section s, OptimizerSection& o) {
  s.get("kind", o.kind);
  s.get("lr", o.lr);
  s.finish();
}

DatasetSection read_dataset(Section s, std::uint64_t default_seed) {
  DatasetSection d;
  d.seed = default_seed;
  s.get("source", d.source);
  s.get("path", d.path);
  s.get("subset", d.subset);
  s.get("test_subset", d.test_subset);
  s.get("classes", d.classes);
  s.get("per_class", d.per_class);
  s.get("test_per_class", d.test_per_class);
  s.get("channels", d.channels);
  s.get("side", d.side);
  if (d.source == "synthetic")
    s.require("seed", d.seed);
  else
    s.get("seed", d.seed);
  s.finish();
  return d;
}

AttackSection read_attack(Section s, std::uint64_t default_seed) {
  AttackSection a;
  a.seed = default_seed;
  s.require("kind", a.kind);
  a.name = a.kind;
  s.get("name", a.name);
  s.get("epochs", a.epochs);
  s.get("lr_factor", a.lr_factor);
  s.get("split", a.split);
  s.get("levels", a.levels);
  s.get("level", a.level);
  s.get("keys", a.keys);
  s.get("secrets", a.secrets);
  s.get("n_keys", a.n_keys);
  s.get("steps", a.steps);
  s.get("lr", a.lr);
  s.get("checkpoints", a.checkpoints);
  s.get("checkpoint_every", a.checkpoint_every);
  s.get("seed", a.seed);
  s.get("text", a.text);
  if (s.has("dataset")) a.dataset = read_dataset(s.child("dataset"), default_seed);
  s.finish();
  return a;
}

void emit_optimizer(YAML::Emitter& e, const char* key, const OptimizerSection& o) {
  e << YAML::Key << key << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << to_string(o.kind);
  e << YAML::Key << "lr" << YAML::Value << o.lr;
  e << YAML::EndMap;
}

void emit_dataset(YAML::Emitter& e, const DatasetSection& d) {
  e << YAML::BeginMap;
  e << YAML::Key << "source" << YAML::Value << d.source;
  e << YAML::Key << "path" << YAML::Value << d.path.string();
  e << YAML::Key << "subset" << YAML::Value << d.subset;
  e << YAML::Key << "test_subset" << YAML::Value << d.test_subset;
  if (d.source == "synthetic") {
    e << YAML::Key << "classes" << YAML::Value << d.classes;
    e << YAML::Key << "per_class" << YAML::Value << d.per_class;
    e << YAML::Key << "test_per_class" << YAML::Value << d.test_per_class;
    e << YAML::Key << "channels" << YAML::Value << d.channels;
    e << YAML::Key << "side" << YAML::Value << d.side;
    e << YAML::Key << "seed" << YAML::Value << d.seed;
  }
  e << YAML::EndMap;
}

template <class T>
void emit_list(YAML::Emitter& e, const char* key, const std::vector<T>& v) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& x : v) e << x;
  e << YAML::EndSeq;
}

bool readable(const fs::path& p) { return std::ifstream(p, std::ios::binary).good(); }

void check_dataset(const ExperimentConfig& cfg, const DatasetSection& d, const std::string& where) {
  if (d.source == "mnist") {
    for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                          "t10k-labels-idx1-ubyte"})
      if (!readable(resolve(cfg, d.path) / f))
        throw ConfigError(where + ".path: missing " + (resolve(cfg, d.path) / f).string());
  } else if (d.source == "cifar10") {
    for (const char* f : {"data_batch_1.bin", "test_batch.bin"})
      if (!readable(resolve(cfg, d.path) / f))
        throw ConfigError(where + ".path: missing " + (resolve(cfg, d.path) / f).string());
  } else if (d.source == "synthetic") {
    if (d.side < 8) throw ConfigError(where + ".side must be at least 8");
    if (d.channels != 1 && d.channels != 3) throw ConfigError(where + ".channels must be 1 or 3");
    if (d.classes < 2 || d.per_class == 0 || d.test_per_class == 0)
      throw ConfigError(where + ": synthetic data needs at least 2 classes and 1 sample per class");
  } else {
    throw ConfigError(where + ".source: unknown source '" + d.source + "' (expected mnist, cifar10 or synthetic)");
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& yaml_text, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("invalid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("config must be a mapping");

  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  Section top(root, "");
  top.require("seed", cfg.seed);
  top.get("out", cfg.out);

  {
    Section m = top.child("model");
    m.get("arch", cfg.model.arch);
    m.get("conv1", cfg.model.conv1);
    m.get("conv2", cfg.model.conv2);
    m.get("width", cfg.model.width);
    m.get("blocks", cfg.model.blocks);
    m.get("dropout", cfg.model.dropout);
    m.get("warmup_epochs", cfg.model.warmup_epochs);
    m.finish();
  }

  cfg.dataset = read_dataset(top.child("dataset"), cfg.seed);

  {
    Section w = top.child("watermark");
    auto& wm = cfg.watermark;
    w.get("enabled", wm.enabled);
    w.get("n_keys", wm.n_keys);
    w.get("keys_file", wm.keys_file);
    if (wm.enabled && wm.keys_file.empty())
      w.require("key_seed", wm.key_seed);
    else
      w.get("key_seed", wm.key_seed);
    {
      Section s = w.child("secret");
      s.get("source", wm.secret.source);
      s.get("texts", wm.secret.texts);
      s.get("files", wm.secret.files);
      s.finish();
    }
    w.get("ssim_stop", wm.ssim_stop);
    w.get("max_hardening_steps", wm.max_hardening_steps);
    w.get("ssim_weight", wm.ssim_weight);
    w.get("mse_weight", wm.mse_weight);
    w.finish();
  }

  {
    Section t = top.child("training");
    if (t.has("harden")) read_optimizer(t.child("harden"), cfg.training.harden);
    if (t.has("main")) read_optimizer(t.child("main"), cfg.training.main);
    if (t.has("watermark")) read_optimizer(t.child("watermark"), cfg.training.watermark);
    t.get("epochs", cfg.training.epochs);
    t.get("batch", cfg.training.batch);
    t.get("baseline", cfg.training.baseline);
    t.finish();
  }

  if (top.has("attacks")) {
    const YAML::Node list = top.raw("attacks");
    if (!list.IsSequence()) throw ConfigError("'attacks' must be a list");
    for (std::size_t i = 0; i < list.size(); ++i)
      cfg.attacks.push_back(read_attack(Section(list[i], "attacks[" + std::to_string(i) + "]"), cfg.seed + 1 + i));
  }

  if (top.has("payload")) {
    Section p = top.child("payload");
    PayloadSection pl;
    pl.seed = cfg.seed;
    p.get("file", pl.file);
    p.get("bits", pl.bits);
    p.get("seed", pl.seed);
    p.get("images", pl.images);
    p.get("chunk_bits", pl.chunk_bits);
    p.get("ecc", pl.ecc);
    p.get("finetune_epochs", pl.finetune_epochs);
    p.get("finetune_lr_factor", pl.finetune_lr_factor);
    p.finish();
    cfg.payload = pl;
  }

  top.finish();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

fs::path resolve(const ExperimentConfig& cfg, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return cfg.base_dir / p;
}

void validate(const ExperimentConfig& cfg) {
  const auto& m = cfg.model;
  if (m.arch != "default_cnn" && m.arch != "batchnorm_cnn" && m.arch != "fc_only" && m.arch != "tiny_resnet")
    throw ConfigError("model.arch: unknown architecture '" + m.arch + "'");
  if (!(m.dropout >= 0.0f && m.dropout < 1.0f)) throw ConfigError("model.dropout must be in [0, 1)");

  check_dataset(cfg, cfg.dataset, "dataset");

  const auto& w = cfg.watermark;
  if (w.enabled) {
    if (!w.keys_file.empty() && !readable(resolve(cfg, w.keys_file)))
      throw ConfigError("watermark.keys_file: cannot read " + resolve(cfg, w.keys_file).string());
    if (w.keys_file.empty() && w.n_keys == 0) throw ConfigError("watermark.n_keys must be positive");
    if (w.secret.source == "files") {
      if (w.secret.files.empty()) throw ConfigError("watermark.secret.files is empty");
      for (const auto& f : w.secret.files)
        if (!readable(resolve(cfg, f)))
          throw ConfigError("watermark.secret.files: cannot read " + resolve(cfg, f).string());
    } else if (w.secret.source == "dotcode") {
      if (!cfg.payload) throw ConfigError("watermark.secret.source 'dotcode' needs a payload section");
    } else if (w.secret.source != "text") {
      throw ConfigError("watermark.secret.source: unknown source '" + w.secret.source +
                        "' (expected text, files or dotcode)");
    }
    if (!(w.ssim_stop > -1.0 && w.ssim_stop <= 1.0)) throw ConfigError("watermark.ssim_stop must be in (-1, 1]");
  }

  if (cfg.training.batch == 0) throw ConfigError("training.batch must be positive");
  for (const auto* o : {&cfg.training.harden, &cfg.training.main, &cfg.training.watermark})
    if (!(o->lr > 0.0f)) throw ConfigError("training: learning rates must be positive");

  for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
    const auto& a = cfg.attacks[i];
    const std::string where = "attacks[" + std::to_string(i) + "]";
    static const std::set<std::string> kinds{"fine_tune", "prune", "fine_prune", "erase", "overwrite",
                                             "cross_dataset"};
    if (!kinds.count(a.kind)) throw ConfigError(where + ".kind: unknown attack '" + a.kind + "'");
    if (a.split != "train" && a.split != "test") throw ConfigError(where + ".split must be train or test");
    if (a.kind == "prune" && a.levels.empty()) throw ConfigError(where + ".levels is empty");
    for (double l : a.levels)
      if (!(l >= 0.0 && l < 1.0)) throw ConfigError(where + ".levels must lie in [0, 1)");
    if (!(a.level >= 0.0 && a.level < 1.0)) throw ConfigError(where + ".level must be in [0, 1)");
    if (a.kind == "erase" || a.kind == "overwrite") {
      if (!w.enabled) throw ConfigError(where + ": adaptive attacks need a watermark");
      if (a.keys != "embedded" && a.keys != "random") throw ConfigError(where + ".keys must be embedded or random");
      if (a.secrets != "noise" && a.secrets != "black" && a.secrets != "unwatermarked_extraction")
        throw ConfigError(where + ".secrets must be noise, black or unwatermarked_extraction");
    }
    if (a.kind == "cross_dataset") {
      if (!a.dataset) throw ConfigError(where + ".dataset is required for cross_dataset");
      check_dataset(cfg, *a.dataset, where + ".dataset");
    }
  }

  if (cfg.payload) {
    const auto& p = *cfg.payload;
    if (!p.file.empty() && !readable(resolve(cfg, p.file)))
      throw ConfigError("payload.file: cannot read " + resolve(cfg, p.file).string());
    if (p.file.empty() && p.bits == 0) throw ConfigError("payload.bits must be positive");
    if (p.images == 0 || p.chunk_bits == 0) throw ConfigError("payload.images and payload.chunk_bits must be positive");
    if (p.ecc.empty()) throw ConfigError("payload.ecc is empty");
  }
}

std::string to_yaml(const ExperimentConfig& cfg) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e.SetFloatPrecision(9);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << cfg.seed;
  e << YAML::Key << "out" << YAML::Value << cfg.out.string();

  const auto& m = cfg.model;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "arch" << YAML::Value << m.arch;
  e << YAML::Key << "conv1" << YAML::Value << m.conv1;
  e << YAML::Key << "conv2" << YAML::Value << m.conv2;
  e << YAML::Key << "width" << YAML::Value << m.width;
  e << YAML::Key << "blocks" << YAML::Value << m.blocks;
  e << YAML::Key << "dropout" << YAML::Value << m.dropout;
  e << YAML::Key << "warmup_epochs" << YAML::Value << m.warmup_epochs;
  e << YAML::EndMap;

  e << YAML::Key << "dataset" << YAML::Value;
  emit_dataset(e, cfg.dataset);

  const auto& w = cfg.watermark;
  e << YAML::Key << "watermark" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "enabled" << YAML::Value << w.enabled;
  e << YAML::Key << "n_keys" << YAML::Value << w.n_keys;
  e << YAML::Key << "key_seed" << YAML::Value << w.key_seed;
  if (!w.keys_file.empty()) e << YAML::Key << "keys_file" << YAML::Value << w.keys_file.string();
  e << YAML::Key << "secret" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "source" << YAML::Value << w.secret.source;
  emit_list(e, "texts", w.secret.texts);
  std::vector<std::string> files;
  for (const auto& f : w.secret.files) files.push_back(f.string());
  emit_list(e, "files", files);
  e << YAML::EndMap;
  e << YAML::Key << "ssim_stop" << YAML::Value << w.ssim_stop;
  e << YAML::Key << "max_hardening_steps" << YAML::Value << w.max_hardening_steps;
  e << YAML::Key << "ssim_weight" << YAML::Value << w.ssim_weight;
  e << YAML::Key << "mse_weight" << YAML::Value << w.mse_weight;
  e << YAML::EndMap;

  const auto& t = cfg.training;
  e << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  emit_optimizer(e, "harden", t.harden);
  emit_optimizer(e, "main", t.main);
  emit_optimizer(e, "watermark", t.watermark);
  e << YAML::Key << "epochs" << YAML::Value << t.epochs;
  e << YAML::Key << "batch" << YAML::Value << t.batch;
  e << YAML::Key << "baseline" << YAML::Value << t.baseline;
  e << YAML::EndMap;

  e << YAML::Key << "attacks" << YAML::Value << YAML::BeginSeq;
  for (const auto& a : cfg.attacks) {
    e << YAML::BeginMap;
    e << YAML::Key << "kind" << YAML::Value << a.kind;
    e << YAML::Key << "name" << YAML::Value << a.name;
    e << YAML::Key << "epochs" << YAML::Value << a.epochs;
    e << YAML::Key << "lr_factor" << YAML::Value << a.lr_factor;
    e << YAML::Key << "split" << YAML::Value << a.split;
    emit_list(e, "levels", a.levels);
    e << YAML::Key << "level" << YAML::Value << a.level;
    e << YAML::Key << "keys" << YAML::Value << a.keys;
    e << YAML::Key << "secrets" << YAML::Value << a.secrets;
    e << YAML::Key << "n_keys" << YAML::Value << a.n_keys;
    e << YAML::Key << "steps" << YAML::Value << a.steps;
    e << YAML::Key << "lr" << YAML::Value << a.lr;
    emit_list(e, "checkpoints", a.checkpoints);
    e << YAML::Key << "checkpoint_every" << YAML::Value << a.checkpoint_every;
    e << YAML::Key << "seed" << YAML::Value << a.seed;
    e << YAML::Key << "text" << YAML::Value << a.text;
    if (a.dataset) {
      e << YAML::Key << "dataset" << YAML::Value;
      emit_dataset(e, *a.dataset);
    }
    e << YAML::EndMap;
  }
  e << YAML::EndSeq;

  if (cfg.payload) {
    const auto& p = *cfg.payload;
    e << YAML::Key << "payload" << YAML::Value << YAML::BeginMap;
    if (!p.file.empty()) e << YAML::Key << "file" << YAML::Value << p.file.string();
    e << YAML::Key << "bits" << YAML::Value << p.bits;
    e << YAML::Key << "seed" << YAML::Value << p.seed;
    e << YAML::Key << "images" << YAML::Value << p.images;
    e << YAML::Key << "chunk_bits" << YAML::Value << p.chunk_bits;
    std::vector<std::string> ecc;
    for (Ecc x : p.ecc) ecc.push_back(to_string(x));
    emit_list(e, "ecc", ecc);
    e << YAML::Key << "finetune_epochs" << YAML::Value << p.finetune_epochs;
    e << YAML::Key << "finetune_lr_factor" << YAML::Value << p.finetune_lr_factor;
    e << YAML::EndMap;
  }
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig key = cfg;
  key.out.clear();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_yaml(key)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace inkwell
