#include "inkwell/attack.hpp"

#include <algorithm>
#include <cmath>

#include "inkwell/metrics.hpp"
#include "inkwell/trainer.hpp"

namespace inkwell {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ParameterStore copy_store(const ParameterStore& src) {
  ParameterStore out(src.seed());
  for (const auto& [id, p] : src.entries()) out.add(id, p.value, p.trainable);
  return out;
}

AttackTrace adaptive(const char* kind, ParameterStore& store, const AttackContext& ctx, const Watermark& adv,
                     const AdaptiveConfig& cfg, Rng& rng) {
  adv.validate();
  std::vector<std::size_t> checkpoints = cfg.checkpoints;
  if (checkpoints.empty())
    for (std::size_t s = 1; s <= std::min<std::size_t>(cfg.steps, 25); ++s) checkpoints.push_back(s);
  AttackTrace trace{kind, {measure(store, ctx, 0)}};
  Optimizer opt({cfg.optimizer, cfg.lr});
  const Tensor keys = adv.key_batch(), secrets = adv.secret_batch();
  for (std::size_t s = 1; s <= cfg.steps; ++s) {
    watermark_step(ctx.twd, store, opt, keys, secrets, adv.ssim_weight, adv.mse_weight, rng);
    if (std::find(checkpoints.begin(), checkpoints.end(), s) != checkpoints.end() || s == cfg.steps)
      trace.points.push_back(measure(store, ctx, s));
  }
  return trace;
}

}  // namespace

Tensor AttackTrace::strip(const Watermark& wm) const {
  std::vector<std::vector<Tensor>> rows{wm.secrets()};
  for (const auto& p : points)
    if (!p.extracted.empty()) rows.push_back(p.extracted);
  return image_grid(rows);
}

TracePoint measure(ParameterStore& store, const AttackContext& ctx, std::size_t step, double level) {
  TracePoint p;
  p.step = step;
  p.level = level;
  p.accuracy = accuracy(ctx.fwd, store, ctx.eval);
  const Tensor out = extract_batch(ctx.twd, store, ctx.wm.key_batch());
  p.mean_ssim = mean(ssim_per_image(out, ctx.wm.secret_batch()));
  for (std::size_t i = 0; i < out.dim(0); ++i) p.extracted.push_back(clamp01(image_at(out, i)));
  return p;
}

AttackTrace fine_tune(ParameterStore& store, const AttackContext& ctx, const Dataset& data, const FineTuneConfig& cfg,
                      Rng& rng) {
  AttackTrace trace{"fine_tune", {measure(store, ctx, 0)}};
  if (cfg.epochs == 0) return trace;
  Optimizer opt({cfg.optimizer, cfg.base_lr * cfg.lr_factor});
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    train_epoch(ctx.fwd, store, opt, data, cfg.batch, rng);
    trace.points.push_back(measure(store, ctx, e));
  }
  return trace;
}

std::vector<std::string> prunable_ids(const ParameterStore& store) {
  std::vector<std::string> ids;
  for (const auto& [id, p] : store.entries())
    if (p.trainable && ends_with(id, ".weight")) ids.push_back(id);
  return ids;
}

std::size_t prune(ParameterStore& store, double level) {
  if (!(level >= 0.0 && level < 1.0)) throw std::invalid_argument("pruning level must be in [0, 1)");
  struct Entry {
    float mag;
    std::uint32_t tensor;
    std::uint32_t index;
  };
  const auto ids = prunable_ids(store);
  std::vector<Entry> all;
  for (std::uint32_t t = 0; t < ids.size(); ++t) {
    const Tensor& w = store.at(ids[t]).value;
    for (std::uint32_t i = 0; i < w.size(); ++i) all.push_back({std::fabs(w[i]), t, i});
  }
  const auto k = static_cast<std::size_t>(std::floor(level * static_cast<double>(all.size())));
  if (k == 0) return 0;
  auto less = [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    if (a.tensor != b.tensor) return a.tensor < b.tensor;
    return a.index < b.index;
  };
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k - 1), all.end(), less);
  for (std::size_t j = 0; j < k; ++j) store.at(ids[all[j].tensor]).value[all[j].index] = 0.0f;
  return k;
}

AttackTrace pruning_curve(const ParameterStore& store, const AttackContext& ctx, const std::vector<double>& levels) {
  AttackTrace trace{"prune", {}};
  for (std::size_t i = 0; i < levels.size(); ++i) {
    ParameterStore copy = copy_store(store);
    prune(copy, levels[i]);
    trace.points.push_back(measure(copy, ctx, i, levels[i]));
  }
  return trace;
}

AttackTrace fine_prune(ParameterStore& store, const AttackContext& ctx, const Dataset& data, const FineTuneConfig& cfg,
                       double level, Rng& rng) {
  AttackTrace trace = fine_tune(store, ctx, data, cfg, rng);
  trace.kind = "fine_prune";
  prune(store, level);
  trace.points.push_back(measure(store, ctx, cfg.epochs + 1, level));
  return trace;
}

KeySource parse_key_source(const std::string& s) {
  if (s == "embedded") return KeySource::Embedded;
  if (s == "random") return KeySource::Random;
  throw std::invalid_argument("unknown key source '" + s + "' (expected embedded or random)");
}

SecretSource parse_secret_source(const std::string& s) {
  if (s == "noise") return SecretSource::Noise;
  if (s == "black") return SecretSource::Black;
  if (s == "unwatermarked_extraction") return SecretSource::UnwatermarkedExtraction;
  throw std::invalid_argument("unknown secret source '" + s + "' (expected noise, black or unwatermarked_extraction)");
}

std::string to_string(KeySource k) { return k == KeySource::Embedded ? "embedded" : "random"; }

std::string to_string(SecretSource s) {
  switch (s) {
    case SecretSource::Noise: return "noise";
    case SecretSource::Black: return "black";
    default: return "unwatermarked_extraction";
  }
}

Watermark make_adversary(const Watermark& owner, KeySource keys, SecretSource secrets, std::size_t n_keys,
                         const ModelSpec& spec, float dropout_rate, std::uint64_t seed) {
  owner.validate();
  if (n_keys == 0) throw std::invalid_argument("adversary needs at least one key");
  const std::size_t width = owner.pairs.front().key.vector.size();
  const Shape& shape = owner.pairs.front().secret.shape();
  std::vector<WatermarkKey> k;
  if (keys == KeySource::Embedded) {
    for (std::size_t i = 0; i < n_keys; ++i) k.push_back(owner.pairs[i % owner.pairs.size()].key);
  } else {
    k = generate_keys(n_keys, width, seed);
  }
  std::vector<Tensor> s;
  if (secrets == SecretSource::UnwatermarkedExtraction) {
    ParameterStore fresh(seed);
    init_parameters(spec, fresh);
    const TransposedModel tm = transpose_model(spec, fresh, dropout_rate);
    s = extract(tm.graph, fresh, k);
  } else {
    Rng rng(seed ^ 0x5eedULL);
    for (std::size_t i = 0; i < n_keys; ++i) {
      Tensor img(shape, 0.0f);
      if (secrets == SecretSource::Noise)
        for (auto& v : img.values()) v = rng.uniform(0.0f, 1.0f);
      s.push_back(std::move(img));
    }
  }
  Watermark adv = owner;
  adv.pairs.clear();
  for (std::size_t i = 0; i < n_keys; ++i) adv.pairs.push_back({k[i], s[i]});
  return adv;
}

AttackTrace erase_watermark(ParameterStore& store, const AttackContext& ctx, const Watermark& adversary,
                            const AdaptiveConfig& cfg, Rng& rng) {
  return adaptive("erase", store, ctx, adversary, cfg, rng);
}

AttackTrace overwrite_watermark(ParameterStore& store, const AttackContext& ctx, const Watermark& new_wm,
                                const AdaptiveConfig& cfg, Rng& rng) {
  return adaptive("overwrite", store, ctx, new_wm, cfg, rng);
}

CrossDatasetResult cross_dataset_finetune(ModelSpec& spec, ParameterStore& store, const Watermark& wm,
                                          const Dataset& data, const Dataset& eval, std::size_t new_classes,
                                          const FineTuneConfig& cfg, float dropout_rate, Rng& rng) {
  if (data.sample_shape() != spec.input_shape)
    throw ModelError("cross-dataset fine-tuning: data shape " + to_string(data.sample_shape()) +
                     " does not match model input " + to_string(spec.input_shape));
  CrossDatasetResult r;
  const ArchivedHead head = swap_last_layer(spec, store, new_classes);
  {
    const Graph fwd = build_forward(spec, store);
    const TransposedModel swapped = transpose_model(spec, store, dropout_rate);
    Watermark cut = wm;
    for (auto& p : cut.pairs) {
      Tensor k({new_classes}, 0.0f);
      for (std::size_t i = 0; i < std::min(new_classes, p.key.vector.size()); ++i) k[i] = p.key.vector[i];
      p.key.vector = k;
    }
    const AttackContext ctx{fwd, swapped.graph, cut, eval};
    r.trace = fine_tune(store, ctx, data, cfg, rng);
    r.trace.kind = "cross_dataset";
    r.ssim_swapped = r.trace.last().mean_ssim;
  }
  restore_last_layer(spec, store, head);
  const TransposedModel tm = transpose_model(spec, store, dropout_rate);
  r.ssim_restored = mean(watermark_ssim(tm.graph, store, wm));
  return r;
}

}  // namespace inkwell
