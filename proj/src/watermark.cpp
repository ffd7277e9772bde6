#include "inkwell/watermark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "inkwell/metrics.hpp"
#include "inkwell/trainer.hpp"

namespace inkwell {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

void Watermark::validate() const {
  if (pairs.empty()) throw WatermarkError("watermark has no key/secret pairs");
  const Shape& ks = pairs.front().key.vector.shape();
  const Shape& ss = pairs.front().secret.shape();
  if (ks.size() != 1) throw WatermarkError("keys must be vectors, got " + to_string(ks));
  for (const auto& p : pairs) {
    if (p.key.vector.shape() != ks) throw WatermarkError("keys have different widths");
    if (p.secret.shape() != ss) throw WatermarkError("secrets have different shapes");
    validate_key(p.key);
  }
  if (ssim_stop > 1.0) throw WatermarkError("ssim_stop above 1 can never be reached");
}

Tensor Watermark::key_batch() const {
  std::vector<Tensor> v;
  for (const auto& p : pairs) v.push_back(p.key.vector);
  return stack(v);
}

Tensor Watermark::secret_batch() const { return stack(secrets()); }

std::vector<Tensor> Watermark::secrets() const {
  std::vector<Tensor> v;
  for (const auto& p : pairs) v.push_back(p.secret);
  return v;
}

std::vector<WatermarkKey> generate_keys(std::size_t n, std::size_t width, std::uint64_t seed, float lo, float hi) {
  if (n == 0 || width == 0) throw WatermarkError("generate_keys: n and width must be positive");
  if (!(lo < hi)) throw WatermarkError("generate_keys: lo must be below hi");
  std::vector<WatermarkKey> keys;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed + i);
    WatermarkKey k{Tensor({width}), seed + i};
    for (auto& v : k.vector.values()) v = rng.uniform(lo, hi);
    keys.push_back(std::move(k));
  }
  return keys;
}

void validate_key(const WatermarkKey& key, float lo, float hi) {
  if (key.vector.rank() != 1 || key.vector.empty()) throw WatermarkError("key must be a non-empty vector");
  for (float v : key.vector.values())
    if (!(v >= lo && v <= hi))
      throw WatermarkError("key value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "]");
}

void write_keys(const std::vector<WatermarkKey>& keys, const fs::path& path) {
  nlohmann::json j;
  j["keys"] = nlohmann::json::array();
  for (const auto& k : keys) j["keys"].push_back({{"seed", k.seed}, {"values", k.vector.storage()}});
  std::ofstream out(path);
  if (!out) throw WatermarkError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<WatermarkKey> read_keys(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw WatermarkError("cannot open keys file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw WatermarkError(path.string() + ": " + e.what());
  }
  if (!j.contains("keys") || !j["keys"].is_array() || j["keys"].empty())
    throw WatermarkError(path.string() + ": expected a non-empty \"keys\" array");
  std::vector<WatermarkKey> keys;
  for (const auto& e : j["keys"]) {
    const auto values = e.at("values").get<std::vector<float>>();
    if (values.empty()) throw WatermarkError(path.string() + ": empty key");
    WatermarkKey k{Tensor({values.size()}, values), e.value("seed", std::uint64_t{0})};
    validate_key(k);
    keys.push_back(std::move(k));
  }
  for (const auto& k : keys)
    if (k.vector.size() != keys.front().vector.size()) throw WatermarkError(path.string() + ": keys differ in width");
  return keys;
}

std::vector<std::string> default_secret_texts(std::size_t n) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (std::size_t c = 0; c < 4; ++c) s += alphabet[(i * 4 + c) % alphabet.size()];
    out.push_back(s);
  }
  return out;
}

WatermarkStepResult watermark_step(const Graph& twd, ParameterStore& store, Optimizer& opt, const Tensor& keys,
                                   const Tensor& secrets, float ssim_weight, float mse_weight, Rng& rng) {
  Tape t;
  RunContext ctx{Mode::Train, &rng, nullptr};
  Var out = twd.forward(t, t.constant_ref(keys), store, ctx);
  Var target = t.constant_ref(secrets);
  Var s = ops::ssim(t, out, target);
  Var loss = ops::add(t, ops::scale(t, ops::add_scalar(t, ops::scale(t, s, -1.0f), 1.0f), ssim_weight),
                      ops::scale(t, ops::mse(t, out, target), mse_weight));
  WatermarkStepResult r{t.value(loss)[0], t.value(s)[0]};
  if (!std::isfinite(r.loss)) throw WatermarkError("watermark loss is not finite (SSIM " + std::to_string(r.ssim) + ")");
  t.backward(loss, &store);
  opt.step(store);
  return r;
}

Tensor extract_batch(const Graph& twd, ParameterStore& store, const Tensor& keys) { return twd.infer(keys, store); }

std::vector<Tensor> extract(const Graph& twd, ParameterStore& store, const std::vector<WatermarkKey>& keys) {
  std::vector<Tensor> v;
  for (const auto& k : keys) v.push_back(k.vector);
  const Tensor out = extract_batch(twd, store, stack(v));
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < keys.size(); ++i) images.push_back(clamp01(image_at(out, i)));
  return images;
}

std::vector<double> watermark_ssim(const Graph& twd, ParameterStore& store, const Watermark& wm) {
  const Tensor out = extract_batch(twd, store, wm.key_batch());
  return ssim_per_image(out, wm.secret_batch());
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Tensor clamp01(Tensor t) {
  for (auto& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
  return t;
}

HardeningReport harden(ParameterStore& store, const Graph& twd, const Watermark& wm, Optimizer& opt, Rng& rng,
                       const HardenOptions& options) {
  wm.validate();
  const auto t0 = Clock::now();
  const Tensor keys = wm.key_batch(), secrets = wm.secret_batch();
  HardeningReport r;
  double best = -1.0;
  std::vector<double> per_key = watermark_ssim(twd, store, wm);
  double current = mean(per_key);
  while (current < wm.ssim_stop && r.steps_taken < wm.max_hardening_steps) {
    watermark_step(twd, store, opt, keys, secrets, wm.ssim_weight, wm.mse_weight, rng);
    ++r.steps_taken;
    per_key = watermark_ssim(twd, store, wm);
    current = mean(per_key);
    if (!std::isfinite(current)) throw WatermarkError("hardening diverged at step " + std::to_string(r.steps_taken));
    best = std::max(best, current);
    if (options.on_step) options.on_step(r.steps_taken, current);
    if (options.checkpoint_every && r.steps_taken % options.checkpoint_every == 0)
      r.checkpoints.push_back({r.steps_taken, current, best});
  }
  r.per_key_ssim = per_key;
  r.final_mean_ssim = current;
  r.reached_stop = current >= wm.ssim_stop;
  r.wall_seconds = seconds_since(t0);
  return r;
}

TrainReport constraint_train(ParameterStore& store, const Graph& fwd, const Graph& twd, const Dataset& data,
                             const Watermark& wm, Optimizer& main_opt, Optimizer& wm_opt, Rng& rng,
                             const ConstraintTrainOptions& options) {
  wm.validate();
  const auto t0 = Clock::now();
  const Tensor keys = wm.key_batch(), secrets = wm.secret_batch();
  TrainReport report;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    const auto te = Clock::now();
    double main_loss = 0.0, wm_loss = 0.0;
    std::size_t steps = 0;
    for_each_batch(data, options.batch, rng, [&](const Tensor& x, const std::vector<int>& y) {
      main_loss += classification_step(fwd, store, main_opt, x, y, rng);
      wm_loss += watermark_step(twd, store, wm_opt, keys, secrets, wm.ssim_weight, wm.mse_weight, rng).loss;
      ++steps;
    });
    EpochReport er;
    er.epoch = e + 1;
    er.main_loss = steps ? main_loss / static_cast<double>(steps) : 0.0;
    er.watermark_loss = steps ? wm_loss / static_cast<double>(steps) : 0.0;
    er.accuracy = accuracy(fwd, store, options.eval ? *options.eval : data);
    er.mean_ssim = mean(watermark_ssim(twd, store, wm));
    er.seconds = seconds_since(te);
    report.epochs.push_back(er);
  }
  report.wall_seconds = seconds_since(t0);
  return report;
}

ExtractionReport verify(const std::vector<Tensor>& extracted, const std::vector<Tensor>& secrets,
                        const fs::path& emit_dir, const std::string& prefix) {
  if (extracted.size() != secrets.size())
    throw WatermarkError("verify: " + std::to_string(extracted.size()) + " extractions for " +
                         std::to_string(secrets.size()) + " secrets");
  if (extracted.empty()) throw WatermarkError("verify: nothing to compare");
  ExtractionReport r;
  for (std::size_t i = 0; i < extracted.size(); ++i) {
    if (extracted[i].shape() != secrets[i].shape())
      throw WatermarkError("verify: extraction " + std::to_string(i) + " has shape " +
                           to_string(extracted[i].shape()) + ", secret " + to_string(secrets[i].shape()));
    r.images.push_back(clamp01(extracted[i]));
    r.ssim.push_back(ssim(r.images.back(), secrets[i]));
    r.mse.push_back(mse(r.images.back(), secrets[i]));
  }
  r.mean_ssim = mean(r.ssim);
  if (!emit_dir.empty()) {
    fs::create_directories(emit_dir);
    const std::string ext = secrets.front().dim(0) == 3 ? ".ppm" : ".pgm";
    for (std::size_t i = 0; i < r.images.size(); ++i) {
      fs::path p = emit_dir / (prefix + "_" + std::to_string(i) + ext);
      write_image(image_strip({secrets[i], r.images[i]}), p);
      r.files.push_back(p);
    }
    fs::path strip = emit_dir / (prefix + "_strip" + ext);
    write_image(image_grid({secrets, r.images}), strip);
    r.files.push_back(strip);
  }
  return r;
}

}  // namespace inkwell
