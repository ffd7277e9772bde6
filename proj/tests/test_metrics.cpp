#include <gtest/gtest.h>

#include <cmath>

#include "inkwell/metrics.hpp"
#include "inkwell/model_spec.hpp"

using namespace inkwell;

namespace {

Tensor noise(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(0.0f, 1.0f);
  return t;
}

Tensor checkerboard(std::size_t side) {
  Tensor t({1, side, side});
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) t[y * side + x] = ((x + y) % 2) ? 1.0f : 0.0f;
  return t;
}

Tensor structured(std::size_t side) {
  Tensor t({1, side, side});
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x)
      t[y * side + x] = 0.5f + 0.4f * std::sin(0.4f * static_cast<float>(x)) * std::cos(0.3f * static_cast<float>(y));
  return t;
}

// Direct per-window SSIM for one (H, W) plane: explicit 2-D Gaussian weights,
// every valid window position, double throughout.
double reference_ssim(const Tensor& a, const Tensor& b, std::size_t h, std::size_t w) {
  const std::size_t k = std::min<std::size_t>({11, h, w});
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> win(k * k);
  double total = 0;
  const double c = (static_cast<double>(k) - 1) / 2;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
      win[i * k + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      total += win[i * k + j];
    }
  for (auto& v : win) v /= total;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + k <= h; ++y)
    for (std::size_t x = 0; x + k <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double g = win[i * k + j], va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += g * va;
          mb += g * vb;
          saa += g * va * va;
          sbb += g * vb * vb;
          sab += g * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return sum / static_cast<double>(count);
}

}  // namespace

TEST(Ssim, IdentityIsOne) {
  const Tensor x = noise({1, 28, 28}, 1);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-9);
}

TEST(Ssim, InvertedCheckerboardIsMinusOne) {
  const Tensor x = checkerboard(28);
  Tensor inv = x;
  for (auto& v : inv.values()) v = 1.0f - v;
  EXPECT_LT(ssim(x, inv), -0.99);
}

TEST(Ssim, MatchesDirectWindowComputation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t side = 8 + seed;  // covers clamped and full windows
    const Tensor a = noise({1, side, side}, seed), b = noise({1, side, side}, seed + 100);
    EXPECT_NEAR(ssim(a, b), reference_ssim(a, b, side, side), 1e-6) << "side " << side;
    Tensor close = a;
    for (std::size_t i = 0; i < close.size(); ++i) close[i] = 0.8f * a[i] + 0.2f * b[i];
    EXPECT_NEAR(ssim(a, close), reference_ssim(a, close, side, side), 1e-6);
  }
}

TEST(Ssim, StructuredVersusNoiseNearZero) {
  const Tensor s = structured(28);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor n = noise({1, 28, 28}, 500 + seed);
    const double v = ssim(s, n);
    EXPECT_LT(std::fabs(v), 0.1) << "seed " << seed;
    EXPECT_NEAR(v, reference_ssim(s, n, 28, 28), 1e-6);
  }
}

TEST(Ssim, SymmetricAndBounded) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Tensor a = noise({2, 3, 12, 12}, seed), b = noise({2, 3, 12, 12}, seed + 7777);
    if (seed % 3 == 0)
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = 1.0f - a[i];
    const double ab = ssim(a, b), ba = ssim(b, a);
    EXPECT_NEAR(ab, ba, 1e-6);
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Ssim, ApproachesOneAsNoiseShrinks) {
  const Tensor a = structured(28), n = noise({1, 28, 28}, 3);
  double prev = -2.0;
  for (float scale : {0.5f, 0.2f, 0.05f, 0.01f, 0.001f}) {
    Tensor b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += scale * (n[i] - 0.5f);
    const double v = ssim(a, b);
    EXPECT_GT(v, prev) << "scale " << scale;
    prev = v;
  }
  EXPECT_GT(prev, 0.999);
}

TEST(Ssim, MultiChannelIsChannelMean) {
  const Tensor a = noise({3, 16, 16}, 4), b = noise({3, 16, 16}, 5);
  double sum = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor pa({16, 16}), pb({16, 16});
    std::copy_n(a.data() + c * 256, 256, pa.data());
    std::copy_n(b.data() + c * 256, 256, pb.data());
    sum += ssim(pa, pb);
  }
  EXPECT_NEAR(ssim(a, b), sum / 3, 1e-9);
  const auto per = ssim_per_image(a.reshaped({1, 3, 16, 16}), b.reshaped({1, 3, 16, 16}));
  ASSERT_EQ(per.size(), 1u);
  EXPECT_NEAR(per[0], sum / 3, 1e-9);
}

TEST(Ssim, WindowAndConstants) {
  const auto taps = gaussian_taps(11, 1.5);
  double total = 0;
  for (double t : taps) total += t;
  EXPECT_NEAR(total, 1.0, 1e-12);
  SsimParams p;
  EXPECT_GT(p.c1(), 0.0);
  EXPECT_GT(p.c2(), 0.0);
  EXPECT_EQ(p.effective_window(28, 28), 11u);
  EXPECT_EQ(p.effective_window(6, 9), 6u);
}

TEST(Ssim, ShapeMismatchThrows) {
  EXPECT_ANY_THROW(ssim(noise({1, 8, 8}, 1), noise({1, 8, 9}, 2)));
}

TEST(Ssim, TapeValueMatchesPlainValue) {
  const Tensor a = noise({2, 1, 14, 14}, 8), b = noise({2, 1, 14, 14}, 9);
  Tape t;
  const double v = t.value(ops::ssim(t, t.constant(a), t.constant(b)))[0];
  EXPECT_NEAR(v, ssim(a, b), 1e-5);
}

TEST(Mse, Examples) {
  const Tensor x = noise({5}, 1);
  EXPECT_EQ(mse(x, x), 0.0);
  EXPECT_DOUBLE_EQ(mse(Tensor::from({0, 0}, {2}), Tensor::from({2, 2}, {2})), 4.0);
  const Tensor y = noise({5}, 2);
  EXPECT_EQ(mse(x, y), mse(y, x));
  EXPECT_ANY_THROW(mse(x, noise({4}, 3)));
}

TEST(Ber, Examples) {
  std::vector<std::uint8_t> a(36), b(36);
  for (std::size_t i = 0; i < 36; ++i) a[i] = b[i] = i % 3 == 0;
  EXPECT_EQ(ber(a, b), 0.0);
  b[7] ^= 1;
  EXPECT_NEAR(ber(a, b), 1.0 / 36.0, 1e-12);
  for (auto& v : b) v = 0;
  for (std::size_t i = 0; i < 36; ++i) b[i] = !a[i];
  EXPECT_EQ(ber(a, b), 1.0);
  b.pop_back();
  EXPECT_THROW(ber(a, b), MetricError);
}

TEST(Accuracy, ConstantModelAndMemorizedLookup) {
  // A single linear layer with zero weights and a bias favoring class 3 is a
  // constant predictor.
  Dataset d;
  d.classes = 10;
  d.images = Tensor({100, 1, 2, 2});
  for (std::size_t i = 0; i < 100; ++i) {
    d.labels.push_back(static_cast<int>(i % 10));
    d.images[i * 4 + (i % 4)] = static_cast<float>(i % 10 + 1);
  }
  ModelSpec spec;
  spec.input_shape = {1, 2, 2};
  spec.layers = {{"flat", layer::Flatten{}}, {"fc", layer::Linear{4, 10}}};
  ParameterStore store;
  init_parameters(spec, store);
  store.at("fc.weight").value = Tensor::zeros({10, 4});
  store.at("fc.bias").value = Tensor::zeros({10});
  store.at("fc.bias").value[3] = 1.0f;
  const Graph g = build_forward(spec, store);
  EXPECT_NEAR(accuracy(g, store, d), 0.10, 1e-12);

  // Ten distinct one-hot inputs mapped to their own labels.
  Dataset m;
  m.classes = 10;
  m.images = Tensor({10, 1, 2, 2});
  ModelSpec spec2;
  spec2.input_shape = {1, 2, 2};
  spec2.layers = {{"flat", layer::Flatten{}}, {"fc", layer::Linear{4, 10}}};
  ParameterStore s2;
  init_parameters(spec2, s2);
  Tensor w = Tensor::zeros({10, 4}), b = Tensor::zeros({10});
  for (std::size_t i = 0; i < 10; ++i) {
    // Input i encodes i in its first two pixels; class scores are -(x - c)^2
    // expanded into a linear form over [x0, x1].
    m.images[i * 4] = static_cast<float>(i);
    m.labels.push_back(static_cast<int>(i));
    w[i * 4] = 2.0f * static_cast<float>(i);
    b[i] = -static_cast<float>(i * i);
  }
  s2.at("fc.weight").value = w;
  s2.at("fc.bias").value = b;
  const Graph g2 = build_forward(spec2, s2);
  EXPECT_EQ(accuracy(g2, s2, m), 1.0);

  Dataset empty;
  EXPECT_THROW(accuracy(g2, s2, empty), MetricError);
}
