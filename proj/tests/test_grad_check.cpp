#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "inkwell/grad_check.hpp"
#include "inkwell/ops.hpp"
#include "inkwell/ssim.hpp"

using namespace inkwell;

namespace {

constexpr int kSeeds = 100;
constexpr double kTol = 1e-3;

Tensor random(Shape s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values whose pairwise gaps exceed the finite-difference step, so max and
// relu kinks are never crossed.
Tensor spaced(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  for (std::size_t i = 0; i < idx.size(); ++i) t[idx[i]] = -1.0f + 0.05f * static_cast<float>(i);
  return t;
}

void check_all(const char* name, const OpUnderTest& op, const std::function<std::vector<Tensor>(Rng&)>& make,
               double tol = kTol, float h = 1e-3f) {
  double worst = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + static_cast<std::uint64_t>(seed));
    const GradCheckReport r = grad_check(op, make(rng), tol, h, static_cast<std::uint64_t>(seed));
    worst = std::max(worst, r.max_rel_error);
    ASSERT_TRUE(r.pass()) << name << " seed " << seed << ": " << r.summary();
  }
  ::testing::Test::RecordProperty(name, std::to_string(worst));
}

}  // namespace

TEST(GradCheck, ReluAwayFromZero) {
  check_all(
      "relu", [](Tape& t, std::span<const Var> v) { return ops::relu(t, v[0]); },
      [](Rng& rng) {
        Tensor x = random({4, 5}, rng);
        for (auto& v : x.values()) v = v < 0 ? v - 0.1f : v + 0.1f;
        return std::vector<Tensor>{x};
      },
      1e-4);
}

TEST(GradCheck, Matmul4x4) {
  check_all(
      "matmul", [](Tape& t, std::span<const Var> v) { return ops::matmul(t, v[0], v[1]); },
      [](Rng& rng) { return std::vector<Tensor>{random({4, 4}, rng), random({4, 4}, rng)}; }, 1e-4);
}

TEST(GradCheck, Elementwise) {
  auto two = [](Rng& rng) { return std::vector<Tensor>{random({3, 4}, rng), random({3, 4}, rng)}; };
  check_all("add", [](Tape& t, std::span<const Var> v) { return ops::add(t, v[0], v[1]); }, two);
  check_all("sub", [](Tape& t, std::span<const Var> v) { return ops::sub(t, v[0], v[1]); }, two);
  check_all("mul", [](Tape& t, std::span<const Var> v) { return ops::mul(t, v[0], v[1]); }, two);
  auto one = [](Rng& rng) { return std::vector<Tensor>{random({2, 6}, rng)}; };
  check_all("scale", [](Tape& t, std::span<const Var> v) { return ops::scale(t, v[0], -1.7f); }, one);
  check_all("add_scalar", [](Tape& t, std::span<const Var> v) { return ops::add_scalar(t, v[0], 0.3f); }, one);
  check_all("sum", [](Tape& t, std::span<const Var> v) { return ops::sum(t, v[0]); }, one);
  check_all("mean", [](Tape& t, std::span<const Var> v) { return ops::mean(t, v[0]); }, one);
  check_all(
      "reshape", [](Tape& t, std::span<const Var> v) { return ops::reshape(t, v[0], {3, 4}); }, one);
}

TEST(GradCheck, LinearAndTransposedLinear) {
  auto make = [](Rng& rng) {
    return std::vector<Tensor>{random({3, 5}, rng), random({4, 5}, rng), random({4}, rng)};
  };
  check_all("linear", [](Tape& t, std::span<const Var> v) { return ops::linear(t, v[0], v[1], v[2]); }, make);
  auto make_t = [](Rng& rng) {
    return std::vector<Tensor>{random({3, 4}, rng), random({4, 5}, rng), random({4}, rng)};
  };
  check_all(
      "linear_transposed",
      [](Tape& t, std::span<const Var> v) { return ops::linear_transposed(t, v[0], v[1], v[2]); }, make_t);
}

TEST(GradCheck, Dropout) {
  check_all(
      "dropout",
      [](Tape& t, std::span<const Var> v) {
        Rng rng(99);  // identical mask on every evaluation
        return ops::dropout(t, v[0], 0.3f, rng, true);
      },
      [](Rng& rng) { return std::vector<Tensor>{random({4, 6}, rng)}; });
}

TEST(GradCheck, Conv2d) {
  const ops::ConvGeometry geoms[] = {{3, 1, 1}, {3, 2, 1}, {3, 1, 0}};
  for (const auto& g : geoms) {
    check_all(
        "conv2d", [g](Tape& t, std::span<const Var> v) { return ops::conv2d(t, v[0], v[1], v[2], g); },
        [](Rng& rng) {
          return std::vector<Tensor>{random({2, 2, 5, 5}, rng), random({3, 2, 3, 3}, rng), random({3}, rng)};
        });
  }
}

TEST(GradCheck, Conv2dKernel2) {
  const ops::ConvGeometry g{2, 1, 0};
  check_all(
      "conv2d_k2", [g](Tape& t, std::span<const Var> v) { return ops::conv2d(t, v[0], v[1], v[2], g); },
      [](Rng& rng) {
        return std::vector<Tensor>{random({1, 2, 4, 4}, rng), random({2, 2, 2, 2}, rng), random({2}, rng)};
      });
}

TEST(GradCheck, ConvTranspose2d) {
  const ops::ConvGeometry g{3, 2, 1};
  check_all(
      "conv_transpose2d",
      [g](Tape& t, std::span<const Var> v) { return ops::conv_transpose2d(t, v[0], v[1], g, 6, 6); },
      [](Rng& rng) { return std::vector<Tensor>{random({2, 3, 3, 3}, rng), random({3, 2, 3, 3}, rng)}; });
}

TEST(GradCheck, MaxPoolAndUpsample) {
  check_all(
      "max_pool2d", [](Tape& t, std::span<const Var> v) { return ops::max_pool2d(t, v[0], 2, 2); },
      [](Rng& rng) { return std::vector<Tensor>{spaced({1, 2, 4, 4}, rng)}; });
  check_all(
      "upsample_nearest",
      [](Tape& t, std::span<const Var> v) { return ops::upsample_nearest(t, v[0], 2, 5, 5); },
      [](Rng& rng) { return std::vector<Tensor>{random({1, 2, 3, 3}, rng)}; });
}

TEST(GradCheck, BatchNormTrainAndEval) {
  for (bool train : {true, false}) {
    check_all(
        train ? "batch_norm_train" : "batch_norm_eval",
        [train](Tape& t, std::span<const Var> v) {
          Tensor rm = Tensor::from({0.1f, -0.2f}, {2}), rv = Tensor::from({0.8f, 1.3f}, {2});
          return ops::batch_norm(t, v[0], v[1], v[2], rm, rv, 1e-5f, 0.1f, train);
        },
        [](Rng& rng) {
          return std::vector<Tensor>{random({3, 2, 2, 2}, rng), random({2}, rng, 0.5f, 1.5f), random({2}, rng)};
        });
  }
  check_all(
      "batch_norm_features",
      [](Tape& t, std::span<const Var> v) {
        Tensor rm = Tensor::zeros({3}), rv = Tensor::ones({3});
        return ops::batch_norm(t, v[0], v[1], v[2], rm, rv, 1e-5f, 0.1f, true);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random({4, 3}, rng), random({3}, rng, 0.5f, 1.5f), random({3}, rng)};
      });
}

TEST(GradCheck, BatchNormTransposed) {
  check_all(
      "batch_norm_transposed",
      [](Tape& t, std::span<const Var> v) { return ops::batch_norm_transposed(t, v[0], v[1], v[2], 0.5f); },
      [](Rng& rng) {
        return std::vector<Tensor>{random({2, 2, 2, 2}, rng), random({2}, rng, 0.5f, 1.5f), random({2}, rng)};
      });
}

TEST(GradCheck, Losses) {
  check_all(
      "cross_entropy",
      [](Tape& t, std::span<const Var> v) {
        static const int labels[] = {0, 3, 1};
        return ops::cross_entropy(t, v[0], labels);
      },
      [](Rng& rng) { return std::vector<Tensor>{random({3, 4}, rng, -2.0f, 2.0f)}; });
  check_all(
      "mse", [](Tape& t, std::span<const Var> v) { return ops::mse(t, v[0], v[1]); },
      [](Rng& rng) { return std::vector<Tensor>{random({2, 5}, rng), random({2, 5}, rng)}; });
}

TEST(GradCheck, SsimOn16x16Images) {
  check_all(
      "ssim", [](Tape& t, std::span<const Var> v) { return ops::scale(t, ops::ssim(t, v[0], v[1]), 100.0f); },
      [](Rng& rng) {
        return std::vector<Tensor>{random({1, 1, 16, 16}, rng, 0.0f, 1.0f), random({1, 1, 16, 16}, rng, 0.0f, 1.0f)};
      },
      kTol, 5e-3f);
}

TEST(GradCheck, ReportsFailureForWrongGradient) {
  // An op whose backward ignores its input: the checker must notice.
  OpUnderTest broken = [](Tape& t, std::span<const Var> v) {
    Tensor out = t.value(v[0]);
    for (auto& x : out.values()) x *= 2.0f;
    return t.record("broken", std::move(out), {v[0]}, [](const BackwardContext&) {});
  };
  Rng rng(1);
  const GradCheckReport r = grad_check(broken, {random({4}, rng)}, kTol);
  EXPECT_FALSE(r.pass());
}
