#include "inkwell/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace inkwell::ops {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

CMapR cmap(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMapR(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapR map(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapR(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void expect_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(t.shape()));
}

void accumulate(Tensor* dst, const Tensor& src, float factor = 1.0f) {
  if (!dst) return;
  float* d = dst->data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst->size(); ++i) d[i] += factor * s[i];
}

Tensor binary(const Tensor& a, const Tensor& b, const char* op, float (*f)(float, float)) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

// Column matrix for one sample: rows (c, ki, kj), columns (oh, ow).
void im2col(const float* x, std::size_t C, std::size_t H, std::size_t W, const ConvGeometry& g, std::size_t Ho,
            std::size_t Wo, float* col) {
  const std::size_t k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        float* row = col + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
          float* dst = row + oh * Wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + Wo, 0.0f);
            continue;
          }
          const float* src = x + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) ? 0.0f : src[iw];
          }
        }
      }
}

// Adjoint of im2col: scatter-add columns back into the image.
void col2im(const float* col, std::size_t C, std::size_t H, std::size_t W, const ConvGeometry& g, std::size_t Ho,
            std::size_t Wo, float* x) {
  const std::size_t k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const float* row = col + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          float* dst = x + (c * H + static_cast<std::size_t>(ih)) * W;
          const float* src = row + oh * Wo;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(W)) dst[iw] += src[ow];
          }
        }
      }
}

// Per-feature (rank 2) or per-channel (rank 4) layout helper.
struct ChannelLayout {
  std::size_t n, c, inner;  // value index = (i * c + ch) * inner + j
};

ChannelLayout channel_layout(const Tensor& x, const char* op) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  throw ShapeError(std::string(op) + ": expected rank 2 or 4 input, got " + to_string(x.shape()));
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  Tensor out = binary(t.value(a), t.value(b), "add", [](float x, float y) { return x + y; });
  return t.record("add", std::move(out), {a, b}, [](const BackwardContext& c) {
    accumulate(c.in_grad[0], c.grad_out);
    accumulate(c.in_grad[1], c.grad_out);
  });
}

Var sub(Tape& t, Var a, Var b) {
  Tensor out = binary(t.value(a), t.value(b), "sub", [](float x, float y) { return x - y; });
  return t.record("sub", std::move(out), {a, b}, [](const BackwardContext& c) {
    accumulate(c.in_grad[0], c.grad_out);
    accumulate(c.in_grad[1], c.grad_out, -1.0f);
  });
}

Var mul(Tape& t, Var a, Var b) {
  Tensor out = binary(t.value(a), t.value(b), "mul", [](float x, float y) { return x * y; });
  return t.record("mul", std::move(out), {a, b}, [](const BackwardContext& c) {
    const Tensor& g = c.grad_out;
    if (Tensor* ga = c.in_grad[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*c.in[1])[i];
    if (Tensor* gb = c.in_grad[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * (*c.in[0])[i];
  });
}

Var scale(Tape& t, Var a, float s) {
  Tensor out = t.value(a);
  out.requires_grad = false;
  for (auto& v : out.values()) v *= s;
  return t.record("scale", std::move(out), {a}, [s](const BackwardContext& c) { accumulate(c.in_grad[0], c.grad_out, s); });
}

Var add_scalar(Tape& t, Var a, float s) {
  Tensor out = t.value(a);
  out.requires_grad = false;
  for (auto& v : out.values()) v += s;
  return t.record("add_scalar", std::move(out), {a}, [](const BackwardContext& c) { accumulate(c.in_grad[0], c.grad_out); });
}

Var sum(Tape& t, Var a) {
  const Tensor& x = t.value(a);
  double s = 0.0;
  for (float v : x.values()) s += v;
  return t.record("sum", Tensor::scalar(static_cast<float>(s)), {a}, [](const BackwardContext& c) {
    if (Tensor* g = c.in_grad[0])
      for (auto& v : g->values()) v += c.grad_out[0];
  });
}

Var mean(Tape& t, Var a) {
  const Tensor& x = t.value(a);
  double s = 0.0;
  for (float v : x.values()) s += v;
  const float n = static_cast<float>(x.size());
  return t.record("mean", Tensor::scalar(static_cast<float>(s / n)), {a}, [n](const BackwardContext& c) {
    if (Tensor* g = c.in_grad[0])
      for (auto& v : g->values()) v += c.grad_out[0] / n;
  });
}

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  expect_rank(A, 2, "matmul");
  expect_rank(B, 2, "matmul");
  if (A.dim(1) != B.dim(0))
    throw ShapeError("matmul: inner dimensions differ, " + to_string(A.shape()) + " x " + to_string(B.shape()));
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
  Tensor out({n, m});
  map(out, n, m).noalias() = cmap(A, n, k) * cmap(B, k, m);
  return t.record("matmul", std::move(out), {a, b}, [n, k, m](const BackwardContext& c) {
    auto G = cmap(c.grad_out, n, m);
    if (Tensor* ga = c.in_grad[0]) map(*ga, n, k).noalias() += G * cmap(*c.in[1], k, m).transpose();
    if (Tensor* gb = c.in_grad[1]) map(*gb, k, m).noalias() += cmap(*c.in[0], n, k).transpose() * G;
  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& X = t.value(x);
  const Tensor& W = t.value(w);
  expect_rank(X, 2, "linear");
  expect_rank(W, 2, "linear");
  const std::size_t n = X.dim(0), in = X.dim(1), out_f = W.dim(0);
  if (W.dim(1) != in)
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " + to_string(W.shape()));
  Tensor out({n, out_f});
  auto Y = map(out, n, out_f);
  Y.noalias() = cmap(X, n, in) * cmap(W, out_f, in).transpose();
  if (b.valid()) {
    const Tensor& B = t.value(b);
    if (B.size() != out_f) throw ShapeError("linear: bias " + to_string(B.shape()) + " does not match width " + std::to_string(out_f));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_f; ++j) Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += B[j];
    return t.record("linear", std::move(out), {x, w, b}, [n, in, out_f](const BackwardContext& c) {
      auto G = cmap(c.grad_out, n, out_f);
      if (Tensor* gx = c.in_grad[0]) map(*gx, n, in).noalias() += G * cmap(*c.in[1], out_f, in);
      if (Tensor* gw = c.in_grad[1]) map(*gw, out_f, in).noalias() += G.transpose() * cmap(*c.in[0], n, in);
      if (Tensor* gb = c.in_grad[2])
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < out_f; ++j) (*gb)[j] += c.grad_out[i * out_f + j];
    });
  }
  return t.record("linear", std::move(out), {x, w}, [n, in, out_f](const BackwardContext& c) {
    auto G = cmap(c.grad_out, n, out_f);
    if (Tensor* gx = c.in_grad[0]) map(*gx, n, in).noalias() += G * cmap(*c.in[1], out_f, in);
    if (Tensor* gw = c.in_grad[1]) map(*gw, out_f, in).noalias() += G.transpose() * cmap(*c.in[0], n, in);
  });
}

Var linear_transposed(Tape& t, Var y, Var w, Var b) {
  const Tensor& Yt = t.value(y);
  const Tensor& W = t.value(w);
  expect_rank(Yt, 2, "linear_transposed");
  expect_rank(W, 2, "linear_transposed");
  const std::size_t n = Yt.dim(0), out_f = W.dim(0), in = W.dim(1);
  if (Yt.dim(1) != out_f)
    throw ShapeError("linear_transposed: input width " + std::to_string(Yt.dim(1)) + " does not match weight " +
                     to_string(W.shape()));
  // z = y - b is kept for the weight gradient.
  auto z = std::make_shared<Tensor>(Yt);
  z->requires_grad = false;
  if (b.valid()) {
    const Tensor& B = t.value(b);
    if (B.size() != out_f) throw ShapeError("linear_transposed: bias " + to_string(B.shape()) + " does not match width " + std::to_string(out_f));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_f; ++j) (*z)[i * out_f + j] -= B[j];
  }
  Tensor out({n, in});
  map(out, n, in).noalias() = cmap(*z, n, out_f) * cmap(W, out_f, in);
  BackwardFn fn = [n, in, out_f, z, has_bias = b.valid()](const BackwardContext& c) {
    auto G = cmap(c.grad_out, n, in);
    const bool need_z = c.in_grad[0] || (has_bias && c.in_grad[2]);
    MatR dz;
    if (need_z) dz.noalias() = G * cmap(*c.in[1], out_f, in).transpose();
    if (Tensor* gy = c.in_grad[0]) map(*gy, n, out_f) += dz;
    if (Tensor* gw = c.in_grad[1]) map(*gw, out_f, in).noalias() += cmap(*z, n, out_f).transpose() * G;
    if (has_bias)
      if (Tensor* gb = c.in_grad[2])
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < out_f; ++j) (*gb)[j] -= dz(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };
  if (b.valid()) return t.record("linear_transposed", std::move(out), {y, w, b}, std::move(fn));
  return t.record("linear_transposed", std::move(out), {y, w}, std::move(fn));
}

Var relu(Tape& t, Var x) {
  Tensor out = t.value(x);
  out.requires_grad = false;
  for (auto& v : out.values()) v = v < 0.0f ? 0.0f : v;  // NaN passes through
  return t.record("relu", std::move(out), {x}, [](const BackwardContext& c) {
    if (Tensor* g = c.in_grad[0])
      for (std::size_t i = 0; i < g->size(); ++i)
        if (c.out[i] > 0.0f) (*g)[i] += c.grad_out[i];
  });
}

Var dropout(Tape& t, Var x, float rate, Rng& rng, bool train) {
  if (rate < 0.0f || rate >= 1.0f) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0f) return x;
  const Tensor& X = t.value(x);
  auto mask = std::make_shared<std::vector<float>>(X.size());
  const float keep_scale = 1.0f / (1.0f - rate);
  for (auto& m : *mask) m = rng.uniform() < rate ? 0.0f : keep_scale;
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * (*mask)[i];
  return t.record("dropout", std::move(out), {x}, [mask](const BackwardContext& c) {
    if (Tensor* g = c.in_grad[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i] * (*mask)[i];
  });
}

std::size_t ConvGeometry::out_size(std::size_t in) const {
  if (kernel == 0 || stride == 0) throw ShapeError("convolution kernel and stride must be positive");
  if (in + 2 * pad < kernel)
    throw ShapeError("convolution kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t transposed_output_padding(const ConvGeometry& g, std::size_t in) {
  const std::size_t out = g.out_size(in);
  const std::ptrdiff_t base = static_cast<std::ptrdiff_t>((out - 1) * g.stride + g.kernel) - 2 * static_cast<std::ptrdiff_t>(g.pad);
  const std::ptrdiff_t op = static_cast<std::ptrdiff_t>(in) - base;
  if (op < 0 || op >= static_cast<std::ptrdiff_t>(g.stride))
    throw ShapeError("no valid output padding restores size " + std::to_string(in) + " (kernel " +
                     std::to_string(g.kernel) + ", stride " + std::to_string(g.stride) + ", pad " +
                     std::to_string(g.pad) + ")");
  return static_cast<std::size_t>(op);
}

Var conv2d(Tape& t, Var x, Var w, Var b, const ConvGeometry& g) {
  const Tensor& X = t.value(x);
  const Tensor& W = t.value(w);
  expect_rank(X, 4, "conv2d");
  expect_rank(W, 4, "conv2d");
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const std::size_t O = W.dim(0), k = g.kernel;
  if (W.dim(1) != C || W.dim(2) != k || W.dim(3) != k)
    throw ShapeError("conv2d: kernel " + to_string(W.shape()) + " incompatible with input " + to_string(X.shape()));
  const std::size_t Ho = g.out_size(H), Wo = g.out_size(Wd), P = Ho * Wo, K = C * k * k;
  Tensor out({N, O, Ho, Wo});
  std::vector<float> col(K * P);
  const float* bias = nullptr;
  if (b.valid()) {
    if (t.value(b).size() != O) throw ShapeError("conv2d: bias size does not match output channels");
    bias = t.value(b).data();
  }
  auto Wm = cmap(W, O, K);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(X.data() + n * C * H * Wd, C, H, Wd, g, Ho, Wo, col.data());
    MapR Y(out.data() + n * O * P, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
    Y.noalias() = Wm * CMapR(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    if (bias)
      for (std::size_t o = 0; o < O; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  }
  BackwardFn fn = [=](const BackwardContext& c) {
    const Tensor& Xv = *c.in[0];
    const Tensor& Wv = *c.in[1];
    Tensor* gx = c.in_grad[0];
    Tensor* gw = c.in_grad[1];
    Tensor* gb = c.in_grad.size() > 2 ? c.in_grad[2] : nullptr;
    std::vector<float> colb(K * P);
    std::vector<float> dcol(gx ? K * P : 0);
    auto Wmb = cmap(Wv, O, K);
    for (std::size_t n = 0; n < N; ++n) {
      CMapR G(c.grad_out.data() + n * O * P, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
      if (gw) {
        im2col(Xv.data() + n * C * H * Wd, C, H, Wd, g, Ho, Wo, colb.data());
        map(*gw, O, K).noalias() += G * CMapR(colb.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P)).transpose();
      }
      if (gb)
        for (std::size_t o = 0; o < O; ++o) (*gb)[o] += G.row(static_cast<Eigen::Index>(o)).sum();
      if (gx) {
        MapR D(dcol.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        D.noalias() = Wmb.transpose() * G;
        col2im(dcol.data(), C, H, Wd, g, Ho, Wo, gx->data() + n * C * H * Wd);
      }
    }
  };
  if (b.valid()) return t.record("conv2d", std::move(out), {x, w, b}, std::move(fn));
  return t.record("conv2d", std::move(out), {x, w}, std::move(fn));
}

Var conv_transpose2d(Tape& t, Var y, Var w, const ConvGeometry& g, std::size_t out_h, std::size_t out_w) {
  const Tensor& Y = t.value(y);
  const Tensor& W = t.value(w);
  expect_rank(Y, 4, "conv_transpose2d");
  expect_rank(W, 4, "conv_transpose2d");
  const std::size_t N = Y.dim(0), O = Y.dim(1), Ho = Y.dim(2), Wo = Y.dim(3);
  const std::size_t C = W.dim(1), k = g.kernel;
  if (W.dim(0) != O || W.dim(2) != k || W.dim(3) != k)
    throw ShapeError("conv_transpose2d: kernel " + to_string(W.shape()) + " incompatible with input " + to_string(Y.shape()));
  transposed_output_padding(g, out_h);
  transposed_output_padding(g, out_w);
  if (g.out_size(out_h) != Ho || g.out_size(out_w) != Wo)
    throw ShapeError("conv_transpose2d: input " + to_string(Y.shape()) + " cannot produce " + std::to_string(out_h) +
                     "x" + std::to_string(out_w));
  const std::size_t H = out_h, Wd = out_w, P = Ho * Wo, K = C * k * k;
  Tensor out({N, C, H, Wd});
  std::vector<float> col(K * P);
  auto Wm = cmap(W, O, K);
  for (std::size_t n = 0; n < N; ++n) {
    MapR D(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    D.noalias() = Wm.transpose() * CMapR(Y.data() + n * O * P, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
    col2im(col.data(), C, H, Wd, g, Ho, Wo, out.data() + n * C * H * Wd);
  }
  return t.record("conv_transpose2d", std::move(out), {y, w}, [=](const BackwardContext& c) {
    const Tensor& Yv = *c.in[0];
    const Tensor& Wv = *c.in[1];
    Tensor* gy = c.in_grad[0];
    Tensor* gw = c.in_grad[1];
    std::vector<float> dcol(K * P);
    auto Wmb = cmap(Wv, O, K);
    for (std::size_t n = 0; n < N; ++n) {
      im2col(c.grad_out.data() + n * C * H * Wd, C, H, Wd, g, Ho, Wo, dcol.data());
      CMapR D(dcol.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
      if (gy) {
        MapR GY(gy->data() + n * O * P, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
        GY.noalias() += Wmb * D;
      }
      if (gw) {
        CMapR Yn(Yv.data() + n * O * P, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
        map(*gw, O, K).noalias() += Yn * D.transpose();
      }
    }
  });
}

Var max_pool2d(Tape& t, Var x, std::size_t kernel, std::size_t stride) {
  const Tensor& X = t.value(x);
  expect_rank(X, 4, "max_pool2d");
  if (kernel == 0 || stride == 0) throw ShapeError("max_pool2d: kernel and stride must be positive");
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H < kernel || W < kernel) throw ShapeError("max_pool2d: kernel larger than input " + to_string(X.shape()));
  const std::size_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  Tensor out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float* plane = X.data() + nc * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_i = 0;
        for (std::size_t ki = 0; ki < kernel; ++ki)
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t i = (oh * stride + ki) * W + ow * stride + kj;
            if (plane[i] > best) {
              best = plane[i];
              best_i = i;
            }
          }
        out[o] = best;
        (*argmax)[o] = static_cast<std::uint32_t>(nc * H * W + best_i);
      }
  }
  return t.record("max_pool2d", std::move(out), {x}, [argmax](const BackwardContext& c) {
    if (Tensor* g = c.in_grad[0])
      for (std::size_t i = 0; i < argmax->size(); ++i) (*g)[(*argmax)[i]] += c.grad_out[i];
  });
}

Var upsample_nearest(Tape& t, Var x, std::size_t factor, std::size_t out_h, std::size_t out_w) {
  const Tensor& X = t.value(x);
  expect_rank(X, 4, "upsample_nearest");
  if (factor < 2) throw ShapeError("upsample_nearest: factor must be at least 2");
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (out_h == 0 || out_w == 0) throw ShapeError("upsample_nearest: empty output");
  Tensor out({N, C, out_h, out_w});
  auto src_index = [factor](std::size_t o, std::size_t in) { return std::min(o / factor, in - 1); };
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oh = 0; oh < out_h; ++oh)
      for (std::size_t ow = 0; ow < out_w; ++ow)
        out[(nc * out_h + oh) * out_w + ow] = X[(nc * H + src_index(oh, H)) * W + src_index(ow, W)];
  return t.record("upsample_nearest", std::move(out), {x}, [=](const BackwardContext& c) {
    if (Tensor* g = c.in_grad[0])
      for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t oh = 0; oh < out_h; ++oh)
          for (std::size_t ow = 0; ow < out_w; ++ow)
            (*g)[(nc * H + src_index(oh, H)) * W + src_index(ow, W)] += c.grad_out[(nc * out_h + oh) * out_w + ow];
  });
}

Var reshape(Tape& t, Var x, Shape shape) {
  Tensor out = t.value(x).reshaped(std::move(shape));
  out.requires_grad = false;
  return t.record("reshape", std::move(out), {x}, [](const BackwardContext& c) { accumulate(c.in_grad[0], c.grad_out); });
}

Var batch_norm(Tape& t, Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, float eps,
               float momentum, bool train) {
  const Tensor& X = t.value(x);
  const ChannelLayout L = channel_layout(X, "batch_norm");
  const Tensor& G = t.value(gamma);
  const Tensor& B = t.value(beta);
  if (G.size() != L.c || B.size() != L.c || running_mean.size() != L.c || running_var.size() != L.c)
    throw ShapeError("batch_norm: parameter size does not match " + std::to_string(L.c) + " features");
  const std::size_t M = L.n * L.inner;
  auto xhat = std::make_shared<Tensor>(X.shape());
  auto invstd = std::make_shared<std::vector<float>>(L.c);
  Tensor out(X.shape());
  for (std::size_t ch = 0; ch < L.c; ++ch) {
    double mu, var;
    if (train) {
      if (M < 2) throw ShapeError("batch_norm: training needs more than one value per feature");
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < L.n; ++i)
        for (std::size_t j = 0; j < L.inner; ++j) s += X[(i * L.c + ch) * L.inner + j];
      mu = s / static_cast<double>(M);
      for (std::size_t i = 0; i < L.n; ++i)
        for (std::size_t j = 0; j < L.inner; ++j) {
          const double d = X[(i * L.c + ch) * L.inner + j] - mu;
          s2 += d * d;
        }
      var = s2 / static_cast<double>(M);
      const double unbiased = s2 / static_cast<double>(M - 1);
      running_mean[ch] = static_cast<float>((1.0 - momentum) * running_mean[ch] + momentum * mu);
      running_var[ch] = static_cast<float>((1.0 - momentum) * running_var[ch] + momentum * unbiased);
    } else {
      mu = running_mean[ch];
      var = running_var[ch];
    }
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*invstd)[ch] = is;
    for (std::size_t i = 0; i < L.n; ++i)
      for (std::size_t j = 0; j < L.inner; ++j) {
        const std::size_t idx = (i * L.c + ch) * L.inner + j;
        const float xh = (X[idx] - static_cast<float>(mu)) * is;
        (*xhat)[idx] = xh;
        out[idx] = xh * G[ch] + B[ch];
      }
  }
  return t.record("batch_norm", std::move(out), {x, gamma, beta}, [=](const BackwardContext& c) {
    const Tensor& Gv = *c.in[1];
    const Tensor& dy = c.grad_out;
    for (std::size_t ch = 0; ch < L.c; ++ch) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t i = 0; i < L.n; ++i)
        for (std::size_t j = 0; j < L.inner; ++j) {
          const std::size_t idx = (i * L.c + ch) * L.inner + j;
          sum_dy += dy[idx];
          sum_dy_xh += dy[idx] * (*xhat)[idx];
        }
      if (Tensor* gg = c.in_grad[1]) (*gg)[ch] += static_cast<float>(sum_dy_xh);
      if (Tensor* gb = c.in_grad[2]) (*gb)[ch] += static_cast<float>(sum_dy);
      if (Tensor* gx = c.in_grad[0]) {
        const float is = (*invstd)[ch];
        const float gch = Gv[ch];
        for (std::size_t i = 0; i < L.n; ++i)
          for (std::size_t j = 0; j < L.inner; ++j) {
            const std::size_t idx = (i * L.c + ch) * L.inner + j;
            if (train) {
              const double m = static_cast<double>(M);
              (*gx)[idx] += static_cast<float>(gch * is / m *
                                               (m * dy[idx] - sum_dy - (*xhat)[idx] * sum_dy_xh));
            } else {
              (*gx)[idx] += gch * is * dy[idx];
            }
          }
      }
    }
  });
}

Var batch_norm_transposed(Tape& t, Var y, Var gamma, Var beta, float eps) {
  const Tensor& Y = t.value(y);
  const ChannelLayout L = channel_layout(Y, "batch_norm_transposed");
  const Tensor& G = t.value(gamma);
  const Tensor& B = t.value(beta);
  if (G.size() != L.c || B.size() != L.c)
    throw ShapeError("batch_norm_transposed: parameter size does not match " + std::to_string(L.c) + " features");
  for (std::size_t ch = 0; ch < L.c; ++ch)
    if (G[ch] == 0.0f) throw std::domain_error("batch_norm_transposed: gamma[" + std::to_string(ch) + "] is zero");
  Tensor out(Y.shape());
  for (std::size_t i = 0; i < L.n; ++i)
    for (std::size_t ch = 0; ch < L.c; ++ch)
      for (std::size_t j = 0; j < L.inner; ++j) {
        const std::size_t idx = (i * L.c + ch) * L.inner + j;
        out[idx] = (Y[idx] - B[ch]) * eps / G[ch];
      }
  return t.record("batch_norm_transposed", std::move(out), {y, gamma, beta}, [=](const BackwardContext& c) {
    const Tensor& Gv = *c.in[1];
    const Tensor& dx = c.grad_out;
    for (std::size_t i = 0; i < L.n; ++i)
      for (std::size_t ch = 0; ch < L.c; ++ch)
        for (std::size_t j = 0; j < L.inner; ++j) {
          const std::size_t idx = (i * L.c + ch) * L.inner + j;
          const float d = dx[idx] * eps / Gv[ch];
          if (Tensor* gy = c.in_grad[0]) (*gy)[idx] += d;
          if (Tensor* gb = c.in_grad[2]) (*gb)[ch] -= d;
          // d/dgamma of (y - beta) * eps / gamma = -out / gamma
          if (Tensor* gg = c.in_grad[1]) (*gg)[ch] -= dx[idx] * c.out[idx] / Gv[ch];
        }
  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
  const Tensor& Z = t.value(logits);
  expect_rank(Z, 2, "cross_entropy");
  const std::size_t n = Z.dim(0), k = Z.dim(1);
  if (labels.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
  auto probs = std::make_shared<Tensor>(Z.shape());
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw std::out_of_range("cross_entropy: label out of range");
    const float* row = Z.data() + i * k;
    const float mx = *std::max_element(row, row + k);
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j)
      (*probs)[i * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / se);
    loss += std::log(se) + mx - row[y];
  }
  return t.record("cross_entropy", Tensor::scalar(static_cast<float>(loss / static_cast<double>(n))), {logits},
                  [n, k, probs, lab](const BackwardContext& c) {
                    Tensor* g = c.in_grad[0];
                    if (!g) return;
                    const float s = c.grad_out[0] / static_cast<float>(n);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < k; ++j) {
                        const float target = static_cast<int>(j) == (*lab)[i] ? 1.0f : 0.0f;
                        (*g)[i * k + j] += s * ((*probs)[i * k + j] - target);
                      }
                  });
}

Var mse(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_same_shape(A, B, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double d = static_cast<double>(A[i]) - B[i];
    s += d * d;
  }
  const float n = static_cast<float>(A.size());
  return t.record("mse", Tensor::scalar(static_cast<float>(s / n)), {a, b}, [n](const BackwardContext& c) {
    const float s2 = 2.0f * c.grad_out[0] / n;
    for (std::size_t i = 0; i < c.in[0]->size(); ++i) {
      const float d = (*c.in[0])[i] - (*c.in[1])[i];
      if (c.in_grad[0]) (*c.in_grad[0])[i] += s2 * d;
      if (c.in_grad[1]) (*c.in_grad[1])[i] -= s2 * d;
    }
  });
}

}  // namespace inkwell::ops
