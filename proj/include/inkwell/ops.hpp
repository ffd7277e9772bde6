#pragma once

#include <cstddef>
#include <span>

#include "inkwell/autograd.hpp"
#include "inkwell/rng.hpp"

// Differentiable operations recorded on a Tape. Image tensors are NCHW,
// feature tensors are (N, F).
namespace inkwell::ops {

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, float s);
Var add_scalar(Tape& t, Var a, float s);
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);

// (n, k) x (k, m) -> (n, m)
Var matmul(Tape& t, Var a, Var b);

// y = x * w^T + b, with w of shape (out, in). `b` may be an invalid Var.
Var linear(Tape& t, Var x, Var w, Var b);
// x = (y - b) * w; maps an (N, out) tensor back to (N, in).
Var linear_transposed(Tape& t, Var y, Var w, Var b);

Var relu(Tape& t, Var x);
// Inverted dropout: kept activations are scaled by 1 / (1 - rate). Identity
// when `train` is false or rate is zero.
Var dropout(Tape& t, Var x, float rate, Rng& rng, bool train);

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_size(std::size_t in) const;
};

// x (N, C, H, W), w (O, C, k, k), b (O) or invalid.
Var conv2d(Tape& t, Var x, Var w, Var b, const ConvGeometry& g);

// Input-gradient of conv2d with kernel w: y (N, O, Ho, Wo) -> (N, C, out_h, out_w).
// out_h/out_w pick the output padding; they must be reachable with an output
// padding in [0, stride).
Var conv_transpose2d(Tape& t, Var y, Var w, const ConvGeometry& g, std::size_t out_h, std::size_t out_w);
// Output padding needed so that conv_transpose2d restores `in` from conv output `out`.
std::size_t transposed_output_padding(const ConvGeometry& g, std::size_t in);

Var max_pool2d(Tape& t, Var x, std::size_t kernel, std::size_t stride);
// Nearest-neighbor upsampling; source index = min(o / factor, in - 1).
Var upsample_nearest(Tape& t, Var x, std::size_t factor, std::size_t out_h, std::size_t out_w);

Var reshape(Tape& t, Var x, Shape shape);

// Normalizes per feature (rank 2) or per channel (rank 4). In training mode
// batch statistics are used and the running estimates are updated with
// `momentum`; in eval mode the running estimates are used.
Var batch_norm(Tape& t, Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, float eps,
               float momentum, bool train);
// x = (y - beta) * eps / gamma, per feature or channel.
Var batch_norm_transposed(Tape& t, Var y, Var gamma, Var beta, float eps);

// Mean softmax cross-entropy over the batch.
Var cross_entropy(Tape& t, Var logits, std::span<const int> labels);
// Mean of squared differences.
Var mse(Tape& t, Var a, Var b);

}  // namespace inkwell::ops
