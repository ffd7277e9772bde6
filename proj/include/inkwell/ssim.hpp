#pragma once

#include <cstddef>
#include <vector>

#include "inkwell/autograd.hpp"

namespace inkwell {

// Gaussian-window SSIM over valid (unpadded) sliding windows.
struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double data_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;

  double c1() const { return (k1 * data_range) * (k1 * data_range); }
  double c2() const { return (k2 * data_range) * (k2 * data_range); }
  // Window side actually used for an h x w image.
  std::size_t effective_window(std::size_t h, std::size_t w) const;
};

// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> gaussian_taps(std::size_t size, double sigma);

// Accepts (H, W), (C, H, W) or (N, C, H, W). Returns the mean local SSIM
// averaged over every channel plane of every image.
double ssim(const Tensor& a, const Tensor& b, const SsimParams& p = {});
// One value per image of an (N, C, H, W) batch (channel mean).
std::vector<double> ssim_per_image(const Tensor& a, const Tensor& b, const SsimParams& p = {});

namespace ops {
// Differentiable mean SSIM; same reduction as inkwell::ssim.
Var ssim(Tape& t, Var a, Var b, const SsimParams& p = {});
}  // namespace ops

}  // namespace inkwell
