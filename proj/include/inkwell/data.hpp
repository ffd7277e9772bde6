#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "inkwell/tensor.hpp"

namespace inkwell {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor images;            // (N, C, H, W), values in [0, 1]
  std::vector<int> labels;  // N entries in [0, classes)
  std::size_t classes = 0;
  std::string split;   // "train" or "test"
  std::string source;  // e.g. "mnist", "cifar10", "synthetic"

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  // Throws DataError if the invariants do not hold.
  void validate() const;
};

// Big-endian IDX image (magic 0x803) and label (0x801) files, pixels / 255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 const std::string& split = "train");
// CIFAR-10 binary batches: 1 label byte + 3072 pixel bytes (R, G, B planes) per record.
Dataset load_cifar10(const std::vector<std::filesystem::path>& batches, const std::string& split = "train");

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t channels = 1;
  std::size_t side = 28;
  std::uint64_t seed = 0;
};
// Each class is a fixed arrangement of Gaussian blobs; samples jitter the blob
// centers, threshold the result and add light pixel noise.
Dataset make_synthetic(const SyntheticSpec& spec);

// First `k` samples of each class in dataset order.
Dataset subset_per_class(const Dataset& d, std::size_t k);
Dataset select(const Dataset& d, const std::vector<std::size_t>& indices);

// Binary netpbm: P5 for one channel, P6 for three. Values are clamped to [0, 1]
// and rounded to the nearest byte.
void write_pgm(const Tensor& image, const std::filesystem::path& path);
Tensor read_pgm(const std::filesystem::path& path);  // (1, H, W)
void write_ppm(const Tensor& image, const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);  // (3, H, W)
// Picks P5 or P6 from the channel count of a (C, H, W) image.
void write_image(const Tensor& image, const std::filesystem::path& path);

// Lays (C, H, W) images out on a grid separated by `gap` pixels of value `fill`.
// Every row of `rows` may have a different length.
Tensor image_grid(const std::vector<std::vector<Tensor>>& rows, std::size_t gap = 2, float fill = 0.5f);
Tensor image_strip(const std::vector<Tensor>& images, std::size_t gap = 2, float fill = 0.5f);

// Image `i` of an (N, C, H, W) batch as (C, H, W).
Tensor image_at(const Tensor& batch, std::size_t i);
// Stacks (C, H, W) images into (N, C, H, W).
Tensor stack(const std::vector<Tensor>& images);

}  // namespace inkwell
