#include "inkwell/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "inkwell/rng.hpp"

namespace inkwell {

namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint32_t be32(const std::string& b, std::size_t off, const fs::path& path) {
  if (off + 4 > b.size()) throw DataError(path.string() + ": truncated header at offset " + std::to_string(off));
  auto u = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + i])); };
  return (u(0) << 24) | (u(1) << 16) | (u(2) << 8) | u(3);
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_netpbm(const Tensor& image, const fs::path& path, std::size_t channels, const char* magic) {
  std::size_t h, w;
  if (image.rank() == 2 && channels == 1) {
    h = image.dim(0), w = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == channels) {
    h = image.dim(1), w = image.dim(2);
  } else {
    throw DataError(std::string(magic) + " expects " + std::to_string(channels) + " channel(s), got " +
                    to_string(image.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << magic << "\n" << w << " " << h << "\n255\n";
  std::string bytes(h * w * channels, '\0');
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        bytes[(y * w + x) * channels + c] = static_cast<char>(to_byte(image[(c * h + y) * w + x]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_netpbm(const fs::path& path, std::size_t channels, const std::string& magic) {
  const std::string b = read_all(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < b.size()) {
      if (std::isspace(static_cast<unsigned char>(b[pos]))) {
        ++pos;
      } else if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
    if (start == pos) throw DataError(path.string() + ": malformed header");
    return b.substr(start, pos - start);
  };
  if (token() != magic) throw DataError(path.string() + ": expected magic " + magic);
  std::size_t w, h, maxval;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw DataError(path.string() + ": unsupported dimensions or maxval");
  ++pos;  // single whitespace before the raster
  if (b.size() - std::min(pos, b.size()) < w * h * channels)
    throw DataError(path.string() + ": truncated raster at offset " + std::to_string(b.size()));
  Tensor out({channels, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        out[(c * h + y) * w + x] = static_cast<unsigned char>(b[pos + (y * w + x) * channels + c]) / 255.0f;
  return out;
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("dataset images must be (N, C, H, W), got " + to_string(images.shape()));
  if (images.dim(0) != labels.size())
    throw DataError("dataset has " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                    " labels");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

Dataset load_idx(const fs::path& images, const fs::path& labels, const std::string& split) {
  const std::string ib = read_all(images);
  const std::string lb = read_all(labels);
  const std::uint32_t im = be32(ib, 0, images);
  if (im != 0x00000803)
    throw DataError(images.string() + ": bad image magic 0x" + [&] {
      std::ostringstream s;
      s << std::hex << im;
      return s.str();
    }() + " at offset 0");
  if (be32(lb, 0, labels) != 0x00000801) throw DataError(labels.string() + ": bad label magic at offset 0");
  const std::size_t n = be32(ib, 4, images), h = be32(ib, 8, images), w = be32(ib, 12, images);
  const std::size_t nl = be32(lb, 4, labels);
  if (n != nl) throw DataError("image count " + std::to_string(n) + " differs from label count " + std::to_string(nl));
  if (n == 0 || h == 0 || w == 0) throw DataError(images.string() + ": empty IDX file");
  if (ib.size() < 16 + n * h * w)
    throw DataError(images.string() + ": truncated at offset " + std::to_string(ib.size()) + ", expected " +
                    std::to_string(16 + n * h * w) + " bytes");
  if (lb.size() < 8 + n)
    throw DataError(labels.string() + ": truncated at offset " + std::to_string(lb.size()) + ", expected " +
                    std::to_string(8 + n) + " bytes");
  Dataset d;
  d.images = Tensor({n, 1, h, w});
  for (std::size_t i = 0; i < n * h * w; ++i) d.images[i] = static_cast<unsigned char>(ib[16 + i]) / 255.0f;
  d.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<unsigned char>(lb[8 + i]);
    max_label = std::max(max_label, d.labels[i]);
  }
  d.classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  d.split = split;
  d.source = "mnist";
  return d;
}

Dataset load_cifar10(const std::vector<fs::path>& batches, const std::string& split) {
  constexpr std::size_t kRecord = 3073;
  std::vector<std::string> blobs;
  std::size_t n = 0;
  for (const auto& p : batches) {
    blobs.push_back(read_all(p));
    if (blobs.back().empty() || blobs.back().size() % kRecord != 0)
      throw DataError(p.string() + ": size " + std::to_string(blobs.back().size()) + " is not a multiple of 3073");
    n += blobs.back().size() / kRecord;
  }
  if (n == 0) throw DataError("no CIFAR-10 records");
  Dataset d;
  d.images = Tensor({n, 3, 32, 32});
  d.labels.resize(n);
  std::size_t i = 0;
  for (const auto& b : blobs)
    for (std::size_t r = 0; r < b.size() / kRecord; ++r, ++i) {
      const std::size_t off = r * kRecord;
      d.labels[i] = static_cast<unsigned char>(b[off]);
      if (d.labels[i] > 9) throw DataError("label byte out of range at offset " + std::to_string(off));
      for (std::size_t k = 0; k < 3072; ++k) d.images[i * 3072 + k] = static_cast<unsigned char>(b[off + 1 + k]) / 255.0f;
    }
  d.classes = 10;
  d.split = split;
  d.source = "cifar10";
  return d;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.side < 8) throw DataError("synthetic images need a side of at least 8");
  if (spec.classes == 0 || spec.per_class == 0 || spec.channels == 0) throw DataError("empty synthetic spec");
  Rng rng(spec.seed);
  const std::size_t blobs = 3;
  const float s = static_cast<float>(spec.side);
  struct Blob {
    float y, x, sigma;
  };
  std::vector<std::vector<Blob>> templates(spec.classes);
  for (auto& t : templates)
    for (std::size_t b = 0; b < blobs; ++b)
      t.push_back({rng.uniform(0.2f * s, 0.8f * s), rng.uniform(0.2f * s, 0.8f * s), rng.uniform(0.08f * s, 0.13f * s)});

  const std::size_t n = spec.classes * spec.per_class, plane = spec.side * spec.side;
  Dataset d;
  d.images = Tensor({n, spec.channels, spec.side, spec.side});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % spec.classes);
    d.labels[i] = cls;
    std::vector<Blob> inst = templates[static_cast<std::size_t>(cls)];
    for (auto& b : inst) {
      b.y += rng.normal(0.0f, 0.04f * s);
      b.x += rng.normal(0.0f, 0.04f * s);
    }
    for (std::size_t y = 0; y < spec.side; ++y)
      for (std::size_t x = 0; x < spec.side; ++x) {
        float v = 0.0f;
        for (const auto& b : inst) {
          const float dy = static_cast<float>(y) - b.y, dx = static_cast<float>(x) - b.x;
          v = std::max(v, std::exp(-(dy * dy + dx * dx) / (2.0f * b.sigma * b.sigma)));
        }
        const float base = v > 0.5f ? 1.0f : 0.0f;
        for (std::size_t c = 0; c < spec.channels; ++c)
          d.images[(i * spec.channels + c) * plane + y * spec.side + x] =
              std::clamp(base + rng.uniform(-0.1f, 0.1f), 0.0f, 1.0f);
      }
  }
  d.classes = spec.classes;
  d.split = "train";
  d.source = "synthetic";
  return d;
}

Dataset select(const Dataset& d, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("empty selection");
  const std::size_t per = d.images.size() / d.images.dim(0);
  Shape shape = d.images.shape();
  shape[0] = indices.size();
  Dataset out;
  out.images = Tensor(shape);
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= d.size()) throw DataError("index " + std::to_string(i) + " out of range");
    std::copy(d.images.data() + i * per, d.images.data() + (i + 1) * per, out.images.data() + k * per);
    out.labels.push_back(d.labels[i]);
  }
  out.classes = d.classes;
  out.split = d.split;
  out.source = d.source;
  return out;
}

Dataset subset_per_class(const Dataset& d, std::size_t k) {
  std::vector<std::size_t> counts(d.classes, 0), idx;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto& c = counts[static_cast<std::size_t>(d.labels[i])];
    if (c < k) {
      ++c;
      idx.push_back(i);
    }
  }
  return select(d, idx);
}

void write_pgm(const Tensor& image, const fs::path& path) { write_netpbm(image, path, 1, "P5"); }
Tensor read_pgm(const fs::path& path) { return read_netpbm(path, 1, "P5"); }
void write_ppm(const Tensor& image, const fs::path& path) { write_netpbm(image, path, 3, "P6"); }
Tensor read_ppm(const fs::path& path) { return read_netpbm(path, 3, "P6"); }

void write_image(const Tensor& image, const fs::path& path) {
  if (image.rank() == 3 && image.dim(0) == 3)
    write_ppm(image, path);
  else
    write_pgm(image, path);
}

Tensor image_grid(const std::vector<std::vector<Tensor>>& rows, std::size_t gap, float fill) {
  if (rows.empty() || rows.front().empty()) throw DataError("image_grid: no images");
  const Shape& s = rows.front().front().shape();
  if (s.size() != 3) throw DataError("image_grid expects (C, H, W) images");
  const std::size_t c = s[0], h = s[1], w = s[2];
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const std::size_t H = rows.size() * h + (rows.size() - 1) * gap, W = cols * w + (cols - 1) * gap;
  Tensor out({c, H, W}, fill);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < rows[r].size(); ++k) {
      const Tensor& im = rows[r][k];
      if (im.shape() != s) throw DataError("image_grid: mixed image shapes");
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            out[(ch * H + r * (h + gap) + y) * W + k * (w + gap) + x] = im[(ch * h + y) * w + x];
    }
  return out;
}

Tensor image_strip(const std::vector<Tensor>& images, std::size_t gap, float fill) {
  return image_grid({images}, gap, fill);
}

Tensor image_at(const Tensor& batch, std::size_t i) {
  if (batch.rank() != 4) throw DataError("image_at expects (N, C, H, W)");
  return batch.slice_batch(i, i + 1).reshaped({batch.dim(1), batch.dim(2), batch.dim(3)});
}

Tensor stack(const std::vector<Tensor>& images) {
  if (images.empty()) throw DataError("stack: no images");
  const Shape& s = images.front().shape();
  Shape shape{images.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  Tensor out(shape);
  const std::size_t per = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw DataError("stack: mixed shapes");
    std::copy(images[i].data(), images[i].data() + per, out.data() + i * per);
  }
  return out;
}

}  // namespace inkwell
