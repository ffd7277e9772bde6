#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "inkwell/data.hpp"
#include "inkwell/metrics.hpp"
#include "inkwell/trainer.hpp"

using namespace inkwell;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("inkwell_data_" + std::to_string(::getpid()) + "_" + name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& f) const { return path_ / f; }

 private:
  static std::string name() { return ::testing::UnitTest::GetInstance()->current_test_info()->name(); }
  fs::path path_;
};

void put32(std::string& s, std::uint32_t v) {
  for (int sh = 24; sh >= 0; sh -= 8) s.push_back(static_cast<char>((v >> sh) & 0xff));
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// n images of h x w where pixel (i, y, x) = (i * 7 + y * w + x) % 256, labels i % 10.
void write_idx(const fs::path& img, const fs::path& lab, std::uint32_t n, std::uint32_t h, std::uint32_t w) {
  std::string a, b;
  put32(a, 0x803);
  put32(a, n);
  put32(a, h);
  put32(a, w);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t p = 0; p < h * w; ++p) a.push_back(static_cast<char>((i * 7 + p) % 256));
  put32(b, 0x801);
  put32(b, n);
  for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<char>(i % 10));
  write_file(img, a);
  write_file(lab, b);
}

double nearest_centroid_accuracy(const Dataset& train, const Dataset& test) {
  const std::size_t dim = train.images.size() / train.size();
  std::vector<std::vector<double>> c(train.classes, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(train.classes, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto l = static_cast<std::size_t>(train.labels[i]);
    ++count[l];
    for (std::size_t j = 0; j < dim; ++j) c[l][j] += train.images[i * dim + j];
  }
  for (std::size_t l = 0; l < train.classes; ++l)
    for (auto& v : c[l]) v /= static_cast<double>(count[l]);
  std::size_t right = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t l = 0; l < train.classes; ++l) {
      double d = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double e = test.images[i * dim + j] - c[l][j];
        d += e * e;
      }
      if (d < best_d) best_d = d, best = l;
    }
    right += static_cast<int>(best) == test.labels[i];
  }
  return static_cast<double>(right) / static_cast<double>(test.size());
}

}  // namespace

TEST(Idx, ParsesBigEndianFiles) {
  TempDir dir;
  write_idx(dir / "img", dir / "lab", 12, 5, 4);
  const Dataset d = load_idx(dir / "img", dir / "lab", "test");
  EXPECT_EQ(d.images.shape(), (Shape{12, 1, 5, 4}));
  EXPECT_EQ(d.size(), 12u);
  EXPECT_EQ(d.classes, 10u);
  EXPECT_EQ(d.split, "test");
  EXPECT_EQ(d.labels[11], 1);
  EXPECT_FLOAT_EQ(d.images[3 * 20 + 6], static_cast<float>((3 * 7 + 6) % 256) / 255.0f);
  for (float v : d.images.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  const Dataset again = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(again.images.storage(), d.images.storage());
}

TEST(Idx, RejectsBadInput) {
  TempDir dir;
  write_idx(dir / "img", dir / "lab", 4, 3, 3);
  EXPECT_THROW(load_idx(dir / "lab", dir / "lab"), DataError);
  EXPECT_THROW(load_idx(dir / "img", dir / "img"), DataError);

  const std::string img = slurp(dir / "img");
  write_file(dir / "short", img.substr(0, img.size() - 5));
  try {
    load_idx(dir / "short", dir / "lab");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  write_idx(dir / "img5", dir / "lab5", 5, 3, 3);
  EXPECT_THROW(load_idx(dir / "img", dir / "lab5"), DataError);
  EXPECT_THROW(load_idx(dir / "missing", dir / "lab"), DataError);
}

TEST(Idx, BundledMnistIfPresent) {
  const fs::path root = INKWELL_SOURCE_DIR "/data/mnist";
  if (!fs::exists(root / "train-images-idx3-ubyte")) GTEST_SKIP() << "MNIST not fetched";
  const Dataset d = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
  EXPECT_EQ(d.sample_shape(), (Shape{1, 28, 28}));
  EXPECT_EQ(d.classes, 10u);
  EXPECT_NO_THROW(d.validate());
}

TEST(Cifar, RecordLayout) {
  TempDir dir;
  std::string bytes;
  for (int r = 0; r < 3; ++r) {
    bytes.push_back(static_cast<char>(r + 4));
    for (int p = 0; p < 3072; ++p) bytes.push_back(static_cast<char>(p < 1024 ? 255 : (p < 2048 ? 0 : 51)));
  }
  write_file(dir / "b1", bytes);
  const Dataset d = load_cifar10({dir / "b1"});
  EXPECT_EQ(d.images.shape(), (Shape{3, 3, 32, 32}));
  EXPECT_EQ(d.labels, (std::vector<int>{4, 5, 6}));
  EXPECT_EQ(d.images[0], 1.0f);
  EXPECT_EQ(d.images[1024], 0.0f);
  EXPECT_FLOAT_EQ(d.images[2048], 0.2f);

  write_file(dir / "b2", bytes.substr(0, 3073 * 2 + 10));
  EXPECT_THROW(load_cifar10({dir / "b2"}), DataError);
  EXPECT_EQ(load_cifar10({dir / "b1", dir / "b1"}).size(), 6u);
}

TEST(Synthetic, SizeAndDeterminism) {
  SyntheticSpec s;
  const Dataset a = make_synthetic(s), b = make_synthetic(s);
  EXPECT_EQ(a.size(), 1000u);
  EXPECT_EQ(a.images.shape(), (Shape{1000, 1, 28, 28}));
  EXPECT_EQ(a.images.storage(), b.images.storage());
  EXPECT_EQ(a.labels, b.labels);
  s.seed = 1;
  EXPECT_NE(make_synthetic(s).images.storage(), a.images.storage());
  s.side = 7;
  EXPECT_THROW(make_synthetic(s), DataError);
}

TEST(Synthetic, NearestCentroidSeparates) {
  SyntheticSpec s;
  s.per_class = 80;
  const Dataset all = make_synthetic(s);
  std::vector<std::size_t> head, tail;
  for (std::size_t i = 0; i < all.size(); ++i) (i < 600 ? head : tail).push_back(i);
  const Dataset train = select(all, head), test = select(all, tail);
  EXPECT_GE(nearest_centroid_accuracy(train, test), 0.80);
}

TEST(Synthetic, FreshCnnLearnsQuickly) {
  SyntheticSpec s;
  const Dataset d = make_synthetic(s);
  const ModelSpec spec = zoo::default_cnn();
  ParameterStore store(21);
  init_parameters(spec, store);
  const Graph g = build_forward(spec, store);
  Optimizer opt({OptimizerKind::Adam, 1e-3f});
  Rng rng(22);
  for (int e = 0; e < 2; ++e) train_epoch(g, store, opt, d, 64, rng);
  EXPECT_GE(accuracy(g, store, d), 0.90);
}

TEST(Subset, FirstKPerClass) {
  SyntheticSpec s;
  s.per_class = 5;
  const Dataset d = make_synthetic(s);
  const Dataset sub = subset_per_class(d, 2);
  EXPECT_EQ(sub.size(), 20u);
  std::vector<int> seen(10, 0);
  for (int l : sub.labels) ++seen[l];
  for (int c : seen) EXPECT_EQ(c, 2);
  // The first subset sample of each class is that class's first sample.
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] == sub.labels[0]) {
      EXPECT_EQ(image_at(d.images, i).storage(), image_at(sub.images, 0).storage());
      break;
    }
  EXPECT_EQ(subset_per_class(d, 100).size(), d.size());
}

TEST(Pgm, FormatContractAndRoundTrip) {
  TempDir dir;
  Tensor img({1, 28, 28});
  Rng rng(3);
  for (auto& v : img.values()) v = rng.uniform(-0.2f, 1.2f);
  write_pgm(img, dir / "a.pgm");
  const std::string bytes = slurp(dir / "a.pgm");
  EXPECT_EQ(bytes.substr(0, 13), "P5\n28 28\n255\n");
  EXPECT_EQ(bytes.size(), 13u + 784u);
  const Tensor back = read_pgm(dir / "a.pgm");
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i)
    EXPECT_LE(std::fabs(back[i] - std::clamp(img[i], 0.0f, 1.0f)), 1.0f / 255.0f);

  write_pgm(Tensor({1, 4, 4}, 0.0f), dir / "black.pgm");
  const std::string black = slurp(dir / "black.pgm");
  for (std::size_t i = 11; i < black.size(); ++i) EXPECT_EQ(black[i], '\0');

  write_file(dir / "bad.pgm", "P5\n28\n255\n");
  EXPECT_THROW(read_pgm(dir / "bad.pgm"), DataError);
  write_file(dir / "p6.pgm", "P6\n1 1\n255\nabc");
  EXPECT_THROW(read_pgm(dir / "p6.pgm"), DataError);
  EXPECT_THROW(write_pgm(Tensor({3, 2, 2}), dir / "c.pgm"), DataError);
}

TEST(Ppm, RoundTripChannelsInOrder) {
  TempDir dir;
  Tensor img({3, 2, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 17.0f;
  write_ppm(img, dir / "a.ppm");
  const std::string bytes = slurp(dir / "a.ppm");
  EXPECT_EQ(bytes.substr(0, 11), "P6\n3 2\n255\n");
  // Pixel 0 interleaves channel planes: R = img[0], G = img[6], B = img[12].
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), std::lround(6.0 / 17.0 * 255.0));
  const Tensor back = read_ppm(dir / "a.ppm");
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::fabs(back[i] - img[i]), 1.0f / 255.0f);
  write_image(img, dir / "b.ppm");
  EXPECT_EQ(slurp(dir / "b.ppm"), bytes);
}

TEST(Images, GridLayout) {
  const Tensor a({1, 2, 2}, 0.0f), b({1, 2, 2}, 1.0f);
  const Tensor g = image_grid({{a, b}, {b}}, 1, 0.5f);
  EXPECT_EQ(g.shape(), (Shape{1, 5, 5}));
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[2], 0.5f);
  EXPECT_EQ(g[3], 1.0f);
  EXPECT_EQ(g[3 * 5 + 0], 1.0f);
  EXPECT_EQ(g[3 * 5 + 4], 0.5f);
  EXPECT_THROW(image_grid({{a, Tensor({1, 3, 3})}}), DataError);
  EXPECT_EQ(stack({a, b}).shape(), (Shape{2, 1, 2, 2}));
  EXPECT_EQ(image_at(stack({a, b}), 1).storage(), b.storage());
  EXPECT_EQ(image_strip({a, b, a}, 2).shape(), (Shape{1, 2, 10}));
}

TEST(DatasetTest, ValidateInvariants) {
  Dataset d;
  d.images = Tensor({2, 1, 2, 2});
  d.labels = {0, 1};
  d.classes = 2;
  EXPECT_NO_THROW(d.validate());
  d.labels = {0, 2};
  EXPECT_THROW(d.validate(), DataError);
  d.labels = {0};
  EXPECT_THROW(d.validate(), DataError);
}
