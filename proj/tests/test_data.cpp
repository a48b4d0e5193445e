#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "budforest/data.hpp"

using namespace budforest;
namespace fs = std::filesystem;

namespace {

// magic 0x00000803, count 1, rows 2, cols 2, pixels (0, 255, 128, 0)
const std::vector<unsigned char> kTinyImages{
    0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00,
    0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x00, 0xFF, 0x80, 0x00};

// magic 0x00000801, count 3, labels (7, 2, 0)
const std::vector<unsigned char> kTinyLabels{0x00, 0x00, 0x08, 0x01, 0x00,
                                             0x00, 0x00, 0x03, 0x07, 0x02,
                                             0x00};

ParseErrorKind kind_of(const std::vector<unsigned char>& bytes, bool images) {
  try {
    if (images)
      (void)parse_idx_images(bytes);
    else
      (void)parse_idx_labels(bytes);
  } catch (const ParseError& e) {
    return e.kind;
  }
  FAIL("expected a ParseError");
  return ParseErrorKind::bad_magic;
}

double total_mass(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// Center of mass in (col, row) coordinates.
std::array<double, 2> center_of_mass(const std::vector<double>& img, int side) {
  double m = 0.0, cx = 0.0, cy = 0.0;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      double w = img[(size_t)r * side + c];
      m += w;
      cx += w * c;
      cy += w * r;
    }
  return {cx / m, cy / m};
}

// Independent bilinear resample of a pure translation by (dx, dy).
std::vector<double> ref_shift(const std::vector<double>& img, int side,
                              double dx, double dy) {
  std::vector<double> out((size_t)side * side, 0.0);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      double xs = c - dx;
      double ys = r - dy;
      int x0 = (int)std::floor(xs);
      int y0 = (int)std::floor(ys);
      double fx = xs - x0;
      double fy = ys - y0;
      auto at = [&](int y, int x) -> double {
        if (x < 0 || y < 0 || x >= side || y >= side) return 0.0;
        return img[(size_t)y * side + x];
      };
      out[(size_t)r * side + c] =
          (1 - fx) * (1 - fy) * at(y0, x0) + fx * (1 - fy) * at(y0, x0 + 1) +
          (1 - fx) * fy * at(y0 + 1, x0) + fx * fy * at(y0 + 1, x0 + 1);
    }
  return out;
}

fs::path fresh_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() /
                 (std::string("budforest_test_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write((const char*)bytes.data(), (std::streamsize)bytes.size());
}

void write_gzip(const fs::path& p, const std::vector<unsigned char>& bytes) {
  gzFile f = gzopen(p.string().c_str(), "wb");
  REQUIRE(f != nullptr);
  REQUIRE(gzwrite(f, bytes.data(), (unsigned)bytes.size()) ==
          (int)bytes.size());
  gzclose(f);
}

}  // namespace

TEST_CASE("parse_idx_images on a minimal hand-built stream") {
  IdxImages img = parse_idx_images(kTinyImages);
  CHECK(img.count == 1);
  CHECK(img.rows == 2);
  CHECK(img.cols == 2);
  REQUIRE(img.pixels.size() == 4);
  CHECK(img.pixels[0] == 0.0);
  CHECK(img.pixels[1] == 1.0);
  CHECK(img.pixels[2] == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
  CHECK(img.pixels[3] == 0.0);
}

TEST_CASE("parse_idx_labels on a minimal stream") {
  std::vector<int> labels = parse_idx_labels(kTinyLabels);
  CHECK(labels == std::vector<int>{7, 2, 0});
}

TEST_CASE("idx parse errors are distinct") {
  auto bad_magic = kTinyImages;
  bad_magic[3] = 0x01;
  CHECK(kind_of(bad_magic, true) == ParseErrorKind::bad_magic);

  auto short_header = kTinyImages;
  short_header.resize(10);
  CHECK(kind_of(short_header, true) == ParseErrorKind::truncated);

  auto short_payload = kTinyImages;
  short_payload.pop_back();
  CHECK(kind_of(short_payload, true) == ParseErrorKind::truncated);

  auto extra = kTinyImages;
  extra.push_back(0x00);
  CHECK(kind_of(extra, true) == ParseErrorKind::trailing_bytes);

  auto label_magic = kTinyLabels;
  label_magic[2] = 0x09;
  CHECK(kind_of(label_magic, false) == ParseErrorKind::bad_magic);

  auto label_short = kTinyLabels;
  label_short.pop_back();
  CHECK(kind_of(label_short, false) == ParseErrorKind::truncated);

  auto label_extra = kTinyLabels;
  label_extra.push_back(0x01);
  CHECK(kind_of(label_extra, false) == ParseErrorKind::trailing_bytes);

  auto label_big = kTinyLabels;
  label_big[8] = 10;
  CHECK(kind_of(label_big, false) == ParseErrorKind::bad_label);

  CHECK(kind_of({}, true) == ParseErrorKind::truncated);
}

TEST_CASE("serialize then parse is the identity") {
  std::mt19937_64 rng(7);
  IdxImages img;
  img.count = 3;
  img.rows = 4;
  img.cols = 5;
  std::uniform_int_distribution<int> byte(0, 255);
  for (int i = 0; i < 3 * 4 * 5; ++i)
    img.pixels.push_back(byte(rng) / 255.0);

  std::vector<unsigned char> bytes = serialize_idx_images(img);
  IdxImages back = parse_idx_images(bytes);
  CHECK(back.count == img.count);
  CHECK(back.rows == img.rows);
  CHECK(back.cols == img.cols);
  CHECK(back.pixels == img.pixels);
  CHECK(serialize_idx_images(back) == bytes);

  std::vector<int> labels{0, 9, 4, 4, 1};
  CHECK(parse_idx_labels(serialize_idx_labels(labels)) == labels);
}

TEST_CASE("make_image_dataset pairs images with labels") {
  IdxImages img = parse_idx_images(kTinyImages);
  Dataset data = make_image_dataset(img, {7});
  CHECK(data.size() == 1);
  CHECK(data.feature_dim == 4);
  CHECK(data.class_count == 10);
  CHECK(data.samples[0].label == 7);
  CHECK(data.samples[0].features[1] == 1.0);

  CHECK_THROWS_AS((void)make_image_dataset(img, {1, 2}),
                  std::invalid_argument);
}

TEST_CASE("read_file_maybe_gzip handles both plain and gzip files") {
  fs::path dir = fresh_dir("gz");
  write_bytes(dir / "plain.bin", kTinyImages);
  CHECK(read_file_maybe_gzip((dir / "plain.bin").string()) == kTinyImages);

  write_gzip(dir / "packed.bin.gz", kTinyImages);
  CHECK(read_file_maybe_gzip((dir / "packed.bin.gz").string()) == kTinyImages);

  CHECK_THROWS_AS((void)read_file_maybe_gzip((dir / "missing").string()),
                  std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("load_mnist_dir finds conventional names, gz included") {
  fs::path dir = fresh_dir("mnist");
  write_bytes(dir / "train-images-idx3-ubyte", kTinyImages);
  write_bytes(dir / "train-labels-idx1-ubyte",
              serialize_idx_labels(std::vector<int>{3}));
  Dataset train = load_mnist_dir(dir.string(), true);
  CHECK(train.size() == 1);
  CHECK(train.feature_dim == 4);
  CHECK(train.samples[0].label == 3);

  write_gzip(dir / "t10k-images-idx3-ubyte.gz", kTinyImages);
  write_gzip(dir / "t10k-labels-idx1-ubyte.gz",
             serialize_idx_labels(std::vector<int>{9}));
  Dataset test = load_mnist_dir(dir.string(), false);
  CHECK(test.size() == 1);
  CHECK(test.samples[0].label == 9);

  CHECK_THROWS_AS((void)load_mnist_dir((dir / "nope").string(), true),
                  std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("augment with an all-zero config is the identity") {
  Sample s;
  s.label = 4;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 49; ++i) s.features.push_back(u(rng));

  AugmentConfig cfg;
  cfg.max_shift_px = 0;
  cfg.max_rotation_deg = 0.0;
  cfg.max_shear = 0.0;
  Sample out = augment(s, cfg, rng);
  CHECK(out.label == 4);
  CHECK(out.features == s.features);
}

TEST_CASE("augment rejects non-square images") {
  Sample s;
  s.features.assign(6, 0.5);
  AugmentConfig cfg;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS((void)augment(s, cfg, rng), std::invalid_argument);
}

TEST_CASE("pure shift moves a single bright pixel by the drawn offset") {
  const int side = 9;
  Sample s;
  s.features.assign(side * side, 0.0);
  s.features[4 * side + 4] = 1.0;

  AugmentConfig cfg;
  cfg.max_shift_px = 2;
  cfg.max_rotation_deg = 0.0;
  cfg.max_shear = 0.0;

  for (uint64_t seed = 0; seed < 8; ++seed) {
    std::mt19937_64 rng(seed);
    Sample out = augment(s, cfg, rng);
    double mass = total_mass(out.features);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));

    // A translated delta keeps its mass center at the landing point, so
    // the drawn offset can be read back off the output.
    auto com = center_of_mass(out.features, side);
    double dx = com[0] - 4.0;
    double dy = com[1] - 4.0;
    CHECK(std::abs(dx) <= 2.0 + 1e-9);
    CHECK(std::abs(dy) <= 2.0 + 1e-9);

    std::vector<double> want = ref_shift(s.features, side, dx, dy);
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(out.features[i] == doctest::Approx(want[i]).epsilon(1e-6));
  }
}

TEST_CASE("rotation preserves interior mass within 2 percent") {
  const int side = 15;
  Sample s;
  s.features.assign(side * side, 0.0);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      double dr = r - 7.0, dc = c - 7.0;
      s.features[(size_t)r * side + c] = std::exp(-(dr * dr + dc * dc) / 6.0);
    }
  double before = total_mass(s.features);

  AugmentConfig cfg;
  cfg.max_shift_px = 0;
  cfg.max_rotation_deg = 15.0;
  cfg.max_shear = 0.0;
  for (uint64_t seed = 0; seed < 8; ++seed) {
    std::mt19937_64 rng(100 + seed);
    Sample out = augment(s, cfg, rng);
    CHECK(total_mass(out.features) ==
          doctest::Approx(before).epsilon(0.02));
    for (double v : out.features) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("build_augmented_dataset sizes and label mix") {
  Dataset data = make_xor(25, 0.2, 21);  // 100 samples, 50/50 labels
  AugmentConfig cfg;
  cfg.copies_per_sample = 0;
  // Synthetic 2-D points are not images; use a square toy set instead.
  Dataset imgs;
  imgs.feature_dim = 16;
  imgs.class_count = 3;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Sample s;
    s.label = i % 3;
    for (int j = 0; j < 16; ++j) s.features.push_back(u(rng));
    imgs.samples.push_back(std::move(s));
  }

  Dataset same = build_augmented_dataset(imgs, cfg);
  CHECK(same.size() == 100);
  for (int i = 0; i < 100; ++i)
    CHECK(same.samples[i].features == imgs.samples[i].features);

  cfg.copies_per_sample = 2;
  cfg.seed = 77;
  Dataset big = build_augmented_dataset(imgs, cfg);
  CHECK(big.size() == 300);
  CHECK(big.feature_dim == 16);

  std::array<int, 3> before{}, after{};
  for (const Sample& s : imgs.samples) before[(size_t)s.label]++;
  for (const Sample& s : big.samples) after[(size_t)s.label]++;
  for (int c = 0; c < 3; ++c) CHECK(after[(size_t)c] == 3 * before[(size_t)c]);

  Dataset again = build_augmented_dataset(imgs, cfg);
  for (size_t i = 0; i < big.samples.size(); ++i)
    CHECK(big.samples[i].features == again.samples[i].features);

  (void)data;
}

TEST_CASE("make_blobs geometry") {
  Dataset crisp = make_blobs(5, 0.0, 1);
  CHECK(crisp.size() == 10);
  CHECK(crisp.feature_dim == 2);
  CHECK(crisp.class_count == 2);
  for (const Sample& s : crisp.samples) {
    CHECK(std::abs(s.features[0]) == 2.0);
    CHECK(s.features[1] == 0.0);
    CHECK(s.label == (s.features[0] > 0 ? 1 : 0));
  }

  Dataset a = make_blobs(50, 0.3, 9);
  Dataset b = make_blobs(50, 0.3, 9);
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].features == b.samples[i].features);
    CHECK(a.samples[i].label == b.samples[i].label);
  }
}

TEST_CASE("make_xor is not linearly separable") {
  Dataset crisp = make_xor(5, 0.0, 2);
  CHECK(crisp.size() == 20);
  CHECK(crisp.class_count == 2);
  for (const Sample& s : crisp.samples) {
    bool px = s.features[0] > 0;
    bool py = s.features[1] > 0;
    CHECK(s.label == (int)(px ^ py));
  }

  // Exhaustive coarse grid over affine gates: the best hard split gets
  // exactly 3 of the 4 clusters.
  double best = 0.0;
  for (double w1 = -1.0; w1 <= 1.0; w1 += 0.5)
    for (double w2 = -1.0; w2 <= 1.0; w2 += 0.5)
      for (double b = -3.0; b <= 3.0; b += 1.0) {
        int hits = 0;
        for (const Sample& s : crisp.samples) {
          double score = w1 * s.features[0] + w2 * s.features[1] + b;
          int pred = score > 0 ? 1 : 0;
          hits += pred == s.label;
        }
        best = std::max(best, (double)hits / (double)crisp.size());
      }
  CHECK(best == 0.75);
}

TEST_CASE("split_dataset and subset_shuffled") {
  Dataset data = make_xor(25, 0.2, 31);  // 100 samples
  auto [rest, holdout] = split_dataset(data, 0.25, 32);
  CHECK(rest.size() == 75);
  CHECK(holdout.size() == 25);
  CHECK(rest.feature_dim == 2);
  CHECK(holdout.class_count == 2);

  // Union preserved: sort all first coordinates and compare.
  std::vector<double> xs;
  for (const Sample& s : rest.samples) xs.push_back(s.features[0]);
  for (const Sample& s : holdout.samples) xs.push_back(s.features[0]);
  std::vector<double> orig;
  for (const Sample& s : data.samples) orig.push_back(s.features[0]);
  std::sort(xs.begin(), xs.end());
  std::sort(orig.begin(), orig.end());
  CHECK(xs == orig);

  auto [rest2, holdout2] = split_dataset(data, 0.25, 32);
  for (size_t i = 0; i < rest.samples.size(); ++i)
    CHECK(rest.samples[i].features == rest2.samples[i].features);

  Dataset five = subset_shuffled(data, 5, 33);
  CHECK(five.size() == 5);
  Dataset all = subset_shuffled(data, 0, 33);
  CHECK(all.size() == 100);
  Dataset five2 = subset_shuffled(data, 5, 33);
  for (size_t i = 0; i < 5; ++i)
    CHECK(five.samples[i].features == five2.samples[i].features);

  CHECK_THROWS_AS((void)split_dataset(data, 1.5, 1), std::invalid_argument);
}
