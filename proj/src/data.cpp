#include "budforest/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "budforest/rng.hpp"

namespace budforest {

namespace {

constexpr uint32_t kImageMagic = 0x00000803u;
constexpr uint32_t kLabelMagic = 0x00000801u;

uint32_t read_u32be(std::span<const unsigned char> bytes, size_t offset) {
  return ((uint32_t)bytes[offset] << 24) | ((uint32_t)bytes[offset + 1] << 16) |
         ((uint32_t)bytes[offset + 2] << 8) | (uint32_t)bytes[offset + 3];
}

void push_u32be(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back((unsigned char)(v >> 24));
  out.push_back((unsigned char)(v >> 16));
  out.push_back((unsigned char)(v >> 8));
  out.push_back((unsigned char)v);
}

uint32_t read_magic(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4)
    throw ParseError(ParseErrorKind::truncated, "idx stream shorter than magic");
  return read_u32be(bytes, 0);
}

}  // namespace

IdxImages parse_idx_images(std::span<const unsigned char> bytes) {
  if (read_magic(bytes) != kImageMagic)
    throw ParseError(ParseErrorKind::bad_magic, "not an idx image stream");
  if (bytes.size() < 16)
    throw ParseError(ParseErrorKind::truncated, "idx image header truncated");
  IdxImages img;
  img.count = (int)read_u32be(bytes, 4);
  img.rows = (int)read_u32be(bytes, 8);
  img.cols = (int)read_u32be(bytes, 12);
  size_t payload = (size_t)img.count * (size_t)img.rows * (size_t)img.cols;
  if (bytes.size() < 16 + payload)
    throw ParseError(ParseErrorKind::truncated, "idx image payload truncated");
  if (bytes.size() > 16 + payload)
    throw ParseError(ParseErrorKind::trailing_bytes,
                     "idx image stream has trailing bytes");
  img.pixels.reserve(payload);
  for (size_t i = 0; i < payload; ++i)
    img.pixels.push_back((double)bytes[16 + i] / 255.0);
  return img;
}

std::vector<int> parse_idx_labels(std::span<const unsigned char> bytes) {
  if (read_magic(bytes) != kLabelMagic)
    throw ParseError(ParseErrorKind::bad_magic, "not an idx label stream");
  if (bytes.size() < 8)
    throw ParseError(ParseErrorKind::truncated, "idx label header truncated");
  size_t count = read_u32be(bytes, 4);
  if (bytes.size() < 8 + count)
    throw ParseError(ParseErrorKind::truncated, "idx label payload truncated");
  if (bytes.size() > 8 + count)
    throw ParseError(ParseErrorKind::trailing_bytes,
                     "idx label stream has trailing bytes");
  std::vector<int> labels;
  labels.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    unsigned char b = bytes[8 + i];
    if (b > 9)
      throw ParseError(ParseErrorKind::bad_label, "label byte exceeds 9");
    labels.push_back((int)b);
  }
  return labels;
}

std::vector<unsigned char> serialize_idx_images(const IdxImages& images) {
  std::vector<unsigned char> out;
  out.reserve(16 + images.pixels.size());
  push_u32be(out, kImageMagic);
  push_u32be(out, (uint32_t)images.count);
  push_u32be(out, (uint32_t)images.rows);
  push_u32be(out, (uint32_t)images.cols);
  for (double p : images.pixels) {
    long v = std::lround(std::clamp(p, 0.0, 1.0) * 255.0);
    out.push_back((unsigned char)v);
  }
  return out;
}

std::vector<unsigned char> serialize_idx_labels(const std::vector<int>& labels) {
  std::vector<unsigned char> out;
  out.reserve(8 + labels.size());
  push_u32be(out, kLabelMagic);
  push_u32be(out, (uint32_t)labels.size());
  for (int l : labels) out.push_back((unsigned char)l);
  return out;
}

Dataset make_image_dataset(const IdxImages& images,
                           const std::vector<int>& labels, int class_count) {
  if ((size_t)images.count != labels.size())
    throw std::invalid_argument("image and label counts differ");
  Dataset data;
  data.feature_dim = images.rows * images.cols;
  data.class_count = class_count;
  data.samples.reserve(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count)
      throw std::invalid_argument("label outside class range");
    Sample s;
    s.label = labels[i];
    auto begin = images.pixels.begin() + (ptrdiff_t)(i * (size_t)data.feature_dim);
    s.features.assign(begin, begin + data.feature_dim);
    data.samples.push_back(std::move(s));
  }
  return data;
}

std::vector<unsigned char> read_file_maybe_gzip(const std::string& path) {
  // gzread inflates gzip streams and passes plain bytes through untouched.
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  bool failed = n < 0;
  gzclose(f);
  if (failed) throw std::runtime_error("error while reading " + path);
  return out;
}

namespace {

std::string locate(const std::string& dir, const std::string& name) {
  namespace fs = std::filesystem;
  fs::path plain = fs::path(dir) / name;
  if (fs::exists(plain)) return plain.string();
  fs::path packed = fs::path(dir) / (name + ".gz");
  if (fs::exists(packed)) return packed.string();
  throw std::runtime_error("missing dataset file " + plain.string() +
                           " (also tried .gz)");
}

}  // namespace

Dataset load_mnist_dir(const std::string& dir, bool train) {
  std::string prefix = train ? "train" : "t10k";
  IdxImages images = parse_idx_images(
      read_file_maybe_gzip(locate(dir, prefix + "-images-idx3-ubyte")));
  std::vector<int> labels = parse_idx_labels(
      read_file_maybe_gzip(locate(dir, prefix + "-labels-idx1-ubyte")));
  return make_image_dataset(images, labels);
}

namespace {

double bilinear_at(const std::vector<double>& img, int side, double x,
                   double y) {
  int x0 = (int)std::floor(x);
  int y0 = (int)std::floor(y);
  double fx = x - x0;
  double fy = y - y0;
  auto at = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= side || yy >= side) return 0.0;
    return img[(size_t)yy * side + xx];
  };
  return (1 - fx) * (1 - fy) * at(y0, x0) + fx * (1 - fy) * at(y0, x0 + 1) +
         (1 - fx) * fy * at(y0 + 1, x0) + fx * fy * at(y0 + 1, x0 + 1);
}

}  // namespace

Sample augment(const Sample& sample, const AugmentConfig& config,
               std::mt19937_64& rng) {
  int side = (int)std::lround(std::sqrt((double)sample.features.size()));
  if ((size_t)side * (size_t)side != sample.features.size())
    throw std::invalid_argument("augment needs a square image");
  if (config.max_shift_px < 0 || config.max_rotation_deg < 0.0 ||
      config.max_shear < 0.0)
    throw std::invalid_argument("augment magnitudes must be nonnegative");

  // Draw order is part of the determinism contract: shift x, shift y,
  // rotation, shear.
  double ms = (double)config.max_shift_px;
  std::uniform_real_distribution<double> shift_dist(-ms, ms);
  double sx = shift_dist(rng);
  double sy = shift_dist(rng);
  std::uniform_real_distribution<double> rot_dist(-config.max_rotation_deg,
                                                  config.max_rotation_deg);
  double theta = rot_dist(rng) * std::numbers::pi / 180.0;
  std::uniform_real_distribution<double> shear_dist(-config.max_shear,
                                                    config.max_shear);
  double shear = shear_dist(rng);

  double ctr = (side - 1) / 2.0;
  double ct = std::cos(theta);
  double st = std::sin(theta);

  Sample out;
  out.label = sample.label;
  out.features.assign(sample.features.size(), 0.0);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      // Invert shear, then rotation, then shift (forward order is
      // shift -> rotate -> shear about the center).
      double x3 = c - ctr;
      double y3 = r - ctr;
      double x2 = x3 - shear * y3;
      double y2 = y3;
      double x1 = ct * x2 + st * y2;
      double y1 = -st * x2 + ct * y2;
      double xs = x1 - sx + ctr;
      double ys = y1 - sy + ctr;
      double v = bilinear_at(sample.features, side, xs, ys);
      out.features[(size_t)r * side + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

Dataset build_augmented_dataset(const Dataset& data,
                                const AugmentConfig& config) {
  if (config.copies_per_sample < 0)
    throw std::invalid_argument("copies_per_sample must be >= 0");
  Dataset out;
  out.feature_dim = data.feature_dim;
  out.class_count = data.class_count;
  out.samples = data.samples;
  out.samples.reserve(data.size() * (size_t)(1 + config.copies_per_sample));
  for (size_t i = 0; i < data.size(); ++i) {
    for (int j = 0; j < config.copies_per_sample; ++j) {
      std::mt19937_64 rng(mix_seed(config.seed, (uint64_t)i, (uint64_t)j));
      out.samples.push_back(augment(data.samples[i], config, rng));
    }
  }
  return out;
}

namespace {

Dataset make_clusters(const std::vector<std::pair<double, double>>& centers,
                      const std::vector<int>& labels, int n_per_cluster,
                      double noise, uint64_t seed) {
  if (n_per_cluster < 1) throw std::invalid_argument("n_per_cluster must be >= 1");
  if (noise < 0.0) throw std::invalid_argument("noise must be >= 0");
  Dataset data;
  data.feature_dim = 2;
  data.class_count = 2;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (size_t k = 0; k < centers.size(); ++k) {
    for (int i = 0; i < n_per_cluster; ++i) {
      Sample s;
      s.label = labels[k];
      s.features = {centers[k].first + noise * unit(rng),
                    centers[k].second + noise * unit(rng)};
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

}  // namespace

Dataset make_blobs(int n_per_cluster, double noise, uint64_t seed) {
  return make_clusters({{-2.0, 0.0}, {2.0, 0.0}}, {0, 1}, n_per_cluster, noise,
                       seed);
}

Dataset make_xor(int n_per_cluster, double noise, uint64_t seed) {
  // label = (x > 0) xor (y > 0)
  return make_clusters({{-2.0, -2.0}, {-2.0, 2.0}, {2.0, -2.0}, {2.0, 2.0}},
                       {0, 1, 1, 0}, n_per_cluster, noise, seed);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data,
                                          double holdout_fraction,
                                          uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
    throw std::invalid_argument("holdout_fraction must be in [0, 1)");
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), (size_t)0);
  std::mt19937_64 rng(mix_seed(seed, kSeedShuffle));
  std::shuffle(order.begin(), order.end(), rng);

  size_t holdout_n = (size_t)std::llround(holdout_fraction * (double)data.size());
  holdout_n = std::min(holdout_n, data.size());
  Dataset rest, holdout;
  rest.feature_dim = holdout.feature_dim = data.feature_dim;
  rest.class_count = holdout.class_count = data.class_count;
  for (size_t i = 0; i < data.size(); ++i) {
    Dataset& target = i < data.size() - holdout_n ? rest : holdout;
    target.samples.push_back(data.samples[order[i]]);
  }
  return {std::move(rest), std::move(holdout)};
}

Dataset subset_shuffled(const Dataset& data, std::size_t n, uint64_t seed) {
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), (size_t)0);
  std::mt19937_64 rng(mix_seed(seed, kSeedShuffle));
  std::shuffle(order.begin(), order.end(), rng);
  if (n == 0 || n > data.size()) n = data.size();
  Dataset out;
  out.feature_dim = data.feature_dim;
  out.class_count = data.class_count;
  for (size_t i = 0; i < n; ++i) out.samples.push_back(data.samples[order[i]]);
  return out;
}

}  // namespace budforest
