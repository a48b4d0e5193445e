#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "budforest/dataset.hpp"

namespace budforest {

enum class ParseErrorKind { bad_magic, truncated, trailing_bytes, bad_label };

struct ParseError : std::runtime_error {
  ParseErrorKind kind;
  ParseError(ParseErrorKind k, const std::string& what)
      : std::runtime_error(what), kind(k) {}
};

// Parsed IDX image payload; pixels are row-major, scaled into [0,1].
struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> pixels;
};

// IDX containers: 4-byte big-endian magic (0x00000803 images, 0x00000801
// labels), big-endian counts, then raw unsigned bytes.
IdxImages parse_idx_images(std::span<const unsigned char> bytes);
std::vector<int> parse_idx_labels(std::span<const unsigned char> bytes);

std::vector<unsigned char> serialize_idx_images(const IdxImages& images);
std::vector<unsigned char> serialize_idx_labels(const std::vector<int>& labels);

Dataset make_image_dataset(const IdxImages& images,
                           const std::vector<int>& labels,
                           int class_count = 10);

// Reads a file, inflating transparently when it is gzip-compressed.
std::vector<unsigned char> read_file_maybe_gzip(const std::string& path);

// Conventional file names (train-images-idx3-ubyte / t10k-...), with .gz
// variants accepted.
Dataset load_mnist_dir(const std::string& dir, bool train);

struct AugmentConfig {
  int max_shift_px = 2;
  double max_rotation_deg = 15.0;
  double max_shear = 0.1;
  int copies_per_sample = 1;
  uint64_t seed = 0;
};

// One random affine transform (shift, then rotation, then shear, the
// latter two about the image center), bilinear resampling, zero fill,
// output clamped to [0,1]. Requires a square image.
Sample augment(const Sample& sample, const AugmentConfig& config,
               std::mt19937_64& rng);

// Originals followed by copies_per_sample transformed copies of each
// sample; copy (i, j) uses its own stream mix_seed(seed, i, j).
Dataset build_augmented_dataset(const Dataset& data,
                                const AugmentConfig& config);

// Two Gaussian clusters at (-2,0) / (+2,0), labeled by cluster.
Dataset make_blobs(int n_per_cluster, double noise, uint64_t seed);

// Four Gaussian clusters at (±2,±2); label = XOR of the sign bits.
Dataset make_xor(int n_per_cluster, double noise, uint64_t seed);

// Seeded shuffle, then split off the trailing fraction as the holdout.
// Returns (rest, holdout).
std::pair<Dataset, Dataset> split_dataset(const Dataset& data,
                                          double holdout_fraction,
                                          uint64_t seed);

// First n samples after a seeded shuffle (n = 0 keeps everything).
Dataset subset_shuffled(const Dataset& data, std::size_t n, uint64_t seed);

}  // namespace budforest
