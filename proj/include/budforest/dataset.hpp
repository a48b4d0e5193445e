#pragma once

#include <cstddef>
#include <vector>

namespace budforest {

struct Sample {
  std::vector<double> features;
  int label = 0;
};

// Flat list of samples with a uniform feature length. feature_dim and
// class_count are authoritative; every sample must conform.
struct Dataset {
  std::vector<Sample> samples;
  int feature_dim = 0;
  int class_count = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

}  // namespace budforest
