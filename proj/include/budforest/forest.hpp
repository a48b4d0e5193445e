#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "budforest/dataset.hpp"
#include "budforest/training.hpp"
#include "budforest/tree.hpp"

namespace budforest {

struct LayerSpec {
  int tree_count = 1;
  TreeVariant variant = TreeVariant::budding;
  int max_depth = 5;
  int filters_per_node = 1;
};

// Layer-wise forest. Layer 0 trees read the raw input; every later layer
// reads the previous layer's class distributions concatenated with the
// raw input, so layer l > 0 has input dimension
// input_dim + class_count * tree_count(l-1).
struct ForestModel {
  int input_dim = 0;
  int class_count = 0;
  std::vector<LayerSpec> specs;
  std::vector<std::vector<Tree>> layers;

  int layer_input_dim(int layer) const;
};

struct Prediction {
  std::vector<double> distribution;  // sums to 1
  int label = 0;                     // argmax, lowest index on ties
};

struct EvalResult {
  double accuracy = 0.0;
  // confusion[true_class][predicted_class]
  std::vector<std::vector<long long>> confusion;
};

// size draws uniformly with replacement, order-deterministic given seed.
Dataset bootstrap_sample(const Dataset& data, std::size_t size, uint64_t seed);

// softmax of the tree's forward scores.
std::vector<double> tree_distribution(const Tree& tree,
                                      std::span<const double> x);

// [distribution(tree_0), ..., distribution(tree_k-1), x_original].
// layer_input is what the trees consume; x_original is always the raw
// input vector.
std::vector<double> layer_features(const std::vector<Tree>& layer,
                                   std::span<const double> layer_input,
                                   std::span<const double> x_original);

struct TreeTrainRecord {
  int layer = 0;
  int tree = 0;
  double final_train_loss = 0.0;
};

// Layer-by-layer training. Each tree trains independently on its own
// bootstrap of the current representation; per-tree streams derive from
// mix_seed(seed, layer, tree) (see rng.hpp), so any single tree is
// reproducible in isolation. Trees within a layer may train concurrently
// (workers > 1) with results identical to the sequential path.
ForestModel train_forest(const Dataset& train,
                         const std::vector<LayerSpec>& specs,
                         const TrainConfig& tconfig, uint64_t seed,
                         int workers = 1,
                         std::vector<TreeTrainRecord>* records = nullptr);

// Propagate through all but the last layer, then average the final
// layer's distributions.
Prediction predict(const ForestModel& model, std::span<const double> x);

EvalResult evaluate(const ForestModel& model, const Dataset& data,
                    int workers = 1);

ParamCount count_parameter_groups(const ForestModel& model);
long long count_parameters(const ForestModel& model);

// Closed-form count for complete trees built from specs, without
// constructing a model.
ParamCount count_parameter_groups(int input_dim, int class_count,
                                  const std::vector<LayerSpec>& specs);

}  // namespace budforest
