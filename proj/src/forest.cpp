#include "budforest/forest.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "budforest/parallel.hpp"
#include "budforest/rng.hpp"

namespace budforest {

int ForestModel::layer_input_dim(int layer) const {
  if (layer < 0 || (size_t)layer >= specs.size())
    throw std::out_of_range("layer index " + std::to_string(layer) +
                            " out of range");
  if (layer == 0) return input_dim;
  return input_dim + class_count * specs[(size_t)layer - 1].tree_count;
}

Dataset bootstrap_sample(const Dataset& data, std::size_t size,
                         uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("bootstrap of empty dataset");
  Dataset out;
  out.feature_dim = data.feature_dim;
  out.class_count = data.class_count;
  out.samples.reserve(size);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t i = 0; i < size; ++i)
    out.samples.push_back(data.samples[pick(rng)]);
  return out;
}

std::vector<double> tree_distribution(const Tree& tree,
                                      std::span<const double> x) {
  return softmax(forward(tree, x).scores);
}

std::vector<double> layer_features(const std::vector<Tree>& layer,
                                   std::span<const double> layer_input,
                                   std::span<const double> x_original) {
  std::vector<double> out;
  std::size_t classes = layer.empty() ? 0 : (size_t)layer[0].class_count;
  out.reserve(classes * layer.size() + x_original.size());
  for (const Tree& tree : layer) {
    std::vector<double> dist = tree_distribution(tree, layer_input);
    out.insert(out.end(), dist.begin(), dist.end());
  }
  out.insert(out.end(), x_original.begin(), x_original.end());
  return out;
}

namespace {

void check_forest_inputs(const Dataset& train,
                         const std::vector<LayerSpec>& specs, int workers) {
  if (train.empty()) throw std::invalid_argument("empty training set");
  if (train.feature_dim <= 0) throw std::invalid_argument("bad feature_dim");
  if (train.class_count <= 0) throw std::invalid_argument("bad class_count");
  if (specs.empty()) throw std::invalid_argument("no layers specified");
  for (const LayerSpec& s : specs) {
    if (s.tree_count <= 0) throw std::invalid_argument("tree_count must be positive");
    if (s.max_depth < 0) throw std::invalid_argument("max_depth must be non-negative");
    if (s.filters_per_node <= 0)
      throw std::invalid_argument("filters_per_node must be positive");
  }
  if (workers <= 0) throw std::invalid_argument("workers must be positive");
}

}  // namespace

ForestModel train_forest(const Dataset& train,
                         const std::vector<LayerSpec>& specs,
                         const TrainConfig& tconfig, uint64_t seed,
                         int workers, std::vector<TreeTrainRecord>* records) {
  check_forest_inputs(train, specs, workers);

  ForestModel model;
  model.input_dim = train.feature_dim;
  model.class_count = train.class_count;
  model.specs = specs;
  model.layers.resize(specs.size());

  // Representation seen by the current layer; starts as the raw input.
  Dataset current = train;

  for (std::size_t l = 0; l < specs.size(); ++l) {
    const LayerSpec& spec = specs[l];
    const int dim = current.feature_dim;
    std::vector<Tree>& layer = model.layers[l];
    layer.resize((size_t)spec.tree_count);
    std::vector<double> final_losses((size_t)spec.tree_count, 0.0);

    parallel_for((size_t)spec.tree_count, workers,
                 [&](std::size_t begin, std::size_t end) {
                   for (std::size_t t = begin; t < end; ++t) {
                     uint64_t tree_seed = mix_seed(seed, (uint64_t)l, t);
                     layer[t] = make_complete_tree(
                         spec.variant, dim, model.class_count, spec.max_depth,
                         spec.filters_per_node, mix_seed(tree_seed, kSeedInit));
                     Dataset boot = bootstrap_sample(
                         current, current.size(),
                         mix_seed(tree_seed, kSeedBootstrap));
                     TrainConfig cfg = tconfig;
                     cfg.seed = mix_seed(tree_seed, kSeedShuffle);
                     std::vector<double> log = train_tree(layer[t], boot, cfg);
                     final_losses[t] = log.empty() ? 0.0 : log.back();
                   }
                 });

    if (records)
      for (int t = 0; t < spec.tree_count; ++t)
        records->push_back({(int)l, t, final_losses[(size_t)t]});

    if (l + 1 < specs.size()) {
      Dataset next;
      next.class_count = current.class_count;
      next.feature_dim = model.input_dim + model.class_count * spec.tree_count;
      next.samples.resize(current.size());
      parallel_for(current.size(), workers,
                   [&](std::size_t begin, std::size_t end) {
                     for (std::size_t i = begin; i < end; ++i) {
                       next.samples[i].label = current.samples[i].label;
                       next.samples[i].features =
                           layer_features(layer, current.samples[i].features,
                                          train.samples[i].features);
                     }
                   });
      current = std::move(next);
    }
  }
  return model;
}

Prediction predict(const ForestModel& model, std::span<const double> x) {
  if ((int)x.size() != model.input_dim)
    throw std::invalid_argument("input length " + std::to_string(x.size()) +
                                " does not match model input_dim " +
                                std::to_string(model.input_dim));
  if (model.layers.empty()) throw std::invalid_argument("model has no layers");

  std::vector<double> rep(x.begin(), x.end());
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l)
    rep = layer_features(model.layers[l], rep, x);

  const std::vector<Tree>& last = model.layers.back();
  Prediction pred;
  pred.distribution.assign((size_t)model.class_count, 0.0);
  for (const Tree& tree : last) {
    std::vector<double> dist = tree_distribution(tree, rep);
    for (std::size_t c = 0; c < dist.size(); ++c)
      pred.distribution[c] += dist[c];
  }
  for (double& v : pred.distribution) v /= (double)last.size();
  pred.label = (int)(std::max_element(pred.distribution.begin(),
                                      pred.distribution.end()) -
                     pred.distribution.begin());
  return pred;
}

EvalResult evaluate(const ForestModel& model, const Dataset& data,
                    int workers) {
  if (data.empty()) throw std::invalid_argument("empty evaluation set");
  if (workers <= 0) throw std::invalid_argument("workers must be positive");
  const std::size_t n = data.size();
  const std::size_t classes = (size_t)model.class_count;

  std::vector<int> predicted(n, 0);
  parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      predicted[i] = predict(model, data.samples[i].features).label;
  });

  EvalResult result;
  result.confusion.assign(classes, std::vector<long long>(classes, 0));
  long long hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int truth = data.samples[i].label;
    if (truth < 0 || (size_t)truth >= classes)
      throw std::invalid_argument("label out of range for model classes");
    result.confusion[(size_t)truth][(size_t)predicted[i]]++;
    if (truth == predicted[i]) hits++;
  }
  result.accuracy = (double)hits / (double)n;
  return result;
}

ParamCount count_parameter_groups(const ForestModel& model) {
  ParamCount total;
  for (const auto& layer : model.layers)
    for (const Tree& tree : layer) {
      ParamCount c = count_parameter_groups(tree);
      total.gating += c.gating;
      total.leafness += c.leafness;
      total.payoff += c.payoff;
    }
  return total;
}

long long count_parameters(const ForestModel& model) {
  return count_parameter_groups(model).total();
}

ParamCount count_parameter_groups(int input_dim, int class_count,
                                  const std::vector<LayerSpec>& specs) {
  ParamCount total;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const LayerSpec& spec = specs[l];
    long long dim = l == 0 ? input_dim
                           : input_dim + (long long)class_count *
                                             specs[l - 1].tree_count;
    long long inner = (1LL << spec.max_depth) - 1;
    long long nodes = (1LL << (spec.max_depth + 1)) - 1;
    long long banks = spec.variant == TreeVariant::distributed ? 2 : 1;
    long long per_tree_gating =
        inner * banks * spec.filters_per_node * (dim + 1);
    total.gating += spec.tree_count * per_tree_gating;
    total.leafness += spec.tree_count * inner;
    total.payoff += spec.tree_count * nodes * (long long)class_count;
  }
  return total;
}

}  // namespace budforest
