#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "budforest/dataset.hpp"
#include "budforest/tree.hpp"

namespace budforest {

enum class ParamFamily { gating, leafness, payoff };

struct FilterGrad {
  std::vector<double> weights;
  double bias = 0.0;
};

// Per-node gradient slots, shape-congruent with the node's trainable
// scalars: gating banks and the leafness logit exist only on inner nodes.
struct NodeGrad {
  std::vector<FilterGrad> gating;
  std::vector<FilterGrad> gating2;
  double leafness_logit = 0.0;
  std::vector<double> payoff;
};

// Gradient accumulator mirroring a tree's trainable parameters, one node
// per preorder position.
struct GradBuffer {
  std::vector<NodeGrad> nodes;

  static GradBuffer like(const Tree& tree);
  void zero();
  void add(const GradBuffer& other);
  void scale(double factor);
};

// One trainable scalar paired with its slot in a GradBuffer. zip_params
// walks tree and buffer in the canonical order (preorder; per inner node:
// bank-1 filters as w0..wd-1,bias each, then bank 2, then the leafness
// logit, then the payoff; leaves: payoff only) and throws
// std::invalid_argument if the shapes disagree.
struct ParamSlot {
  double* param = nullptr;
  double* slot = nullptr;
  ParamFamily family = ParamFamily::payoff;
  Node* node = nullptr;  // owning node, for per-node masking
};

std::vector<ParamSlot> zip_params(Tree& tree, GradBuffer& buffer);

// All trainable scalars in the canonical order. Handy for exact
// parameter comparisons.
std::vector<double> collect_parameters(const Tree& tree);

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  int batch_size = 64;
  int epochs = 20;
  uint64_t seed = 0;
  double lr_decay_factor = 0.5;  // learning rate multiplier ...
  int lr_decay_every = 8;        // ... applied every this many epochs
};

struct GrowthConfig {
  int grow_epochs = 5;
  double gain_threshold = 1e-3;     // relative validation-loss improvement
  double validation_fraction = 0.1; // for callers that split one dataset
  int max_depth = 5;
};

// Softmax with max-subtraction.
std::vector<double> softmax(std::span<const double> scores);

// Cross-entropy of softmax(scores) against the label.
double loss(std::span<const double> scores, int label);

// Analytic gradients of loss(forward(tree, x), label) with respect to
// every trainable scalar, accumulated into `acc` (caller zeroes when a
// fresh gradient is wanted). Returns the loss. The tree is not modified.
double backward_into(const Tree& tree, std::span<const double> x, int label,
                     GradBuffer& acc);

std::pair<double, GradBuffer> backward(const Tree& tree,
                                       std::span<const double> x, int label);

// Central finite differences (L(p+h) - L(p-h)) / 2h per trainable scalar.
// Restores every parameter bit-exactly before returning.
GradBuffer finite_difference_grad(Tree& tree, std::span<const double> x,
                                  int label, double step);

// Classic momentum update, in place: v <- momentum*v - lr*g; p <- p + v.
void sgd_step(Tree& tree, const GradBuffer& grads, GradBuffer& velocity,
              const TrainConfig& config);

// Mean loss over a dataset under the tree's own forward pass.
double mean_loss(const Tree& tree, const Dataset& data);

// Mini-batch SGD with per-epoch seeded shuffling. Batch gradients are
// means, so learning_rate does not depend on batch size. Returns the
// per-epoch mean training loss.
std::vector<double> train_tree(Tree& tree, const Dataset& train,
                               const TrainConfig& config);

// Greedy soft-tree construction: start from one leaf fit to the data,
// then sweep the structural leaves breadth-first, tentatively splitting
// each and keeping the split only when the relative validation-loss
// improvement exceeds config.gain_threshold. Candidate training touches
// only the new node's parameters.
Tree grow_soft_tree(const Dataset& train, const Dataset& val,
                    const TrainConfig& tconfig, const GrowthConfig& gconfig);

}  // namespace budforest
