#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace budforest {

// One sigmoid routing filter: probability = sigmoid(weights . x + bias).
struct GatingFilter {
  std::vector<double> weights;
  double bias = 0.0;
};

// Tree node. Inner nodes carry one bank of F >= 1 gating filters (two
// banks in distributed trees), a leafness logit and a payoff vector.
// Leaves carry only the payoff; fixed leaves act as leafness == 1 exactly.
// Children are both present or both absent.
struct Node {
  std::vector<GatingFilter> gating;   // empty on leaves, size F on inner nodes
  std::vector<GatingFilter> gating2;  // second bank, distributed trees only
  double leafness_logit = 0.0;
  bool fixed_leaf = false;
  std::vector<double> payoff;  // length = class count
  std::unique_ptr<Node> left;
  std::unique_ptr<Node> right;

  Node() = default;
  Node(const Node& other);
  Node& operator=(const Node& other);
  Node(Node&&) noexcept = default;
  Node& operator=(Node&&) noexcept = default;

  bool is_leaf() const { return left == nullptr; }
};

enum class TreeVariant : uint8_t { soft = 0, budding = 1, distributed = 2 };

struct Tree {
  TreeVariant variant = TreeVariant::budding;
  int input_dim = 0;
  int class_count = 0;
  int max_depth = 0;         // root is depth 0; depth-max_depth nodes are fixed leaves
  int filters_per_node = 1;  // F
  Node root;
};

struct TreeOutput {
  std::vector<double> scores;  // unnormalized class scores, length = class count
};

// Numerically stable sigmoid; exact 0/1 at saturated inputs.
double sigmoid(double z);

// Leafness of a node: sigmoid(leafness_logit), or exactly 1 for fixed leaves.
double node_gamma(const Node& node);

// Routing probability sigmoid(w.x + b). Throws std::invalid_argument on a
// dimension mismatch.
double gate(const GatingFilter& filter, std::span<const double> x);

struct GateChoice {
  double probability = 0.0;
  int index = 0;  // which filter won the similarity argmax
};

// Picks the filter whose affine score w.x + b is largest (ties -> lowest
// index) and returns its sigmoid. With one filter this is exactly gate().
GateChoice multi_gate(const std::vector<GatingFilter>& filters,
                      std::span<const double> x);

// Forward passes. Each checks the tree's variant and the input length.
TreeOutput forward_soft(const Tree& tree, std::span<const double> x);
TreeOutput forward_budding(const Tree& tree, std::span<const double> x);
TreeOutput forward_distributed(const Tree& tree, std::span<const double> x);

// Dispatch on tree.variant.
TreeOutput forward(const Tree& tree, std::span<const double> x);

// Trainable-scalar counts split by parameter family.
struct ParamCount {
  long long gating = 0;
  long long leafness = 0;
  long long payoff = 0;
  long long total() const { return gating + leafness + payoff; }
};

ParamCount count_parameter_groups(const Tree& tree);
long long count_parameters(const Tree& tree);

// Copy of the tree where every node with leafness >= threshold becomes a
// fixed leaf and its subtree is dropped. threshold must be in (0.5, 1].
Tree prune_hard(const Tree& tree, double threshold);

// Complete binary tree of the given depth. Gating weights are drawn
// i.i.d. normal with stddev 1/sqrt(input_dim); biases, payoffs and
// leafness logits start at zero (leafness 0.5). Depth-max_depth nodes are
// fixed leaves with no gating.
Tree make_complete_tree(TreeVariant variant, int input_dim, int class_count,
                        int max_depth, int filters_per_node, uint64_t seed);

// Single-leaf soft tree; the starting point for greedy growth.
Tree make_leaf_tree(int input_dim, int class_count, int max_depth);

// Nodes in depth-first preorder (node, left subtree, right subtree). This
// ordering is the canonical one shared by gradients and serialization.
std::vector<Node*> preorder_nodes(Tree& tree);
std::vector<const Node*> preorder_nodes(const Tree& tree);

// Deepest node depth actually present (root = 0).
int tree_depth(const Tree& tree);

}  // namespace budforest
