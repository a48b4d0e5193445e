#include "budforest/tree.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace budforest {

namespace {

double affine_score(const GatingFilter& filter, std::span<const double> x) {
  if (filter.weights.size() != x.size())
    throw std::invalid_argument("gating filter dimension mismatch");
  double s = filter.bias;
  for (size_t i = 0; i < x.size(); ++i) s += filter.weights[i] * x[i];
  return s;
}

void check_input(const Tree& tree, std::span<const double> x) {
  if ((int)x.size() != tree.input_dim)
    throw std::invalid_argument("input length does not match tree input_dim");
}

void check_variant(const Tree& tree, TreeVariant expected) {
  if (tree.variant != expected)
    throw std::invalid_argument("forward pass called on the wrong tree variant");
}

std::vector<double> eval_node(const Node& n, TreeVariant variant,
                              std::span<const double> x) {
  if (n.is_leaf()) return n.payoff;
  GateChoice gc = multi_gate(n.gating, x);
  double g = gc.probability;
  double h;
  if (variant == TreeVariant::distributed)
    h = multi_gate(n.gating2, x).probability;
  else
    h = 1.0 - g;
  double gamma = variant == TreeVariant::soft ? 0.0 : node_gamma(n);

  std::vector<double> yl = eval_node(*n.left, variant, x);
  std::vector<double> yr = eval_node(*n.right, variant, x);
  std::vector<double> out(n.payoff.size());
  for (size_t c = 0; c < out.size(); ++c)
    out[c] = (1.0 - gamma) * (g * yl[c] + h * yr[c]) + gamma * n.payoff[c];
  return out;
}

void count_node(const Node& n, int input_dim, ParamCount& counts) {
  if (n.is_leaf()) {
    counts.payoff += (long long)n.payoff.size();
    return;
  }
  long long per_filter = input_dim + 1;
  counts.gating += (long long)(n.gating.size() + n.gating2.size()) * per_filter;
  counts.leafness += 1;
  counts.payoff += (long long)n.payoff.size();
  count_node(*n.left, input_dim, counts);
  count_node(*n.right, input_dim, counts);
}

void prune_rec(Node& n, double threshold) {
  if (n.is_leaf()) return;
  if (node_gamma(n) >= threshold) {
    n.left.reset();
    n.right.reset();
    n.gating.clear();
    n.gating2.clear();
    n.fixed_leaf = true;
    return;
  }
  prune_rec(*n.left, threshold);
  prune_rec(*n.right, threshold);
}

Node make_node_rec(TreeVariant variant, int input_dim, int class_count,
                   int depth, int max_depth, int filters,
                   std::mt19937_64& rng) {
  Node n;
  n.payoff.assign(class_count, 0.0);
  if (depth == max_depth) {
    n.fixed_leaf = true;
    return n;
  }
  std::normal_distribution<double> weight_dist(0.0,
                                               1.0 / std::sqrt((double)input_dim));
  auto draw_bank = [&] {
    std::vector<GatingFilter> bank(filters);
    for (auto& f : bank) {
      f.weights.resize(input_dim);
      for (auto& w : f.weights) w = weight_dist(rng);
      f.bias = 0.0;
    }
    return bank;
  };
  n.gating = draw_bank();
  if (variant == TreeVariant::distributed) n.gating2 = draw_bank();
  n.leafness_logit = 0.0;
  n.left = std::make_unique<Node>(make_node_rec(variant, input_dim, class_count,
                                                depth + 1, max_depth, filters,
                                                rng));
  n.right = std::make_unique<Node>(make_node_rec(variant, input_dim,
                                                 class_count, depth + 1,
                                                 max_depth, filters, rng));
  return n;
}

template <typename NodeT, typename Out>
void preorder_rec(NodeT& n, Out& out) {
  out.push_back(&n);
  if (!n.is_leaf()) {
    preorder_rec(*n.left, out);
    preorder_rec(*n.right, out);
  }
}

int depth_rec(const Node& n) {
  if (n.is_leaf()) return 0;
  return 1 + std::max(depth_rec(*n.left), depth_rec(*n.right));
}

}  // namespace

Node::Node(const Node& other)
    : gating(other.gating),
      gating2(other.gating2),
      leafness_logit(other.leafness_logit),
      fixed_leaf(other.fixed_leaf),
      payoff(other.payoff) {
  if (other.left) left = std::make_unique<Node>(*other.left);
  if (other.right) right = std::make_unique<Node>(*other.right);
}

Node& Node::operator=(const Node& other) {
  if (this == &other) return *this;
  Node copy(other);
  *this = std::move(copy);
  return *this;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double node_gamma(const Node& node) {
  return node.fixed_leaf ? 1.0 : sigmoid(node.leafness_logit);
}

double gate(const GatingFilter& filter, std::span<const double> x) {
  return sigmoid(affine_score(filter, x));
}

GateChoice multi_gate(const std::vector<GatingFilter>& filters,
                      std::span<const double> x) {
  if (filters.empty())
    throw std::invalid_argument("multi_gate requires at least one filter");
  int best = 0;
  double best_score = affine_score(filters[0], x);
  for (int k = 1; k < (int)filters.size(); ++k) {
    double s = affine_score(filters[k], x);
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return GateChoice{sigmoid(best_score), best};
}

TreeOutput forward_soft(const Tree& tree, std::span<const double> x) {
  check_variant(tree, TreeVariant::soft);
  check_input(tree, x);
  return TreeOutput{eval_node(tree.root, TreeVariant::soft, x)};
}

TreeOutput forward_budding(const Tree& tree, std::span<const double> x) {
  check_variant(tree, TreeVariant::budding);
  check_input(tree, x);
  return TreeOutput{eval_node(tree.root, TreeVariant::budding, x)};
}

TreeOutput forward_distributed(const Tree& tree, std::span<const double> x) {
  check_variant(tree, TreeVariant::distributed);
  check_input(tree, x);
  return TreeOutput{eval_node(tree.root, TreeVariant::distributed, x)};
}

TreeOutput forward(const Tree& tree, std::span<const double> x) {
  switch (tree.variant) {
    case TreeVariant::soft:
      return forward_soft(tree, x);
    case TreeVariant::budding:
      return forward_budding(tree, x);
    case TreeVariant::distributed:
      return forward_distributed(tree, x);
  }
  throw std::invalid_argument("unknown tree variant");
}

ParamCount count_parameter_groups(const Tree& tree) {
  ParamCount counts;
  count_node(tree.root, tree.input_dim, counts);
  return counts;
}

long long count_parameters(const Tree& tree) {
  return count_parameter_groups(tree).total();
}

Tree prune_hard(const Tree& tree, double threshold) {
  if (!(threshold > 0.5 && threshold <= 1.0))
    throw std::invalid_argument("prune threshold must be in (0.5, 1]");
  Tree pruned = tree;
  prune_rec(pruned.root, threshold);
  return pruned;
}

Tree make_complete_tree(TreeVariant variant, int input_dim, int class_count,
                        int max_depth, int filters_per_node, uint64_t seed) {
  if (input_dim < 1 || class_count < 1 || max_depth < 0 ||
      filters_per_node < 1)
    throw std::invalid_argument("bad tree shape arguments");
  Tree tree;
  tree.variant = variant;
  tree.input_dim = input_dim;
  tree.class_count = class_count;
  tree.max_depth = max_depth;
  tree.filters_per_node = filters_per_node;
  std::mt19937_64 rng(seed);
  tree.root = make_node_rec(variant, input_dim, class_count, 0, max_depth,
                            filters_per_node, rng);
  return tree;
}

Tree make_leaf_tree(int input_dim, int class_count, int max_depth) {
  Tree tree;
  tree.variant = TreeVariant::soft;
  tree.input_dim = input_dim;
  tree.class_count = class_count;
  tree.max_depth = max_depth;
  tree.filters_per_node = 1;
  tree.root.payoff.assign(class_count, 0.0);
  tree.root.fixed_leaf = max_depth == 0;
  return tree;
}

std::vector<Node*> preorder_nodes(Tree& tree) {
  std::vector<Node*> out;
  preorder_rec(tree.root, out);
  return out;
}

std::vector<const Node*> preorder_nodes(const Tree& tree) {
  std::vector<const Node*> out;
  preorder_rec(tree.root, out);
  return out;
}

int tree_depth(const Tree& tree) { return depth_rec(tree.root); }

}  // namespace budforest
