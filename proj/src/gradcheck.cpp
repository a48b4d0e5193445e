#include "budforest/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "budforest/rng.hpp"
#include "budforest/training.hpp"
#include "budforest/tree.hpp"

namespace budforest {

namespace {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

void randomize_tree(Tree& tree, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> bias(0.0, 0.5);
  for (Node* n : preorder_nodes(tree)) {
    for (double& p : n->payoff) p = unit(rng);
    if (!n->is_leaf()) {
      n->leafness_logit = unit(rng);
      for (GatingFilter& f : n->gating) f.bias = bias(rng);
      for (GatingFilter& f : n->gating2) f.bias = bias(rng);
    }
  }
}

}  // namespace

GradCheckReport run_gradient_check(const GradCheckConfig& config) {
  if (config.trials <= 0) throw std::invalid_argument("trials must be positive");
  if (config.step <= 0.0) throw std::invalid_argument("step must be positive");
  if (config.tolerance <= 0.0)
    throw std::invalid_argument("tolerance must be positive");

  GradCheckReport report;
  report.trials = config.trials;

  for (int trial = 0; trial < config.trials; ++trial) {
    std::mt19937_64 rng(mix_seed(config.seed, (uint64_t)trial));
    std::uniform_int_distribution<int> depth_dist(0, 3);
    std::uniform_int_distribution<int> dim_dist(1, 10);
    std::uniform_int_distribution<int> class_dist(2, 5);
    std::uniform_int_distribution<int> coin(0, 1);

    int depth = depth_dist(rng);
    int dim = dim_dist(rng);
    int classes = class_dist(rng);
    int filters = coin(rng) ? 3 : 1;
    TreeVariant variant =
        coin(rng) ? TreeVariant::distributed : TreeVariant::budding;

    Tree tree = make_complete_tree(variant, dim, classes, depth, filters,
                                   mix_seed(config.seed, (uint64_t)trial, 1));
    randomize_tree(tree, rng);

    std::uniform_real_distribution<double> input_dist(-1.0, 1.0);
    std::vector<double> x((size_t)dim);
    for (double& v : x) v = input_dist(rng);
    int label = std::uniform_int_distribution<int>(0, classes - 1)(rng);

    GradBuffer analytic = GradBuffer::like(tree);
    backward_into(tree, x, label, analytic);
    GradBuffer fd = finite_difference_grad(tree, x, label, config.step);

    std::vector<ParamSlot> a = zip_params(tree, analytic);
    std::vector<ParamSlot> f = zip_params(tree, fd);

    if (config.corrupt_delta != 0.0 && !a.empty()) *a[0].slot += config.corrupt_delta;

    std::vector<ParamSlot> coarse;
    GradBuffer fd_coarse;
    for (size_t i = 0; i < a.size(); ++i) {
      double rel = relative_error(*a[i].slot, *f[i].slot);
      if (rel >= config.tolerance) {
        if (coarse.empty()) {
          fd_coarse =
              finite_difference_grad(tree, x, label, 10.0 * config.step);
          coarse = zip_params(tree, fd_coarse);
        }
        rel = std::min(rel, relative_error(*a[i].slot, *coarse[i].slot));
      }
      report.max_rel = std::max(report.max_rel, rel);
      switch (a[i].family) {
        case ParamFamily::gating:
          report.max_rel_gating = std::max(report.max_rel_gating, rel);
          break;
        case ParamFamily::leafness:
          report.max_rel_leafness = std::max(report.max_rel_leafness, rel);
          break;
        case ParamFamily::payoff:
          report.max_rel_payoff = std::max(report.max_rel_payoff, rel);
          break;
      }
    }
  }

  report.passed = report.max_rel < config.tolerance;
  return report;
}

}  // namespace budforest
