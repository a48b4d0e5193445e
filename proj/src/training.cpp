#include "budforest/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

#include "budforest/rng.hpp"

namespace budforest {

namespace {

NodeGrad grad_like(const Node& n) {
  NodeGrad g;
  g.gating.resize(n.gating.size());
  for (size_t i = 0; i < n.gating.size(); ++i)
    g.gating[i].weights.assign(n.gating[i].weights.size(), 0.0);
  g.gating2.resize(n.gating2.size());
  for (size_t i = 0; i < n.gating2.size(); ++i)
    g.gating2[i].weights.assign(n.gating2[i].weights.size(), 0.0);
  g.payoff.assign(n.payoff.size(), 0.0);
  return g;
}

void check_congruent(const NodeGrad& a, const NodeGrad& b) {
  bool ok = a.gating.size() == b.gating.size() &&
            a.gating2.size() == b.gating2.size() &&
            a.payoff.size() == b.payoff.size();
  if (ok) {
    for (size_t i = 0; ok && i < a.gating.size(); ++i)
      ok = a.gating[i].weights.size() == b.gating[i].weights.size();
    for (size_t i = 0; ok && i < a.gating2.size(); ++i)
      ok = a.gating2[i].weights.size() == b.gating2[i].weights.size();
  }
  if (!ok) throw std::invalid_argument("gradient buffers are not shape-congruent");
}

}  // namespace

GradBuffer GradBuffer::like(const Tree& tree) {
  GradBuffer buf;
  for (const Node* n : preorder_nodes(tree)) buf.nodes.push_back(grad_like(*n));
  return buf;
}

void GradBuffer::zero() {
  for (NodeGrad& g : nodes) {
    for (FilterGrad& f : g.gating) {
      std::fill(f.weights.begin(), f.weights.end(), 0.0);
      f.bias = 0.0;
    }
    for (FilterGrad& f : g.gating2) {
      std::fill(f.weights.begin(), f.weights.end(), 0.0);
      f.bias = 0.0;
    }
    g.leafness_logit = 0.0;
    std::fill(g.payoff.begin(), g.payoff.end(), 0.0);
  }
}

void GradBuffer::add(const GradBuffer& other) {
  if (nodes.size() != other.nodes.size())
    throw std::invalid_argument("gradient buffers are not shape-congruent");
  for (size_t i = 0; i < nodes.size(); ++i) {
    check_congruent(nodes[i], other.nodes[i]);
    NodeGrad& a = nodes[i];
    const NodeGrad& b = other.nodes[i];
    for (size_t f = 0; f < a.gating.size(); ++f) {
      for (size_t j = 0; j < a.gating[f].weights.size(); ++j)
        a.gating[f].weights[j] += b.gating[f].weights[j];
      a.gating[f].bias += b.gating[f].bias;
    }
    for (size_t f = 0; f < a.gating2.size(); ++f) {
      for (size_t j = 0; j < a.gating2[f].weights.size(); ++j)
        a.gating2[f].weights[j] += b.gating2[f].weights[j];
      a.gating2[f].bias += b.gating2[f].bias;
    }
    a.leafness_logit += b.leafness_logit;
    for (size_t c = 0; c < a.payoff.size(); ++c) a.payoff[c] += b.payoff[c];
  }
}

void GradBuffer::scale(double factor) {
  for (NodeGrad& g : nodes) {
    for (FilterGrad& f : g.gating) {
      for (double& w : f.weights) w *= factor;
      f.bias *= factor;
    }
    for (FilterGrad& f : g.gating2) {
      for (double& w : f.weights) w *= factor;
      f.bias *= factor;
    }
    g.leafness_logit *= factor;
    for (double& p : g.payoff) p *= factor;
  }
}

std::vector<ParamSlot> zip_params(Tree& tree, GradBuffer& buffer) {
  std::vector<Node*> order = preorder_nodes(tree);
  if (order.size() != buffer.nodes.size())
    throw std::invalid_argument("gradient buffer does not match the tree shape");
  std::vector<ParamSlot> slots;
  for (size_t i = 0; i < order.size(); ++i) {
    Node* n = order[i];
    NodeGrad& g = buffer.nodes[i];
    check_congruent(grad_like(*n), g);
    if (!n->is_leaf()) {
      for (size_t f = 0; f < n->gating.size(); ++f) {
        for (size_t j = 0; j < n->gating[f].weights.size(); ++j)
          slots.push_back({&n->gating[f].weights[j], &g.gating[f].weights[j],
                           ParamFamily::gating, n});
        slots.push_back(
            {&n->gating[f].bias, &g.gating[f].bias, ParamFamily::gating, n});
      }
      for (size_t f = 0; f < n->gating2.size(); ++f) {
        for (size_t j = 0; j < n->gating2[f].weights.size(); ++j)
          slots.push_back({&n->gating2[f].weights[j], &g.gating2[f].weights[j],
                           ParamFamily::gating, n});
        slots.push_back(
            {&n->gating2[f].bias, &g.gating2[f].bias, ParamFamily::gating, n});
      }
      slots.push_back(
          {&n->leafness_logit, &g.leafness_logit, ParamFamily::leafness, n});
    }
    for (size_t c = 0; c < n->payoff.size(); ++c)
      slots.push_back({&n->payoff[c], &g.payoff[c], ParamFamily::payoff, n});
  }
  return slots;
}

std::vector<double> collect_parameters(const Tree& tree) {
  Tree& mut = const_cast<Tree&>(tree);
  GradBuffer scratch = GradBuffer::like(tree);
  std::vector<double> out;
  for (const ParamSlot& s : zip_params(mut, scratch)) out.push_back(*s.param);
  return out;
}

std::vector<double> softmax(std::span<const double> scores) {
  double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double loss(std::span<const double> scores, int label) {
  if (scores.empty()) throw std::invalid_argument("loss on empty score vector");
  if (label < 0 || label >= (int)scores.size())
    throw std::invalid_argument("label out of range");
  double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - m);
  return m + std::log(sum) - scores[label];
}

namespace {

// Forward pass cache, one record per node in preorder.
struct EvalRecord {
  const Node* node = nullptr;
  std::vector<double> y;
  double g = 0.0, h = 0.0;  // chosen gate activations (h = 1-g unless distributed)
  int kg = 0, kh = 0;       // winning filter indices
  double gamma = 0.0;
  size_t left = 0, right = 0;  // cache indices of the children
};

size_t eval_into_cache(const Node& n, TreeVariant variant,
                       std::span<const double> x,
                       std::vector<EvalRecord>& cache) {
  size_t idx = cache.size();
  cache.emplace_back();
  cache[idx].node = &n;
  if (n.is_leaf()) {
    cache[idx].y = n.payoff;
    return idx;
  }
  GateChoice gc = multi_gate(n.gating, x);
  double g = gc.probability;
  double h;
  int kh = 0;
  if (variant == TreeVariant::distributed) {
    GateChoice hc = multi_gate(n.gating2, x);
    h = hc.probability;
    kh = hc.index;
  } else {
    h = 1.0 - g;
  }
  double gamma = variant == TreeVariant::soft ? 0.0 : node_gamma(n);
  size_t li = eval_into_cache(*n.left, variant, x, cache);
  size_t ri = eval_into_cache(*n.right, variant, x, cache);

  EvalRecord& rec = cache[idx];
  rec.g = g;
  rec.h = h;
  rec.kg = gc.index;
  rec.kh = kh;
  rec.gamma = gamma;
  rec.left = li;
  rec.right = ri;
  rec.y.resize(n.payoff.size());
  const std::vector<double>& yl = cache[li].y;
  const std::vector<double>& yr = cache[ri].y;
  for (size_t c = 0; c < rec.y.size(); ++c)
    rec.y[c] = (1.0 - gamma) * (g * yl[c] + h * yr[c]) + gamma * n.payoff[c];
  return idx;
}

void backprop_node(const std::vector<EvalRecord>& cache, size_t idx,
                   TreeVariant variant, std::span<const double> x,
                   const std::vector<double>& u, GradBuffer& acc) {
  const EvalRecord& rec = cache[idx];
  const Node& n = *rec.node;
  NodeGrad& g = acc.nodes[idx];
  if (n.is_leaf()) {
    for (size_t c = 0; c < u.size(); ++c) g.payoff[c] += u[c];
    return;
  }
  const std::vector<double>& yl = cache[rec.left].y;
  const std::vector<double>& yr = cache[rec.right].y;

  for (size_t c = 0; c < u.size(); ++c) g.payoff[c] += rec.gamma * u[c];

  if (variant != TreeVariant::soft) {
    double dot = 0.0;
    for (size_t c = 0; c < u.size(); ++c) {
      double blend = rec.g * yl[c] + rec.h * yr[c];
      dot += u[c] * (n.payoff[c] - blend);
    }
    g.leafness_logit += rec.gamma * (1.0 - rec.gamma) * dot;
  }

  double keep = 1.0 - rec.gamma;
  double dg, dh;
  if (variant == TreeVariant::distributed) {
    double dot_l = 0.0, dot_r = 0.0;
    for (size_t c = 0; c < u.size(); ++c) {
      dot_l += u[c] * yl[c];
      dot_r += u[c] * yr[c];
    }
    dg = keep * rec.g * (1.0 - rec.g) * dot_l;
    dh = keep * rec.h * (1.0 - rec.h) * dot_r;
    FilterGrad& fh = g.gating2[rec.kh];
    for (size_t j = 0; j < x.size(); ++j) fh.weights[j] += dh * x[j];
    fh.bias += dh;
  } else {
    double dot_diff = 0.0;
    for (size_t c = 0; c < u.size(); ++c) dot_diff += u[c] * (yl[c] - yr[c]);
    dg = keep * rec.g * (1.0 - rec.g) * dot_diff;
  }
  FilterGrad& fg = g.gating[rec.kg];
  for (size_t j = 0; j < x.size(); ++j) fg.weights[j] += dg * x[j];
  fg.bias += dg;

  std::vector<double> ul(u.size()), ur(u.size());
  for (size_t c = 0; c < u.size(); ++c) {
    ul[c] = keep * rec.g * u[c];
    ur[c] = keep * rec.h * u[c];
  }
  backprop_node(cache, rec.left, variant, x, ul, acc);
  backprop_node(cache, rec.right, variant, x, ur, acc);
}

}  // namespace

double backward_into(const Tree& tree, std::span<const double> x, int label,
                     GradBuffer& acc) {
  if ((int)x.size() != tree.input_dim)
    throw std::invalid_argument("input length does not match tree input_dim");
  std::vector<EvalRecord> cache;
  eval_into_cache(tree.root, tree.variant, x, cache);
  if (acc.nodes.size() != cache.size())
    throw std::invalid_argument("gradient buffer does not match the tree shape");

  const std::vector<double>& scores = cache[0].y;
  double value = loss(scores, label);
  std::vector<double> u = softmax(scores);
  u[label] -= 1.0;
  backprop_node(cache, 0, tree.variant, x, u, acc);
  return value;
}

std::pair<double, GradBuffer> backward(const Tree& tree,
                                       std::span<const double> x, int label) {
  GradBuffer acc = GradBuffer::like(tree);
  double value = backward_into(tree, x, label, acc);
  return {value, std::move(acc)};
}

GradBuffer finite_difference_grad(Tree& tree, std::span<const double> x,
                                  int label, double step) {
  if (step <= 0.0) throw std::invalid_argument("step must be positive");
  GradBuffer out = GradBuffer::like(tree);
  for (const ParamSlot& s : zip_params(tree, out)) {
    double saved = *s.param;
    *s.param = saved + step;
    double plus = loss(forward(tree, x).scores, label);
    *s.param = saved - step;
    double minus = loss(forward(tree, x).scores, label);
    *s.param = saved;
    *s.slot = (plus - minus) / (2.0 * step);
  }
  return out;
}

void sgd_step(Tree& tree, const GradBuffer& grads, GradBuffer& velocity,
              const TrainConfig& config) {
  if (config.learning_rate <= 0.0)
    throw std::invalid_argument("learning_rate must be positive");
  if (config.momentum < 0.0 || config.momentum >= 1.0)
    throw std::invalid_argument("momentum must be in [0, 1)");
  std::vector<ParamSlot> vslots = zip_params(tree, velocity);
  std::vector<ParamSlot> gslots =
      zip_params(tree, const_cast<GradBuffer&>(grads));
  for (size_t i = 0; i < vslots.size(); ++i) {
    double& v = *vslots[i].slot;
    v = config.momentum * v - config.learning_rate * *gslots[i].slot;
    *vslots[i].param += v;
  }
}

double mean_loss(const Tree& tree, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  double sum = 0.0;
  for (const Sample& s : data.samples)
    sum += loss(forward(tree, s.features).scores, s.label);
  return sum / (double)data.size();
}

namespace {

void check_train_inputs(const Tree& tree, const Dataset& data,
                        const TrainConfig& config) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  if (data.feature_dim != tree.input_dim)
    throw std::invalid_argument("dataset feature_dim does not match the tree");
  if (config.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (config.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (config.lr_decay_every < 1)
    throw std::invalid_argument("lr_decay_every must be >= 1");
  if (config.lr_decay_factor <= 0.0 || config.lr_decay_factor > 1.0)
    throw std::invalid_argument("lr_decay_factor must be in (0, 1]");
}

// One SGD pass; slot_mask (when nonempty) zeroes the gradients of every
// parameter it excludes, so only the marked subset trains. shuffle_salt
// decorrelates the epoch shuffles of distinct training phases sharing one
// seed. Returns the per-epoch mean loss.
std::vector<double> sgd_epochs(Tree& tree, const Dataset& data,
                               const TrainConfig& config, int epochs,
                               uint64_t shuffle_salt,
                               const std::vector<char>& slot_mask,
                               std::vector<ParamSlot>* slots_io) {
  GradBuffer grads = GradBuffer::like(tree);
  GradBuffer velocity = GradBuffer::like(tree);
  std::vector<ParamSlot> slots = zip_params(tree, grads);
  if (!slot_mask.empty() && slot_mask.size() != slots.size())
    throw std::invalid_argument("slot mask does not match the parameter count");
  if (slots_io) *slots_io = slots;

  size_t n = data.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), (size_t)0);
  std::vector<double> log;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    TrainConfig step_cfg = config;
    step_cfg.learning_rate =
        config.learning_rate *
        std::pow(config.lr_decay_factor, epoch / config.lr_decay_every);
    std::mt19937_64 rng(
        mix_seed(config.seed, kSeedShuffle, shuffle_salt, (uint64_t)epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += (size_t)config.batch_size) {
      size_t stop = std::min(n, start + (size_t)config.batch_size);
      grads.zero();
      for (size_t i = start; i < stop; ++i) {
        const Sample& s = data.samples[order[i]];
        epoch_loss += backward_into(tree, s.features, s.label, grads);
      }
      grads.scale(1.0 / (double)(stop - start));
      if (!slot_mask.empty())
        for (size_t i = 0; i < slots.size(); ++i)
          if (!slot_mask[i]) *slots[i].slot = 0.0;
      sgd_step(tree, grads, velocity, step_cfg);
    }
    log.push_back(epoch_loss / (double)n);
  }
  return log;
}

}  // namespace

std::vector<double> train_tree(Tree& tree, const Dataset& train,
                               const TrainConfig& config) {
  check_train_inputs(tree, train, config);
  return sgd_epochs(tree, train, config, config.epochs, /*shuffle_salt=*/0,
                    {}, nullptr);
}

namespace {

std::vector<char> mask_for(Tree& tree,
                           const std::function<bool(const ParamSlot&)>& keep) {
  GradBuffer scratch = GradBuffer::like(tree);
  std::vector<ParamSlot> slots = zip_params(tree, scratch);
  std::vector<char> mask(slots.size(), 0);
  for (size_t i = 0; i < slots.size(); ++i) mask[i] = keep(slots[i]) ? 1 : 0;
  return mask;
}

}  // namespace

Tree grow_soft_tree(const Dataset& train, const Dataset& val,
                    const TrainConfig& tconfig, const GrowthConfig& gconfig) {
  if (train.empty() || val.empty()) throw std::invalid_argument("empty dataset");
  if (train.feature_dim != val.feature_dim)
    throw std::invalid_argument("train/validation feature_dim mismatch");
  if (gconfig.grow_epochs < 1)
    throw std::invalid_argument("grow_epochs must be >= 1");
  if (gconfig.gain_threshold < 0.0)
    throw std::invalid_argument("gain_threshold must be >= 0");
  if (gconfig.max_depth < 0) throw std::invalid_argument("max_depth must be >= 0");

  int d = train.feature_dim;
  int C = std::max(train.class_count, val.class_count);
  Tree tree = make_leaf_tree(d, C, gconfig.max_depth);

  // Candidate phases are short bursts; decaying the rate inside one would
  // starve the gate before its gradient signal has built up.
  TrainConfig phase_cfg = tconfig;
  phase_cfg.lr_decay_factor = 1.0;

  uint64_t phase = 0;
  auto train_masked = [&](uint64_t salt,
                          const std::function<bool(const ParamSlot&)>& keep) {
    std::vector<char> mask = mask_for(tree, keep);
    sgd_epochs(tree, train, phase_cfg, gconfig.grow_epochs, salt, mask,
               nullptr);
  };

  // Fit the root payoff until a grow_epochs block stops paying for itself.
  auto payoff_of = [](Node* target) {
    return [target](const ParamSlot& s) {
      return s.node == target && s.family == ParamFamily::payoff;
    };
  };
  double before = mean_loss(tree, val);
  for (int block = 0; block < 40; ++block) {
    train_masked(++phase, payoff_of(&tree.root));
    double after = mean_loss(tree, val);
    double rel = (before - after) / std::max(before, 1e-8);
    before = after;
    if (rel <= gconfig.gain_threshold) break;
  }

  std::mt19937_64 init_rng(mix_seed(tconfig.seed, kSeedInit));
  std::normal_distribution<double> weight_dist(0.0, 1.0 / std::sqrt((double)d));

  while (true) {
    // Structural leaves still below the depth cap, breadth-first.
    std::vector<std::pair<Node*, int>> frontier;
    std::deque<std::pair<Node*, int>> queue{{&tree.root, 0}};
    while (!queue.empty()) {
      auto [node, depth] = queue.front();
      queue.pop_front();
      if (node->is_leaf()) {
        if (depth < gconfig.max_depth) frontier.push_back({node, depth});
      } else {
        queue.push_back({node->left.get(), depth + 1});
        queue.push_back({node->right.get(), depth + 1});
      }
    }
    if (frontier.empty()) break;

    bool accepted_any = false;
    for (auto [leaf, depth] : frontier) {
      // Baseline: give the leaf's own payoff the same training budget the
      // split would get, over the same shuffled batches, so a split is
      // kept only when the new gate beats plain continued fitting. This is
      // what stops pure regions from splitting forever just because
      // cross-entropy keeps creeping down.
      uint64_t salt = ++phase;
      std::vector<double> saved_payoff = leaf->payoff;
      train_masked(salt, payoff_of(leaf));
      double base = mean_loss(tree, val);
      std::vector<double> baseline_payoff = leaf->payoff;

      leaf->payoff = saved_payoff;
      leaf->gating.resize(1);
      leaf->gating[0].weights.resize(d);
      for (double& w : leaf->gating[0].weights) w = weight_dist(init_rng);
      leaf->gating[0].bias = 0.0;
      for (auto* child : {&leaf->left, &leaf->right}) {
        *child = std::make_unique<Node>();
        (*child)->payoff = saved_payoff;
        (*child)->fixed_leaf = depth + 1 == gconfig.max_depth;
      }
      Node* lc = leaf->left.get();
      Node* rc = leaf->right.get();
      train_masked(salt, [&](const ParamSlot& s) {
        if (s.node == leaf && s.family == ParamFamily::gating) return true;
        return (s.node == lc || s.node == rc) &&
               s.family == ParamFamily::payoff;
      });
      double split_loss = mean_loss(tree, val);

      double rel = (base - split_loss) / std::max(base, 1e-8);
      if (rel > gconfig.gain_threshold) {
        accepted_any = true;
      } else {
        leaf->left.reset();
        leaf->right.reset();
        leaf->gating.clear();
        leaf->payoff = baseline_payoff;
      }
    }
    if (!accepted_any) break;
  }
  return tree;
}

}  // namespace budforest
