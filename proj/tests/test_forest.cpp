#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "budforest/data.hpp"
#include "budforest/forest.hpp"
#include "budforest/rng.hpp"
#include "budforest/training.hpp"
#include "budforest/tree.hpp"

using namespace budforest;

namespace {

Tree leaf_tree_with(std::vector<double> payoff, int input_dim) {
  Tree t = make_leaf_tree(input_dim, (int)payoff.size(), 0);
  t.root.payoff = std::move(payoff);
  return t;
}

double accuracy_of(const ForestModel& model, const Dataset& data) {
  return evaluate(model, data).accuracy;
}

}  // namespace

TEST_CASE("bootstrap_sample basics") {
  Dataset data = make_blobs(5, 0.2, 1);

  Dataset none = bootstrap_sample(data, 0, 7);
  CHECK(none.size() == 0);
  CHECK(none.feature_dim == 2);
  CHECK(none.class_count == 2);

  Dataset single;
  single.feature_dim = 1;
  single.class_count = 2;
  single.samples.push_back({{0.25}, 1});
  Dataset rep = bootstrap_sample(single, 6, 3);
  CHECK(rep.size() == 6);
  for (const Sample& s : rep.samples) {
    CHECK(s.features == std::vector<double>{0.25});
    CHECK(s.label == 1);
  }

  Dataset a = bootstrap_sample(data, 20, 11);
  Dataset b = bootstrap_sample(data, 20, 11);
  for (size_t i = 0; i < a.samples.size(); ++i)
    CHECK(a.samples[i].features == b.samples[i].features);

  Dataset empty;
  CHECK_THROWS_AS((void)bootstrap_sample(empty, 3, 1), std::invalid_argument);
}

TEST_CASE("bootstrap frequencies stay within 3 sigma") {
  Dataset ten;
  ten.feature_dim = 1;
  ten.class_count = 10;
  for (int i = 0; i < 10; ++i) ten.samples.push_back({{(double)i}, i});

  const size_t draws = 100000;
  Dataset boot = bootstrap_sample(ten, draws, 41);
  std::vector<int> counts(10, 0);
  for (const Sample& s : boot.samples) counts[(size_t)s.label]++;
  double expected = (double)draws / 10.0;
  double sigma = std::sqrt((double)draws * 0.1 * 0.9);
  for (int c = 0; c < 10; ++c)
    CHECK(std::abs(counts[(size_t)c] - expected) <= 3.0 * sigma);
}

TEST_CASE("tree_distribution") {
  Tree uniform = leaf_tree_with({0.7, 0.7, 0.7, 0.7}, 3);
  std::vector<double> xu{0.1, 0.2, 0.3};
  std::vector<double> p = tree_distribution(uniform, xu);
  for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));

  Tree saturated = leaf_tree_with({30.0, -30.0}, 2);
  std::vector<double> xs{0.0, 0.0};
  std::vector<double> q = tree_distribution(saturated, xs);
  CHECK(std::abs(q[0] - 1.0) < 1e-12);
  CHECK(std::abs(q[1]) < 1e-12);

  Tree random_tree = make_complete_tree(TreeVariant::budding, 4, 3, 2, 1, 91);
  std::mt19937_64 rng(92);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Node* n : preorder_nodes(random_tree))
    for (double& v : n->payoff) v = dist(rng);
  std::vector<double> x{0.3, -0.1, 0.8, 0.2};
  std::vector<double> got = tree_distribution(random_tree, x);
  std::vector<double> want = softmax(forward(random_tree, x).scores);
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(got[(size_t)c] - want[(size_t)c]) < 1e-12);
    sum += got[(size_t)c];
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("layer_features shape and ordering") {
  Tree t1 = leaf_tree_with({2.0, -2.0}, 3);
  Tree t2 = leaf_tree_with({-1.0, 1.0}, 3);
  std::vector<double> x{0.5, 0.6, 0.7};

  std::vector<Tree> one;
  one.push_back(t1);
  std::vector<double> f1 = layer_features(one, x, x);
  CHECK(f1.size() == 5);  // C*k + d0 = 2 + 3
  CHECK(f1[2] == 0.5);
  CHECK(f1[3] == 0.6);
  CHECK(f1[4] == 0.7);

  std::vector<Tree> twins;
  twins.push_back(t1);
  twins.push_back(t1);
  std::vector<double> ftw = layer_features(twins, x, x);
  CHECK(ftw.size() == 7);
  CHECK(ftw[0] == ftw[2]);
  CHECK(ftw[1] == ftw[3]);

  std::vector<Tree> ab, ba;
  ab.push_back(t1);
  ab.push_back(t2);
  ba.push_back(t2);
  ba.push_back(t1);
  std::vector<double> fab = layer_features(ab, x, x);
  std::vector<double> fba = layer_features(ba, x, x);
  CHECK(fab[0] == fba[2]);
  CHECK(fab[1] == fba[3]);
  CHECK(fab[2] == fba[0]);
  CHECK(fab[3] == fba[1]);
  for (size_t i = 4; i < 7; ++i) CHECK(fab[i] == fba[i]);
}

TEST_CASE("train_forest with one layer and one tree mirrors train_tree") {
  Dataset data = make_blobs(60, 0.4, 201);
  TrainConfig cfg;
  cfg.epochs = 6;
  const uint64_t seed = 202;

  std::vector<LayerSpec> specs{{1, TreeVariant::budding, 2, 1}};
  ForestModel model = train_forest(data, specs, cfg, seed);
  REQUIRE(model.layers.size() == 1);
  REQUIRE(model.layers[0].size() == 1);

  // Same derivation chain the forest documents: a per-tree stream keyed
  // by (seed, layer, tree), with init/bootstrap/shuffle subkeys off it.
  uint64_t tree_seed = mix_seed(seed, 0, 0);
  Tree solo = make_complete_tree(TreeVariant::budding, 2, 2, 2, 1,
                                 mix_seed(tree_seed, kSeedInit));
  Dataset boot =
      bootstrap_sample(data, data.size(), mix_seed(tree_seed, kSeedBootstrap));
  TrainConfig solo_cfg = cfg;
  solo_cfg.seed = mix_seed(tree_seed, kSeedShuffle);
  train_tree(solo, boot, solo_cfg);

  CHECK(collect_parameters(model.layers[0][0]) == collect_parameters(solo));

  std::vector<double> x{0.4, -0.2};
  Prediction pred = predict(model, x);
  std::vector<double> direct = tree_distribution(solo, x);
  for (int c = 0; c < 2; ++c)
    CHECK(pred.distribution[(size_t)c] ==
          doctest::Approx(direct[(size_t)c]).epsilon(1e-14));
}

TEST_CASE("layer input dimensions follow d0 + C*k") {
  Dataset data = make_xor(40, 0.3, 211);
  TrainConfig cfg;
  cfg.epochs = 2;
  std::vector<LayerSpec> specs{{3, TreeVariant::budding, 1, 1},
                               {2, TreeVariant::budding, 1, 1}};
  ForestModel model = train_forest(data, specs, cfg, 212);
  CHECK(model.layer_input_dim(0) == 2);
  CHECK(model.layer_input_dim(1) == 2 + 2 * 3);
  CHECK(model.layers[1][0].input_dim == 8);
  CHECK(model.layers[1][1].input_dim == 8);
  CHECK_THROWS_AS((void)model.layer_input_dim(2), std::out_of_range);
}

TEST_CASE("a small forest is no worse than a single tree on xor") {
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.lr_decay_factor = 1.0;  // xor escape is slow; keep the rate up
  double single_total = 0.0;
  double forest_total = 0.0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Dataset train = make_xor(120, 0.35, 300 + seed);
    Dataset test = make_xor(80, 0.35, 400 + seed);

    std::vector<LayerSpec> one{{1, TreeVariant::budding, 3, 1}};
    std::vector<LayerSpec> deep{{3, TreeVariant::budding, 3, 1},
                                {3, TreeVariant::budding, 3, 1}};
    double single = accuracy_of(train_forest(train, one, cfg, seed), test);
    double forest = accuracy_of(train_forest(train, deep, cfg, seed), test);
    single_total += single;
    forest_total += forest;
    MESSAGE("seed ", seed, " single ", single, " forest ", forest);
  }
  CHECK(forest_total >= single_total);
  CHECK(forest_total / 5.0 >= 0.9);
}

TEST_CASE("train_forest is deterministic and workers do not change it") {
  Dataset data = make_xor(30, 0.3, 221);
  TrainConfig cfg;
  cfg.epochs = 4;
  std::vector<LayerSpec> specs{{3, TreeVariant::distributed, 2, 2},
                               {2, TreeVariant::budding, 2, 1}};

  ForestModel a = train_forest(data, specs, cfg, 222, 1);
  ForestModel b = train_forest(data, specs, cfg, 222, 1);
  ForestModel c = train_forest(data, specs, cfg, 222, 4);
  for (size_t l = 0; l < a.layers.size(); ++l)
    for (size_t t = 0; t < a.layers[l].size(); ++t) {
      CHECK(collect_parameters(a.layers[l][t]) ==
            collect_parameters(b.layers[l][t]));
      CHECK(collect_parameters(a.layers[l][t]) ==
            collect_parameters(c.layers[l][t]));
    }

  EvalResult seq = evaluate(a, data, 1);
  EvalResult par = evaluate(a, data, 4);
  CHECK(seq.accuracy == par.accuracy);
  CHECK(seq.confusion == par.confusion);
}

TEST_CASE("training records carry per-tree final losses") {
  Dataset data = make_blobs(30, 0.3, 231);
  TrainConfig cfg;
  cfg.epochs = 3;
  std::vector<LayerSpec> specs{{2, TreeVariant::budding, 1, 1},
                               {1, TreeVariant::budding, 1, 1}};
  std::vector<TreeTrainRecord> records;
  (void)train_forest(data, specs, cfg, 232, 2, &records);
  REQUIRE(records.size() == 3);
  CHECK(records[0].layer == 0);
  CHECK(records[0].tree == 0);
  CHECK(records[1].tree == 1);
  CHECK(records[2].layer == 1);
  for (const TreeTrainRecord& r : records) CHECK(r.final_train_loss >= 0.0);
}

TEST_CASE("frozen layers re-materialize identical features") {
  Dataset data = make_xor(25, 0.3, 241);
  TrainConfig cfg;
  cfg.epochs = 3;
  std::vector<LayerSpec> specs{{2, TreeVariant::budding, 2, 1},
                               {2, TreeVariant::budding, 2, 1}};
  ForestModel model = train_forest(data, specs, cfg, 242);
  for (const Sample& s : data.samples) {
    std::vector<double> f1 = layer_features(model.layers[0], s.features, s.features);
    std::vector<double> f2 = layer_features(model.layers[0], s.features, s.features);
    CHECK(f1 == f2);
  }
}

TEST_CASE("train_forest rejects bad input") {
  TrainConfig cfg;
  Dataset empty;
  std::vector<LayerSpec> specs{{1, TreeVariant::budding, 1, 1}};
  CHECK_THROWS_AS((void)train_forest(empty, specs, cfg, 1),
                  std::invalid_argument);

  Dataset data = make_blobs(5, 0.2, 1);
  CHECK_THROWS_AS((void)train_forest(data, {}, cfg, 1), std::invalid_argument);
  std::vector<LayerSpec> bad{{0, TreeVariant::budding, 1, 1}};
  CHECK_THROWS_AS((void)train_forest(data, bad, cfg, 1),
                  std::invalid_argument);
}

TEST_CASE("predict averages the final layer and breaks ties low") {
  ForestModel model;
  model.input_dim = 2;
  model.class_count = 2;
  model.specs = {{2, TreeVariant::soft, 0, 1}};
  model.layers.resize(1);
  model.layers[0].push_back(leaf_tree_with({30.0, -30.0}, 2));
  model.layers[0].push_back(leaf_tree_with({-30.0, 30.0}, 2));

  Prediction p = predict(model, std::vector<double>{0.1, 0.2});
  CHECK(p.distribution[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(p.distribution[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(p.label == 0);

  // Averaging oracle computed externally.
  std::vector<double> x{0.1, 0.2};
  std::vector<double> d1 = tree_distribution(model.layers[0][0], x);
  std::vector<double> d2 = tree_distribution(model.layers[0][1], x);
  for (int c = 0; c < 2; ++c)
    CHECK(std::abs(p.distribution[(size_t)c] -
                   0.5 * (d1[(size_t)c] + d2[(size_t)c])) < 1e-12);

  double sum = p.distribution[0] + p.distribution[1];
  CHECK(std::abs(sum - 1.0) < 1e-9);

  CHECK_THROWS_AS((void)predict(model, std::vector<double>{1.0}),
                  std::invalid_argument);
}

TEST_CASE("evaluate accuracy and confusion bookkeeping") {
  ForestModel zero;
  zero.input_dim = 1;
  zero.class_count = 2;
  zero.specs = {{1, TreeVariant::soft, 0, 1}};
  zero.layers.resize(1);
  zero.layers[0].push_back(leaf_tree_with({30.0, -30.0}, 1));

  Dataset all_zero;
  all_zero.feature_dim = 1;
  all_zero.class_count = 2;
  for (int i = 0; i < 8; ++i) all_zero.samples.push_back({{0.1 * i}, 0});
  EvalResult r = evaluate(zero, all_zero);
  CHECK(r.accuracy == 1.0);

  Dataset balanced;
  balanced.feature_dim = 1;
  balanced.class_count = 2;
  for (int i = 0; i < 10; ++i) balanced.samples.push_back({{0.1 * i}, i % 2});
  EvalResult rb = evaluate(zero, balanced);
  CHECK(rb.accuracy == 0.5);
  CHECK(rb.confusion[0][0] == 5);
  CHECK(rb.confusion[1][0] == 5);
  CHECK(rb.confusion[0][1] == 0);

  // accuracy == 1 - offdiagonal/N, rows sum to class counts
  long long off = 0, total = 0;
  for (size_t i = 0; i < rb.confusion.size(); ++i)
    for (size_t j = 0; j < rb.confusion[i].size(); ++j) {
      total += rb.confusion[i][j];
      if (i != j) off += rb.confusion[i][j];
    }
  CHECK(total == 10);
  CHECK(rb.accuracy == doctest::Approx(1.0 - (double)off / 10.0).epsilon(1e-15));

  Dataset empty;
  CHECK_THROWS_AS((void)evaluate(zero, empty), std::invalid_argument);

  // Ten classes, always-class-0 model, balanced data: accuracy 1/10.
  std::vector<double> stub_payoff(10, -30.0);
  stub_payoff[0] = 30.0;
  ForestModel ten;
  ten.input_dim = 1;
  ten.class_count = 10;
  ten.specs = {{1, TreeVariant::soft, 0, 1}};
  ten.layers.resize(1);
  ten.layers[0].push_back(leaf_tree_with(stub_payoff, 1));
  Dataset spread;
  spread.feature_dim = 1;
  spread.class_count = 10;
  for (int i = 0; i < 50; ++i) spread.samples.push_back({{0.02 * i}, i % 10});
  CHECK(evaluate(ten, spread).accuracy == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("parameter counts agree between trees, model and closed form") {
  Dataset data = make_xor(20, 0.3, 251);
  TrainConfig cfg;
  cfg.epochs = 1;
  std::vector<LayerSpec> specs{{3, TreeVariant::budding, 2, 1},
                               {2, TreeVariant::distributed, 1, 2}};
  ForestModel model = train_forest(data, specs, cfg, 252);

  long long per_tree_sum = 0;
  for (const auto& layer : model.layers)
    for (const Tree& t : layer) per_tree_sum += count_parameters(t);
  CHECK(count_parameters(model) == per_tree_sum);

  ParamCount actual = count_parameter_groups(model);
  ParamCount closed = count_parameter_groups(2, 2, specs);
  CHECK(actual.gating == closed.gating);
  CHECK(actual.leafness == closed.leafness);
  CHECK(actual.payoff == closed.payoff);
  CHECK(actual.total() == per_tree_sum);
}

TEST_CASE("distributed gating subtotal doubles the budding one") {
  std::vector<LayerSpec> budding{{15, TreeVariant::budding, 5, 1},
                                 {15, TreeVariant::budding, 5, 1},
                                 {15, TreeVariant::budding, 5, 1}};
  std::vector<LayerSpec> distributed{{15, TreeVariant::distributed, 5, 1},
                                     {15, TreeVariant::distributed, 5, 1},
                                     {15, TreeVariant::distributed, 5, 1}};
  ParamCount b = count_parameter_groups(784, 10, budding);
  ParamCount d = count_parameter_groups(784, 10, distributed);
  CHECK(d.gating == 2 * b.gating);
  CHECK(d.leafness == b.leafness);
  CHECK(d.payoff == b.payoff);
}
