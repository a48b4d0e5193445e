// Command-line front end: train, eval, gradcheck, export-dot and
// count-params over the budforest library. Configs are line-oriented
// "key = value" files; flags override file values.
#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "budforest/data.hpp"
#include "budforest/forest.hpp"
#include "budforest/gradcheck.hpp"
#include "budforest/model_io.hpp"
#include "budforest/rng.hpp"
#include "budforest/training.hpp"
#include "budforest/tree.hpp"

using namespace budforest;

namespace {

// One exit code per error class so scripts can tell them apart.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitIo = 4;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string dataset = "mnist";  // mnist | blobs | xor
  std::string data_dir;           // falls back to BUDFOREST_DATA_DIR
  int layers = 1;
  int trees = 1;
  std::string variant = "budding";  // soft | budding | distributed
  int depth = 5;
  int filters = 1;
  double learning_rate = 0.1;
  double momentum = 0.9;
  int batch_size = 64;
  int epochs = 20;
  double lr_decay_factor = 0.5;
  int lr_decay_every = 8;
  int augment_copies = 0;  // 0 = no augmentation
  int max_shift = 2;
  double max_rotation = 15.0;
  double max_shear = 0.1;
  long long subset = 0;  // 0 = all training samples
  uint64_t seed = 0;
  int workers = 1;
  int synth_train = 200;  // per-cluster size for blobs/xor
  int synth_test = 100;
  double synth_noise = 0.3;
  std::string model_out = "model.bin";
  std::string metrics_out = "metrics.csv";
  std::string confusion_out = "confusion.csv";
};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(key + ": not an integer: " + value);
  }
}

long long parse_ll(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(key + ": not an integer: " + value);
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(key + ": not an unsigned integer: " + value);
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(key + ": not a number: " + value);
  }
}

void apply_key(RunConfig& cfg, const std::string& key,
               const std::string& value) {
  if (key == "dataset") cfg.dataset = value;
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "layers") cfg.layers = parse_int(key, value);
  else if (key == "trees") cfg.trees = parse_int(key, value);
  else if (key == "variant") cfg.variant = value;
  else if (key == "depth") cfg.depth = parse_int(key, value);
  else if (key == "filters") cfg.filters = parse_int(key, value);
  else if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
  else if (key == "momentum") cfg.momentum = parse_double(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
  else if (key == "epochs") cfg.epochs = parse_int(key, value);
  else if (key == "lr_decay_factor") cfg.lr_decay_factor = parse_double(key, value);
  else if (key == "lr_decay_every") cfg.lr_decay_every = parse_int(key, value);
  else if (key == "augment_copies") cfg.augment_copies = parse_int(key, value);
  else if (key == "max_shift") cfg.max_shift = parse_int(key, value);
  else if (key == "max_rotation") cfg.max_rotation = parse_double(key, value);
  else if (key == "max_shear") cfg.max_shear = parse_double(key, value);
  else if (key == "subset") cfg.subset = parse_ll(key, value);
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "workers") cfg.workers = parse_int(key, value);
  else if (key == "synth_train") cfg.synth_train = parse_int(key, value);
  else if (key == "synth_test") cfg.synth_test = parse_int(key, value);
  else if (key == "synth_noise") cfg.synth_noise = parse_double(key, value);
  else if (key == "model_out") cfg.model_out = value;
  else if (key == "metrics_out") cfg.metrics_out = value;
  else if (key == "confusion_out") cfg.confusion_out = value;
  else throw ConfigError("unknown config key: " + key);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    size_t eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected key = value");
    apply_key(cfg, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
}

TreeVariant variant_of(const std::string& name) {
  if (name == "soft") return TreeVariant::soft;
  if (name == "budding") return TreeVariant::budding;
  if (name == "distributed") return TreeVariant::distributed;
  throw ConfigError("variant: must be soft, budding or distributed, got " +
                    name);
}

void validate(const RunConfig& cfg) {
  if (cfg.dataset != "mnist" && cfg.dataset != "blobs" && cfg.dataset != "xor")
    throw ConfigError("dataset: must be mnist, blobs or xor, got " +
                      cfg.dataset);
  (void)variant_of(cfg.variant);
  if (cfg.layers < 1) throw ConfigError("layers: must be at least 1");
  if (cfg.trees < 1) throw ConfigError("trees: must be at least 1");
  if (cfg.depth < 0) throw ConfigError("depth: must be non-negative");
  if (cfg.filters < 1) throw ConfigError("filters: must be at least 1");
  if (cfg.learning_rate <= 0.0) throw ConfigError("learning_rate: must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
    throw ConfigError("momentum: must be in [0, 1)");
  if (cfg.batch_size < 1) throw ConfigError("batch_size: must be at least 1");
  if (cfg.epochs < 1) throw ConfigError("epochs: must be at least 1");
  if (cfg.lr_decay_factor <= 0.0 || cfg.lr_decay_factor > 1.0)
    throw ConfigError("lr_decay_factor: must be in (0, 1]");
  if (cfg.lr_decay_every < 1) throw ConfigError("lr_decay_every: must be at least 1");
  if (cfg.augment_copies < 0) throw ConfigError("augment_copies: must be non-negative");
  if (cfg.max_shift < 0) throw ConfigError("max_shift: must be non-negative");
  if (cfg.max_rotation < 0.0) throw ConfigError("max_rotation: must be non-negative");
  if (cfg.max_shear < 0.0) throw ConfigError("max_shear: must be non-negative");
  if (cfg.subset < 0) throw ConfigError("subset: must be non-negative");
  if (cfg.workers < 1) throw ConfigError("workers: must be at least 1");
  if (cfg.synth_train < 1) throw ConfigError("synth_train: must be at least 1");
  if (cfg.synth_test < 1) throw ConfigError("synth_test: must be at least 1");
  if (cfg.synth_noise < 0.0) throw ConfigError("synth_noise: must be non-negative");
}

std::string resolve_data_dir(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  const char* env = std::getenv("BUDFOREST_DATA_DIR");
  if (env && *env) return env;
  throw DataError(
      "no data directory: pass --data-dir, set data_dir in the config or "
      "export BUDFOREST_DATA_DIR");
}

Dataset load_split(const RunConfig& cfg, bool train_split) {
  if (cfg.dataset == "mnist") {
    std::string dir = resolve_data_dir(cfg);
    try {
      return load_mnist_dir(dir, train_split);
    } catch (const ParseError& e) {
      throw DataError(std::string("malformed IDX data: ") + e.what());
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
  }
  // Synthetic sets draw train and test from disjoint seed streams.
  uint64_t tag = train_split ? 11 : 12;
  int per_cluster = train_split ? cfg.synth_train : cfg.synth_test;
  if (cfg.dataset == "blobs")
    return make_blobs(per_cluster, cfg.synth_noise, mix_seed(cfg.seed, tag));
  return make_xor(per_cluster, cfg.synth_noise, mix_seed(cfg.seed, tag));
}

std::vector<LayerSpec> specs_of(const RunConfig& cfg) {
  LayerSpec spec{cfg.trees, variant_of(cfg.variant), cfg.depth, cfg.filters};
  return std::vector<LayerSpec>((size_t)cfg.layers, spec);
}

TrainConfig train_config_of(const RunConfig& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.learning_rate;
  t.momentum = cfg.momentum;
  t.batch_size = cfg.batch_size;
  t.epochs = cfg.epochs;
  t.seed = cfg.seed;
  t.lr_decay_factor = cfg.lr_decay_factor;
  t.lr_decay_every = cfg.lr_decay_every;
  return t;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::write_failure, "cannot open " + path);
  out << text;
  out.flush();
  if (!out) throw IoError(IoErrorKind::write_failure, "write failed: " + path);
}

int cmd_train(const RunConfig& cfg) {
  validate(cfg);
  Dataset train = load_split(cfg, true);
  Dataset test = load_split(cfg, false);
  size_t raw_count = train.size();

  if (cfg.subset > 0)
    train = subset_shuffled(train, (size_t)cfg.subset, mix_seed(cfg.seed, 21));
  if (cfg.augment_copies > 0) {
    AugmentConfig acfg;
    acfg.max_shift_px = cfg.max_shift;
    acfg.max_rotation_deg = cfg.max_rotation;
    acfg.max_shear = cfg.max_shear;
    acfg.copies_per_sample = cfg.augment_copies;
    acfg.seed = mix_seed(cfg.seed, 31);
    train = build_augmented_dataset(train, acfg);
  }

  std::vector<LayerSpec> specs = specs_of(cfg);
  std::vector<TreeTrainRecord> records;
  auto started = std::chrono::steady_clock::now();
  ForestModel model = train_forest(train, specs, train_config_of(cfg),
                                   cfg.seed, cfg.workers, &records);
  auto train_seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - started)
                           .count();
  EvalResult result = evaluate(model, test, cfg.workers);
  size_t bytes = save_model_file(model, cfg.model_out);

  std::ostringstream csv;
  csv << "record,layer,tree,final_train_loss,test_accuracy\n";
  for (const TreeTrainRecord& r : records)
    csv << "tree," << r.layer << "," << r.tree << ","
        << format_double(r.final_train_loss) << ",\n";
  csv << "summary,,,," << format_double(result.accuracy) << "\n";
  write_text_file(cfg.metrics_out, csv.str());

  ParamCount params = count_parameter_groups(model);
  std::cout << "dataset " << cfg.dataset << ": train " << train.size();
  if (train.size() != raw_count) std::cout << " (from " << raw_count << " raw)";
  std::cout << ", test " << test.size() << "\n";
  std::cout << "forest: " << cfg.layers << " layer(s) x " << cfg.trees
            << " " << cfg.variant << " tree(s), depth " << cfg.depth
            << ", filters " << cfg.filters << "\n";
  std::cout << "parameters: gating " << params.gating << ", leafness "
            << params.leafness << ", payoff " << params.payoff << ", total "
            << params.total() << "\n";
  std::cout << "trained in " << format_double(train_seconds) << " s\n";
  std::cout << "test accuracy " << format_double(result.accuracy) << "\n";
  std::cout << "model written to " << cfg.model_out << " (" << bytes
            << " bytes)\n";
  std::cout << "metrics written to " << cfg.metrics_out << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& model_path) {
  validate(cfg);
  ForestModel model = load_model_file(model_path);
  Dataset test = load_split(cfg, false);
  EvalResult result = evaluate(model, test, cfg.workers);

  std::ostringstream csv;
  csv << "true_class";
  for (int c = 0; c < model.class_count; ++c) csv << ",pred_" << c;
  csv << "\n";
  for (int t = 0; t < model.class_count; ++t) {
    csv << t;
    for (int p = 0; p < model.class_count; ++p)
      csv << "," << result.confusion[(size_t)t][(size_t)p];
    csv << "\n";
  }
  write_text_file(cfg.confusion_out, csv.str());

  std::cout << "test accuracy " << format_double(result.accuracy) << "\n";
  std::cout << "confusion written to " << cfg.confusion_out << "\n";
  return 0;
}

int cmd_gradcheck(const GradCheckConfig& gcfg) {
  GradCheckReport report = run_gradient_check(gcfg);
  std::cout << "gradcheck: trials " << report.trials << ", step " << gcfg.step
            << ", tolerance " << gcfg.tolerance << "\n";
  std::cout << "  gating   max rel " << report.max_rel_gating << "\n";
  std::cout << "  leafness max rel " << report.max_rel_leafness << "\n";
  std::cout << "  payoff   max rel " << report.max_rel_payoff << "\n";
  std::cout << "  overall  max rel " << report.max_rel << " -> "
            << (report.passed ? "PASS" : "FAIL") << "\n";
  return report.passed ? 0 : 1;
}

int cmd_export_dot(const std::string& model_path, int layer, int tree,
                   double threshold, const std::string& out_path) {
  ForestModel model = load_model_file(model_path);
  if (layer < 0 || (size_t)layer >= model.layers.size())
    throw ConfigError("--layer out of range, model has " +
                      std::to_string(model.layers.size()) + " layer(s)");
  if (tree < 0 || (size_t)tree >= model.layers[(size_t)layer].size())
    throw ConfigError("--tree out of range, layer has " +
                      std::to_string(model.layers[(size_t)layer].size()) +
                      " tree(s)");
  if (!(threshold > 0.5 && threshold <= 1.0))
    throw ConfigError("--threshold must be in (0.5, 1]");

  std::ostringstream out;
  export_dot(model.layers[(size_t)layer][(size_t)tree], threshold, out);
  write_text_file(out_path, out.str());
  std::cout << "dot written to " << out_path << "\n";
  return 0;
}

int cmd_count_params(const RunConfig& cfg, const std::string& model_path,
                     int input_dim_override, int classes_override) {
  ParamCount params;
  if (!model_path.empty()) {
    params = count_parameter_groups(load_model_file(model_path));
  } else {
    validate(cfg);
    int input_dim = cfg.dataset == "mnist" ? 784 : 2;
    int classes = cfg.dataset == "mnist" ? 10 : 2;
    if (input_dim_override > 0) input_dim = input_dim_override;
    if (classes_override > 0) classes = classes_override;
    params = count_parameter_groups(input_dim, classes, specs_of(cfg));
  }
  std::cout << "gating " << params.gating << "\n";
  std::cout << "leafness " << params.leafness << "\n";
  std::cout << "payoff " << params.payoff << "\n";
  std::cout << "total " << params.total() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient-boosted soft decision forests"};
  app.require_subcommand(1);

  std::string config_path, data_dir, model_path, out_path, variant;
  uint64_t seed = 0;
  int workers = 0, layers = 0, trees = 0, depth = -1, filters = 0;
  long long subset = -1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--data-dir", data_dir, "directory with IDX data files");
    sub->add_option("--seed", seed, "RNG seed");
    sub->add_option("--workers", workers, "concurrent workers");
    sub->add_option("--subset", subset, "train on the first N shuffled samples");
    sub->add_option("--layers", layers, "forest layers");
    sub->add_option("--trees", trees, "trees per layer");
    sub->add_option("--depth", depth, "tree depth");
    sub->add_option("--variant", variant, "soft | budding | distributed");
    sub->add_option("--filters", filters, "gating filters per node");
  };

  CLI::App* train = app.add_subcommand("train", "train a forest, write model + metrics");
  add_common(train);
  train->add_option("--out", out_path, "model output path");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved model");
  add_common(eval);
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--out", out_path, "confusion CSV path");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of the backward pass");
  GradCheckConfig gcfg;
  bool corrupt = false;
  gradcheck->add_option("--trials", gcfg.trials, "random trees to check");
  gradcheck->add_option("--seed", gcfg.seed, "RNG seed");
  gradcheck->add_option("--step", gcfg.step, "finite-difference step");
  gradcheck->add_option("--tolerance", gcfg.tolerance, "max relative error");
  gradcheck->add_flag("--corrupt", corrupt, "negative control: bias one analytic slot");

  CLI::App* export_dot_cmd = app.add_subcommand("export-dot", "write a pruned tree as DOT");
  int dot_layer = 0, dot_tree = 0;
  double dot_threshold = 0.9;
  export_dot_cmd->add_option("--model", model_path, "model file")->required();
  export_dot_cmd->add_option("--layer", dot_layer, "layer index");
  export_dot_cmd->add_option("--tree", dot_tree, "tree index");
  export_dot_cmd->add_option("--threshold", dot_threshold, "prune leafness threshold");
  export_dot_cmd->add_option("--out", out_path, "DOT output path");

  CLI::App* count = app.add_subcommand("count-params", "parameter counts by family");
  add_common(count);
  int input_dim_override = 0, classes_override = 0;
  count->add_option("--model", model_path, "count a saved model instead of the config");
  count->add_option("--input-dim", input_dim_override, "override the input dimension");
  count->add_option("--classes", classes_override, "override the class count");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    if (!data_dir.empty()) cfg.data_dir = data_dir;

    auto sub = [&](const char* name) { return app.got_subcommand(name); };
    CLI::App* active = app.get_subcommands().front();
    auto passed = [&](const std::string& name) {
      const CLI::Option* opt = active->get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };
    if (passed("--seed")) cfg.seed = seed;
    if (passed("--workers")) cfg.workers = workers;
    if (passed("--subset")) cfg.subset = subset;
    if (passed("--layers")) cfg.layers = layers;
    if (passed("--trees")) cfg.trees = trees;
    if (passed("--depth")) cfg.depth = depth;
    if (passed("--variant")) cfg.variant = variant;
    if (passed("--filters")) cfg.filters = filters;

    if (sub("train")) {
      if (!out_path.empty()) cfg.model_out = out_path;
      return cmd_train(cfg);
    }
    if (sub("eval")) {
      if (!out_path.empty()) cfg.confusion_out = out_path;
      return cmd_eval(cfg, model_path);
    }
    if (sub("gradcheck")) {
      if (corrupt) gcfg.corrupt_delta = 1e-3;
      return cmd_gradcheck(gcfg);
    }
    if (sub("export-dot"))
      return cmd_export_dot(model_path, dot_layer, dot_tree, dot_threshold,
                            out_path.empty() ? "tree.dot" : out_path);
    if (sub("count-params"))
      return cmd_count_params(cfg, model_path, input_dim_override,
                              classes_override);
    std::cerr << "error: no command\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
