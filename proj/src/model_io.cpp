#include "budforest/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include "budforest/tree.hpp"

namespace budforest {

namespace {

constexpr char kMagic[8] = {'B', 'F', 'O', 'R', 'E', 'S', 'T', 'm'};
constexpr uint32_t kVersion = 1;

enum NodeKind : uint8_t { kFixedLeaf = 0, kFreeLeaf = 1, kInternal = 2 };

struct Writer {
  std::ostream& out;
  std::size_t written = 0;

  void bytes(const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), (std::streamsize)n);
    if (!out) throw IoError(IoErrorKind::write_failure, "model write failed");
    written += n;
  }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) {
    uint8_t b[4] = {(uint8_t)(v & 0xff), (uint8_t)((v >> 8) & 0xff),
                    (uint8_t)((v >> 16) & 0xff), (uint8_t)((v >> 24) & 0xff)};
    bytes(b, 4);
  }
  void i32(int32_t v) { u32((uint32_t)v); }
  void f64(double v) {
    uint64_t bits = std::bit_cast<uint64_t>(v);
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = (uint8_t)((bits >> (8 * i)) & 0xff);
    bytes(b, 8);
  }
};

struct Reader {
  std::istream& in;

  void bytes(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), (std::streamsize)n);
    if ((std::size_t)in.gcount() != n)
      throw IoError(IoErrorKind::truncated, "model file ends early");
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint8_t b[4];
    bytes(b, 4);
    return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) |
           ((uint32_t)b[3] << 24);
  }
  int32_t i32() { return (int32_t)u32(); }
  double f64() {
    uint8_t b[8];
    bytes(b, 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= (uint64_t)b[i] << (8 * i);
    return std::bit_cast<double>(bits);
  }
};

[[noreturn]] void invalid(const std::string& what) {
  throw IoError(IoErrorKind::invalid_model, what);
}

void write_filters(Writer& w, const std::vector<GatingFilter>& filters) {
  w.u32((uint32_t)filters.size());
  for (const GatingFilter& f : filters) {
    for (double v : f.weights) w.f64(v);
    w.f64(f.bias);
  }
}

void write_node(Writer& w, const Node& n) {
  uint8_t kind = n.is_leaf() ? (n.fixed_leaf ? kFixedLeaf : kFreeLeaf)
                             : kInternal;
  w.u8(kind);
  w.f64(n.leafness_logit);
  for (double v : n.payoff) w.f64(v);
  if (n.is_leaf()) return;
  write_filters(w, n.gating);
  write_filters(w, n.gating2);
  write_node(w, *n.left);
  write_node(w, *n.right);
}

std::vector<GatingFilter> read_filters(Reader& r, int input_dim,
                                       uint32_t limit) {
  uint32_t count = r.u32();
  if (count > limit) invalid("gating bank larger than the declared limit");
  std::vector<GatingFilter> filters(count);
  for (GatingFilter& f : filters) {
    f.weights.resize((size_t)input_dim);
    for (double& v : f.weights) v = r.f64();
    f.bias = r.f64();
  }
  return filters;
}

void read_node(Reader& r, const Tree& tree, Node& n, int depth) {
  if (depth > tree.max_depth) invalid("node below the declared max depth");
  uint8_t kind = r.u8();
  n.leafness_logit = r.f64();
  n.payoff.resize((size_t)tree.class_count);
  for (double& v : n.payoff) v = r.f64();
  switch (kind) {
    case kFixedLeaf:
      n.fixed_leaf = true;
      return;
    case kFreeLeaf:
      n.fixed_leaf = false;
      return;
    case kInternal:
      break;
    default:
      invalid("unknown node kind " + std::to_string((int)kind));
  }
  n.fixed_leaf = false;
  // Growth can leave fewer filters than the tree-wide F, never more.
  uint32_t limit = (uint32_t)tree.filters_per_node;
  n.gating = read_filters(r, tree.input_dim, limit);
  n.gating2 = read_filters(r, tree.input_dim, limit);
  if (n.gating.empty()) invalid("internal node without gating filters");
  if (tree.variant == TreeVariant::distributed) {
    if (n.gating2.size() != n.gating.size())
      invalid("distributed node banks differ in size");
  } else if (!n.gating2.empty()) {
    invalid("second gating bank on a non-distributed tree");
  }
  n.left = std::make_unique<Node>();
  n.right = std::make_unique<Node>();
  read_node(r, tree, *n.left, depth + 1);
  read_node(r, tree, *n.right, depth + 1);
}

TreeVariant variant_from_byte(uint8_t v) {
  switch (v) {
    case 0:
      return TreeVariant::soft;
    case 1:
      return TreeVariant::budding;
    case 2:
      return TreeVariant::distributed;
    default:
      invalid("unknown tree variant " + std::to_string((int)v));
  }
}

void check_model(const ForestModel& model) {
  if (model.input_dim <= 0 || model.class_count <= 0 || model.specs.empty() ||
      model.specs.size() != model.layers.size())
    invalid("model header fields out of range");
  for (size_t l = 0; l < model.specs.size(); ++l) {
    const LayerSpec& s = model.specs[l];
    if (s.tree_count <= 0 || s.max_depth < 0 || s.filters_per_node <= 0)
      invalid("layer spec fields out of range");
    if ((int)model.layers[l].size() != s.tree_count)
      invalid("layer tree count does not match its spec");
  }
}

}  // namespace

std::size_t save_model(const ForestModel& model, std::ostream& out) {
  check_model(model);
  Writer w{out};
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.i32(model.input_dim);
  w.i32(model.class_count);
  w.u32((uint32_t)model.specs.size());
  for (const LayerSpec& s : model.specs) {
    w.i32(s.tree_count);
    w.u8((uint8_t)s.variant);
    w.i32(s.max_depth);
    w.i32(s.filters_per_node);
  }
  for (const auto& layer : model.layers)
    for (const Tree& tree : layer) {
      w.u8((uint8_t)tree.variant);
      w.i32(tree.input_dim);
      w.i32(tree.class_count);
      w.i32(tree.max_depth);
      w.i32(tree.filters_per_node);
      write_node(w, tree.root);
    }
  out.flush();
  if (!out) throw IoError(IoErrorKind::write_failure, "model write failed");
  return w.written;
}

ForestModel load_model(std::istream& in) {
  Reader r{in};
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(IoErrorKind::bad_magic, "not a model file");
  uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(IoErrorKind::bad_version,
                  "unsupported model version " + std::to_string(version));

  ForestModel model;
  model.input_dim = r.i32();
  model.class_count = r.i32();
  uint32_t layer_count = r.u32();
  if (model.input_dim <= 0 || model.class_count <= 0 || layer_count == 0 ||
      layer_count > 4096)
    invalid("model header fields out of range");

  model.specs.resize(layer_count);
  for (LayerSpec& s : model.specs) {
    s.tree_count = r.i32();
    s.variant = variant_from_byte(r.u8());
    s.max_depth = r.i32();
    s.filters_per_node = r.i32();
    if (s.tree_count <= 0 || s.max_depth < 0 || s.filters_per_node <= 0)
      invalid("layer spec fields out of range");
  }

  model.layers.resize(layer_count);
  for (uint32_t l = 0; l < layer_count; ++l) {
    model.layers[l].resize((size_t)model.specs[l].tree_count);
    for (Tree& tree : model.layers[l]) {
      tree.variant = variant_from_byte(r.u8());
      tree.input_dim = r.i32();
      tree.class_count = r.i32();
      tree.max_depth = r.i32();
      tree.filters_per_node = r.i32();
      if (tree.input_dim != model.layer_input_dim((int)l))
        invalid("tree input dimension does not match its layer");
      if (tree.class_count != model.class_count)
        invalid("tree class count does not match the model");
      if (tree.max_depth < 0 || tree.filters_per_node <= 0)
        invalid("tree header fields out of range");
      read_node(r, tree, tree.root, 0);
    }
  }

  if (in.peek() != std::char_traits<char>::eof())
    throw IoError(IoErrorKind::trailing_bytes,
                  "unexpected bytes after the model");
  return model;
}

std::size_t save_model_file(const ForestModel& model,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError(IoErrorKind::write_failure, "cannot open " + path);
  return save_model(model, out);
}

ForestModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::read_failure, "cannot open " + path);
  return load_model(in);
}

namespace {

void dot_node(std::ostream& out, const Node& n, int depth, int& next_id,
              int my_id) {
  out << "  n" << my_id << " [label=\"depth " << depth << "\\nleafness "
      << std::fixed << std::setprecision(3) << node_gamma(n) << "\"";
  if (n.is_leaf()) out << ", shape=box";
  out << "];\n";
  if (n.is_leaf()) return;
  int left_id = next_id++;
  int right_id = next_id++;
  out << "  n" << my_id << " -> n" << left_id << " [label=\"L\"];\n";
  dot_node(out, *n.left, depth + 1, next_id, left_id);
  out << "  n" << my_id << " -> n" << right_id << " [label=\"R\"];\n";
  dot_node(out, *n.right, depth + 1, next_id, right_id);
}

}  // namespace

void export_dot(const Tree& tree, double prune_threshold, std::ostream& out) {
  Tree pruned = prune_hard(tree, prune_threshold);
  out << "digraph tree {\n";
  int next_id = 1;
  dot_node(out, pruned.root, 0, next_id, 0);
  out << "}\n";
  if (!out) throw IoError(IoErrorKind::write_failure, "dot write failed");
}

}  // namespace budforest
