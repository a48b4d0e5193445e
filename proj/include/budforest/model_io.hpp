#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "budforest/forest.hpp"

namespace budforest {

enum class IoErrorKind {
  bad_magic,
  bad_version,
  truncated,
  trailing_bytes,
  invalid_model,
  read_failure,
  write_failure,
};

struct IoError : std::runtime_error {
  IoErrorKind kind;
  IoError(IoErrorKind k, const std::string& what)
      : std::runtime_error(what), kind(k) {}
};

// Model file: 8-byte magic "BFORESTm", little-endian u32 version (1),
// header (input_dim, class_count, layer count, per-layer spec fields),
// then per tree the nodes in preorder as kind-tagged records. All
// integers little-endian, all floats raw 64-bit little-endian. The loader
// rejects trailing bytes.
std::size_t save_model(const ForestModel& model, std::ostream& out);
std::size_t save_model_file(const ForestModel& model, const std::string& path);

ForestModel load_model(std::istream& in);
ForestModel load_model_file(const std::string& path);

// prune_hard(tree, prune_threshold), then a DOT digraph: one node per
// remaining tree node labeled with depth and leafness (3 decimals),
// leaves drawn as boxes, edges labeled L/R.
void export_dot(const Tree& tree, double prune_threshold, std::ostream& out);

}  // namespace budforest
