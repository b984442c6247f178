#pragma once

#include "inpl/core.hpp"
#include "inpl/graph.hpp"

#include <string>
#include <vector>

namespace inpl {

/// Named node subsets. Ids are sorted and unique within each mask.
struct Masks {
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;

  bool operator==(const Masks&) const = default;
};

struct Dataset {
  std::string name;
  Graph graph;
  Matrix features;
  LabelVector labels;
  Masks masks;

  Index num_nodes() const { return graph.num_nodes(); }

  /// Feature rows == label count == n; labels in range; masks disjoint
  /// subsets of [0, n). Throws InputError.
  void validate() const;
};

}  // namespace inpl
