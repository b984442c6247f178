#pragma once

#include "inpl/core.hpp"

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace inpl {

using NodeId = std::int32_t;
using Edge = std::pair<NodeId, NodeId>;

/// Undirected, unweighted graph in compressed-row form. Both directions of
/// every edge are stored, rows are sorted and strictly increasing, and the
/// diagonal is empty. Immutable once built.
class Graph {
 public:
  Graph() = default;

  Index num_nodes() const { return static_cast<Index>(row_ptr_.empty() ? 0 : row_ptr_.size() - 1); }
  Index edge_count() const { return static_cast<Index>(col_idx_.size() / 2); }
  Index stored_entries() const { return static_cast<Index>(col_idx_.size()); }

  std::span<const NodeId> neighbors(Index u) const {
    return {col_idx_.data() + row_ptr_[u], col_idx_.data() + row_ptr_[u + 1]};
  }
  Index degree(Index u) const { return row_ptr_[u + 1] - row_ptr_[u]; }
  bool has_edge(Index u, Index v) const;

  std::span<const Index> row_ptr() const { return row_ptr_; }
  std::span<const NodeId> col_idx() const { return col_idx_; }

  /// Canonical edge list: each undirected edge once as (u, v) with u < v,
  /// sorted lexicographically.
  std::vector<Edge> edges() const;

  Matrix densify() const;

  bool operator==(const Graph&) const = default;

 private:
  friend Graph build_graph(std::span<const Edge> edges, Index n);
  friend Graph from_sorted_rows(std::vector<std::vector<NodeId>> rows);

  std::vector<Index> row_ptr_;
  std::vector<NodeId> col_idx_;
};

/// Symmetrizes, deduplicates and strips self-loops. Throws InputError for
/// n == 0 or an endpoint outside [0, n).
Graph build_graph(std::span<const Edge> edges, Index n);

/// Pairs at shortest-path distance exactly k. Throws InputError for k < 1.
Graph exact_khop(const Graph& g, int k);

std::vector<Index> degrees(const Graph& g);

struct LabelVector {
  std::vector<int> labels;
  int classes = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
  int operator[](Index u) const { return labels[static_cast<std::size_t>(u)]; }

  /// Infers the class count as max label + 1 (at least 2).
  static LabelVector from_labels(std::vector<int> labels);

  /// Checks 0 <= label < classes and classes >= 2.
  void validate() const;

  bool operator==(const LabelVector&) const = default;
};

struct EdgeHomophily {
  double value = 0.0;
  bool no_edges = false;
};

EdgeHomophily edge_homophily(const Graph& g, const LabelVector& y);

/// Class-balance-corrected homophily:
///   h = 1/(C-1) * sum_k [h_k - |C_k|/n]_+,
///   h_k = sum_{u in C_k} d_u^(same) / sum_{u in C_k} d_u,
/// where a class with zero total degree has h_k = 0.
double class_homophily(const Graph& g, const LabelVector& y);

/// Per-node fraction of same-label neighbors; std::nullopt for degree-0 nodes.
std::vector<std::optional<double>> node_homophily(const Graph& g, const LabelVector& y);

struct HomophilyReport {
  double edge_homophily = 0.0;
  bool no_edges = false;
  double class_homophily = 0.0;
  std::vector<std::optional<double>> node_homophily;
};

HomophilyReport homophily_report(const Graph& g, const LabelVector& y);

}  // namespace inpl
