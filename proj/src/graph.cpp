#include "inpl/graph.hpp"

#include <algorithm>
#include <string>

namespace inpl {

namespace {

void check_labels(const Graph& g, const LabelVector& y) {
  if (y.size() != g.num_nodes())
    throw InputError("label vector has " + std::to_string(y.size()) + " entries but graph has " +
                     std::to_string(g.num_nodes()) + " nodes");
}

}  // namespace

bool Graph::has_edge(Index u, Index v) const {
  const auto row = neighbors(u);
  return std::binary_search(row.begin(), row.end(), static_cast<NodeId>(v));
}

std::vector<Edge> Graph::edges() const {
  std::vector<Edge> out;
  out.reserve(static_cast<std::size_t>(edge_count()));
  for (Index u = 0; u < num_nodes(); ++u)
    for (NodeId v : neighbors(u))
      if (v > u) out.emplace_back(static_cast<NodeId>(u), v);
  return out;
}

Matrix Graph::densify() const {
  const Index n = num_nodes();
  Matrix dense = Matrix::Zero(n, n);
  for (Index u = 0; u < n; ++u)
    for (NodeId v : neighbors(u)) dense(u, v) = 1.0;
  return dense;
}

Graph from_sorted_rows(std::vector<std::vector<NodeId>> rows) {
  Graph g;
  g.row_ptr_.assign(rows.size() + 1, 0);
  for (std::size_t u = 0; u < rows.size(); ++u)
    g.row_ptr_[u + 1] = g.row_ptr_[u] + static_cast<Index>(rows[u].size());
  g.col_idx_.reserve(static_cast<std::size_t>(g.row_ptr_.back()));
  for (auto& row : rows) g.col_idx_.insert(g.col_idx_.end(), row.begin(), row.end());
  return g;
}

Graph build_graph(std::span<const Edge> edges, Index n) {
  if (n < 1) throw InputError("graph must have at least one node (n = " + std::to_string(n) + ")");
  std::vector<std::vector<NodeId>> rows(static_cast<std::size_t>(n));
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n)
      throw InputError("endpoint out of range in edge (" + std::to_string(u) + ", " + std::to_string(v) +
                       ") for n = " + std::to_string(n));
    if (u == v) continue;
    rows[static_cast<std::size_t>(u)].push_back(v);
    rows[static_cast<std::size_t>(v)].push_back(u);
  }
  for (auto& row : rows) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
  return from_sorted_rows(std::move(rows));
}

Graph exact_khop(const Graph& g, int k) {
  if (k < 1) throw InputError("hop count must be >= 1 (got " + std::to_string(k) + ")");
  const Index n = g.num_nodes();
  std::vector<std::vector<NodeId>> rows(static_cast<std::size_t>(n));
  // visited[v] == u + 1 marks v as reached at distance < current level in
  // the search rooted at u.
  std::vector<Index> visited(static_cast<std::size_t>(n), 0);
  std::vector<NodeId> frontier, next;
  for (Index u = 0; u < n; ++u) {
    const Index stamp = u + 1;
    visited[u] = stamp;
    frontier.assign(1, static_cast<NodeId>(u));
    for (int level = 1; level <= k && !frontier.empty(); ++level) {
      next.clear();
      for (NodeId w : frontier)
        for (NodeId v : g.neighbors(w))
          if (visited[v] != stamp) {
            visited[v] = stamp;
            next.push_back(v);
          }
      frontier.swap(next);
    }
    auto& row = rows[static_cast<std::size_t>(u)];
    row = frontier;
    std::sort(row.begin(), row.end());
  }
  return from_sorted_rows(std::move(rows));
}

std::vector<Index> degrees(const Graph& g) {
  std::vector<Index> out(static_cast<std::size_t>(g.num_nodes()));
  for (Index u = 0; u < g.num_nodes(); ++u) out[u] = g.degree(u);
  return out;
}

LabelVector LabelVector::from_labels(std::vector<int> labels) {
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);
  LabelVector y{std::move(labels), std::max(2, max_label + 1)};
  return y;
}

void LabelVector::validate() const {
  if (classes < 2) throw InputError("class count must be >= 2 (got " + std::to_string(classes) + ")");
  for (std::size_t u = 0; u < labels.size(); ++u)
    if (labels[u] < 0 || labels[u] >= classes)
      throw InputError("label " + std::to_string(labels[u]) + " of node " + std::to_string(u) +
                       " outside [0, " + std::to_string(classes) + ")");
}

EdgeHomophily edge_homophily(const Graph& g, const LabelVector& y) {
  check_labels(g, y);
  if (g.edge_count() == 0) return {0.0, true};
  Index same = 0;
  for (const auto& [u, v] : g.edges())
    if (y[u] == y[v]) ++same;
  return {static_cast<double>(same) / static_cast<double>(g.edge_count()), false};
}

double class_homophily(const Graph& g, const LabelVector& y) {
  check_labels(g, y);
  y.validate();
  const auto classes = static_cast<std::size_t>(y.classes);
  std::vector<double> same(classes, 0.0), total(classes, 0.0), members(classes, 0.0);
  for (Index u = 0; u < g.num_nodes(); ++u) {
    const auto k = static_cast<std::size_t>(y[u]);
    members[k] += 1.0;
    total[k] += static_cast<double>(g.degree(u));
    for (NodeId v : g.neighbors(u))
      if (y[v] == y[u]) same[k] += 1.0;
  }
  const double n = static_cast<double>(g.num_nodes());
  double h = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    const double hk = total[k] > 0.0 ? same[k] / total[k] : 0.0;
    h += std::max(hk - members[k] / n, 0.0);
  }
  return h / static_cast<double>(classes - 1);
}

std::vector<std::optional<double>> node_homophily(const Graph& g, const LabelVector& y) {
  check_labels(g, y);
  std::vector<std::optional<double>> out(static_cast<std::size_t>(g.num_nodes()));
  for (Index u = 0; u < g.num_nodes(); ++u) {
    const auto row = g.neighbors(u);
    if (row.empty()) continue;
    const auto same = std::count_if(row.begin(), row.end(), [&](NodeId v) { return y[v] == y[u]; });
    out[u] = static_cast<double>(same) / static_cast<double>(row.size());
  }
  return out;
}

HomophilyReport homophily_report(const Graph& g, const LabelVector& y) {
  const auto edge = edge_homophily(g, y);
  return {edge.value, edge.no_edges, class_homophily(g, y), node_homophily(g, y)};
}

}  // namespace inpl
