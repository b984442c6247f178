#include "inpl/graph.hpp"
#include "inpl/random.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

using namespace inpl;
using inpl::testing::path_graph;

namespace {

Graph random_graph(Index n, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Edge> e;
  for (Index u = 0; u < n; ++u)
    for (Index v = u + 1; v < n; ++v)
      if (rng.uniform() < p) e.emplace_back(NodeId(u), NodeId(v));
  return build_graph(e, n);
}

// All-pairs shortest path lengths by Floyd-Warshall on the dense matrix.
std::vector<std::vector<int>> floyd(const Graph& g) {
  const Index n = g.num_nodes();
  const int inf = std::numeric_limits<int>::max() / 4;
  std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
  const Matrix a = g.densify();
  for (Index i = 0; i < n; ++i) {
    d[i][i] = 0;
    for (Index j = 0; j < n; ++j)
      if (a(i, j) != 0.0) d[i][j] = 1;
  }
  for (Index k = 0; k < n; ++k)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

double class_homophily_oracle(const Graph& g, const LabelVector& y) {
  const Matrix a = g.densify();
  const Index n = g.num_nodes();
  double total = 0.0;
  for (int k = 0; k < y.classes; ++k) {
    double same = 0.0, deg = 0.0, size = 0.0;
    for (Index u = 0; u < n; ++u) {
      if (y[u] != k) continue;
      size += 1.0;
      for (Index v = 0; v < n; ++v) {
        deg += a(u, v);
        if (y[v] == k) same += a(u, v);
      }
    }
    const double hk = deg > 0 ? same / deg : 0.0;
    total += std::max(0.0, hk - size / double(n));
  }
  return total / double(y.classes - 1);
}

}  // namespace

TEST(BuildGraph, CanonicalizesDuplicatesAndSelfLoops) {
  const std::vector<Edge> e{{0, 1}, {1, 0}, {0, 1}, {2, 2}, {1, 2}};
  const Graph g = build_graph(e, 4);
  EXPECT_EQ(g.num_nodes(), 4);
  EXPECT_EQ(g.edge_count(), 2);
  EXPECT_TRUE(g.has_edge(0, 1));
  EXPECT_TRUE(g.has_edge(1, 0));
  EXPECT_FALSE(g.has_edge(2, 2));
  EXPECT_EQ(g.degree(3), 0);
  EXPECT_EQ(g.edges(), (std::vector<Edge>{{0, 1}, {1, 2}}));
}

TEST(BuildGraph, RowsSortedSymmetricNoDiagonal) {
  const Graph g = random_graph(40, 0.15, 3);
  const Matrix a = g.densify();
  EXPECT_TRUE(a.isApprox(a.transpose()));
  EXPECT_EQ(a.diagonal().sum(), 0.0);
  EXPECT_EQ(a.sum(), 2.0 * double(g.edge_count()));
  for (Index u = 0; u < g.num_nodes(); ++u) {
    const auto nb = g.neighbors(u);
    EXPECT_TRUE(std::adjacent_find(nb.begin(), nb.end(), std::greater_equal<>()) == nb.end());
  }
}

TEST(BuildGraph, RejectsOutOfRangeAndEmpty) {
  const std::vector<Edge> bad{{0, 3}};
  EXPECT_THROW(build_graph(bad, 3), InputError);
  const std::vector<Edge> neg{{-1, 0}};
  EXPECT_THROW(build_graph(neg, 3), InputError);
  EXPECT_THROW(build_graph({}, 0), InputError);
  try {
    build_graph(bad, 3);
  } catch (const InputError& err) {
    EXPECT_NE(std::string(err.what()).find("(0, 3)"), std::string::npos);
  }
}

TEST(BuildGraph, EdgeListRoundTrip) {
  const Graph g = random_graph(30, 0.2, 9);
  const auto e = g.edges();
  EXPECT_EQ(build_graph(e, g.num_nodes()), g);
}

TEST(ExactKHop, PathGraph) {
  const Graph p = path_graph(5);
  const Graph two = exact_khop(p, 2);
  EXPECT_EQ(two.edges(), (std::vector<Edge>{{0, 2}, {1, 3}, {2, 4}}));
  EXPECT_EQ(exact_khop(p, 1), p);
  EXPECT_EQ(exact_khop(p, 4).edges(), (std::vector<Edge>{{0, 4}}));
  EXPECT_EQ(exact_khop(p, 5).edge_count(), 0);
}

TEST(ExactKHop, TriangleHasNoTwoHopPairs) {
  const std::vector<Edge> e{{0, 1}, {1, 2}, {0, 2}};
  EXPECT_EQ(exact_khop(build_graph(e, 3), 2).edge_count(), 0);
}

TEST(ExactKHop, RejectsNonPositiveK) {
  EXPECT_THROW(exact_khop(path_graph(3), 0), InputError);
  EXPECT_THROW(exact_khop(path_graph(3), -2), InputError);
}

TEST(ExactKHop, MatchesAllPairsShortestPaths) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Graph g = random_graph(35, 0.06, seed);
    const auto d = floyd(g);
    for (int k = 1; k <= 4; ++k) {
      const Matrix hop = exact_khop(g, k).densify();
      for (Index i = 0; i < g.num_nodes(); ++i)
        for (Index j = 0; j < g.num_nodes(); ++j)
          ASSERT_EQ(hop(i, j) != 0.0, d[i][j] == k) << "seed " << seed << " k " << k << " (" << i << "," << j << ")";
    }
  }
}

TEST(Homophily, FourNodePath) {
  const Graph g = path_graph(4);
  const LabelVector y = LabelVector::from_labels({0, 0, 0, 1});
  const auto eh = edge_homophily(g, y);
  EXPECT_FALSE(eh.no_edges);
  EXPECT_DOUBLE_EQ(eh.value, 2.0 / 3.0);
}

TEST(Homophily, EmptyGraphFlagsNoEdges) {
  const Graph g = build_graph({}, 3);
  const auto eh = edge_homophily(g, LabelVector::from_labels({0, 1, 0}));
  EXPECT_TRUE(eh.no_edges);
  auto nh = node_homophily(g, LabelVector::from_labels({0, 1, 0}));
  for (const auto& h : nh) EXPECT_FALSE(h.has_value());
}

TEST(Homophily, FullyHomophilousAndHeterophilicBalanced) {
  // Two 4-cliques: every edge within a class.
  std::vector<Edge> cliques, bipartite;
  for (NodeId u = 0; u < 8; ++u)
    for (NodeId v = u + 1; v < 8; ++v) {
      if ((u < 4) == (v < 4))
        cliques.emplace_back(u, v);
      else
        bipartite.emplace_back(u, v);
    }
  const LabelVector y = LabelVector::from_labels({0, 0, 0, 0, 1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(class_homophily(build_graph(cliques, 8), y), 1.0);
  EXPECT_DOUBLE_EQ(class_homophily(build_graph(bipartite, 8), y), 0.0);
  EXPECT_DOUBLE_EQ(edge_homophily(build_graph(bipartite, 8), y).value, 0.0);
}

TEST(Homophily, ClassHomophilyMatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = random_graph(50, 0.1, seed + 100);
    Rng rng(seed);
    std::vector<int> lab(50);
    for (auto& l : lab) l = int(rng.below(3));
    const LabelVector y{lab, 3};
    EXPECT_NEAR(class_homophily(g, y), class_homophily_oracle(g, y), 1e-12);
  }
}

TEST(Homophily, ClassWithZeroDegreeCountsAsZero) {
  // Class 2 is a single isolated node.
  const Graph g = build_graph(std::vector<Edge>{{0, 1}, {2, 3}}, 5);
  const LabelVector y{{0, 0, 1, 1, 2}, 3};
  EXPECT_NEAR(class_homophily(g, y), class_homophily_oracle(g, y), 1e-15);
}

TEST(Homophily, NodeHomophilyPerNode) {
  const Graph g = build_graph(std::vector<Edge>{{0, 1}, {0, 2}, {0, 3}}, 5);
  const auto nh = node_homophily(g, LabelVector::from_labels({0, 0, 1, 1, 0}));
  ASSERT_EQ(nh.size(), 5u);
  EXPECT_DOUBLE_EQ(*nh[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(*nh[1], 1.0);
  EXPECT_DOUBLE_EQ(*nh[2], 0.0);
  EXPECT_FALSE(nh[4].has_value());
}

TEST(Homophily, MeasuresStayInUnitInterval) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = random_graph(30, 0.2, seed);
    Rng rng(seed + 7);
    std::vector<int> lab(30);
    for (auto& l : lab) l = int(rng.below(4));
    const LabelVector y{lab, 4};
    const auto rep = homophily_report(g, y);
    EXPECT_GE(rep.edge_homophily, 0.0);
    EXPECT_LE(rep.edge_homophily, 1.0);
    EXPECT_GE(rep.class_homophily, 0.0);
    EXPECT_LE(rep.class_homophily, 1.0);
  }
}

TEST(Homophily, RejectsLabelMismatch) {
  EXPECT_THROW(edge_homophily(path_graph(4), LabelVector::from_labels({0, 1})), InputError);
  EXPECT_THROW(class_homophily(path_graph(3), LabelVector{{0, 5, 1}, 2}), InputError);
}

TEST(Degrees, SumIsTwiceEdges) {
  const Graph g = random_graph(25, 0.3, 5);
  const auto d = degrees(g);
  Index total = 0;
  for (auto x : d) total += x;
  EXPECT_EQ(total, 2 * g.edge_count());
}
