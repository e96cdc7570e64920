#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace jsdmp;
using namespace jsdmp::testing;

TEST(BuildGraph, TwoNodesGetSymmetrisedWithSelfLoops) {
  const Graph g = build_graph(2, std::vector<Edge>{{0, 1}});
  const auto [src, dst] = edge_endpoints(g);
  EXPECT_EQ(src, (std::vector<std::size_t>{0, 0, 1, 1}));
  EXPECT_EQ(dst, (std::vector<std::size_t>{0, 1, 0, 1}));
  EXPECT_EQ(g.raw_edge_count(), 1u);
  EXPECT_EQ(g.undirected_edge_count(), 1u);
}

TEST(BuildGraph, IsolatedNodesKeepSelfLoops) {
  EXPECT_EQ(build_graph(1, std::vector<Edge>{}).num_edges(), 1u);
  const Graph g = build_graph(3, std::vector<Edge>{});
  EXPECT_EQ(g.num_edges(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(g.has_edge(i, i));
}

TEST(BuildGraph, RejectsOutOfRangeIndexWithEdgeNumber) {
  try {
    build_graph(3, std::vector<Edge>{{0, 1}, {2, 3}});
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("edge #2"), std::string::npos);
  }
}

TEST(BuildGraph, DuplicatesAndReversedPairsCollapse) {
  const Graph g = build_graph(3, std::vector<Edge>{{0, 1}, {1, 0}, {0, 1}, {2, 2}, {1, 2}});
  EXPECT_EQ(g.raw_edge_count(), 5u);
  EXPECT_EQ(g.undirected_edge_count(), 2u);
  EXPECT_EQ(g.num_edges(), 2 * 2 + 3u);
}

TEST(BuildGraph, InvariantsHoldOnRandomEdgeLists) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 15;
    std::uniform_int_distribution<std::size_t> node(0, n - 1);
    std::vector<Edge> raw;
    const std::size_t m = rng() % 40;
    for (std::size_t k = 0; k < m; ++k) raw.emplace_back(node(rng), node(rng));
    const Graph g = build_graph(n, raw);

    std::set<Edge> seen;
    std::size_t loops = 0;
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      const Edge ed{g.src()[e], g.dst()[e]};
      EXPECT_TRUE(seen.insert(ed).second) << "duplicate edge";
      EXPECT_TRUE(g.has_edge(ed.second, ed.first)) << "asymmetric edge";
      if (ed.first == ed.second) ++loops;
    }
    EXPECT_EQ(loops, n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto nb = g.neighbors(i);
      EXPECT_TRUE(std::is_sorted(nb.begin(), nb.end()));
      EXPECT_EQ(nb.size(), g.degrees()[i]);
      EXPECT_GE(g.degrees()[i], 1u);
    }
    for (const auto& [u, v] : raw) EXPECT_TRUE(g.has_edge(u, v));
    EXPECT_EQ(g.num_edges(), 2 * g.undirected_edge_count() + n);
    EXPECT_EQ(edge_endpoints(g), edge_endpoints(g));
  }
}

TEST(Laplacian, SingleNodeIsZero) {
  const Graph g = build_graph(1, std::vector<Edge>{});
  EXPECT_EQ(normalized_laplacian(g).to_dense(), (Matrix{{0.0}}));
}

TEST(Laplacian, TwoNodeHandComputation) {
  const Graph g = build_graph(2, std::vector<Edge>{{0, 1}});
  const Matrix l = normalized_laplacian(g).to_dense();
  EXPECT_NEAR(l(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(l(1, 1), 0.5, 1e-15);
  EXPECT_NEAR(l(0, 1), -0.5, 1e-15);
  EXPECT_NEAR(l(1, 0), -0.5, 1e-15);
  const Matrix x{{3.0}, {3.0}};
  const Matrix lx = normalized_laplacian(g).multiply(x);
  EXPECT_NEAR(lx[0] * 3.0 + lx[1] * 3.0, 0.0, 1e-12);
}

TEST(Laplacian, IsSymmetricAndPositiveSemidefinite) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = build_graph(10, random_edges(10, 0.3, seed));
    const SparseMatrix l = normalized_laplacian(g);
    const Matrix dense = l.to_dense();
    EXPECT_LT(max_abs_diff(dense, transpose(dense)), 1e-15);
    for (std::uint64_t k = 0; k < 10; ++k) {
      const Matrix x = random_matrix(10, 3, seed * 100 + k);
      const Matrix lx = l.multiply(x);
      double tr = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) tr += x[i] * lx[i];
      EXPECT_GE(tr, -1e-12);
    }
  }
}

TEST(Laplacian, QuadraticFormEqualsEdgeDifferenceSum) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = build_graph(9, random_edges(9, 0.4, seed));
    const Matrix x = random_matrix(9, 1, seed + 77);
    const Matrix lx = normalized_laplacian(g).multiply(x);
    double quad = 0.0;
    for (std::size_t i = 0; i < 9; ++i) quad += x[i] * lx[i];
    double edges = 0.0;
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      const auto i = g.src()[e], j = g.dst()[e];
      const double diff = x[i] / std::sqrt(double(g.degrees()[i])) - x[j] / std::sqrt(double(g.degrees()[j]));
      edges += 0.5 * diff * diff;
    }
    EXPECT_NEAR(quad, edges, 1e-10);
  }
}

TEST(Graph, EdgeHomophily) {
  const Graph g = build_graph(4, std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}});
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_NEAR(edge_homophily(g, labels), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(edge_homophily(build_graph(2, std::vector<Edge>{}), labels), 1.0);
}
