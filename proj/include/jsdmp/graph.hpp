#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jsdmp/error.hpp"
#include "jsdmp/matrix.hpp"

namespace jsdmp {

using Edge = std::pair<std::size_t, std::size_t>;

/// Immutable undirected graph stored as a symmetric, self-looped directed edge
/// list sorted by (src, dst). Because the list is src-sorted it doubles as the
/// CSR target array: node i owns edges [offsets[i], offsets[i+1]).
class Graph {
 public:
  Graph() = default;

  std::size_t num_nodes() const noexcept { return n_; }
  std::size_t num_edges() const noexcept { return src_.size(); }

  std::span<const std::size_t> src() const noexcept { return src_; }
  std::span<const std::size_t> dst() const noexcept { return dst_; }
  std::span<const std::size_t> offsets() const noexcept { return offsets_; }
  std::span<const std::size_t> degrees() const noexcept { return degrees_; }

  std::span<const std::size_t> neighbors(std::size_t i) const {
    return {dst_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  /// Number of (u, v) pairs supplied to build_graph, before any cleanup.
  std::size_t raw_edge_count() const noexcept { return raw_edges_; }
  /// Distinct undirected non-loop edges after symmetrisation and dedup.
  std::size_t undirected_edge_count() const noexcept { return (src_.size() - n_) / 2; }

  bool has_edge(std::size_t i, std::size_t j) const {
    auto nb = neighbors(i);
    return std::binary_search(nb.begin(), nb.end(), j);
  }

  /// Dense 0/1 adjacency including self-loops (tests and small oracles only).
  Matrix dense_adjacency() const {
    Matrix a(n_, n_);
    for (std::size_t e = 0; e < src_.size(); ++e) a(src_[e], dst_[e]) = 1.0;
    return a;
  }

  friend Graph build_graph(std::size_t n, std::span<const Edge> raw_edges);

 private:
  std::size_t n_ = 0;
  std::size_t raw_edges_ = 0;
  std::vector<std::size_t> src_;
  std::vector<std::size_t> dst_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> degrees_;
};

/// Symmetrise, deduplicate and self-loop `raw_edges` over nodes [0, n).
inline Graph build_graph(std::size_t n, std::span<const Edge> raw_edges) {
  std::vector<Edge> all;
  all.reserve(2 * raw_edges.size() + n);
  for (std::size_t k = 0; k < raw_edges.size(); ++k) {
    const auto [u, v] = raw_edges[k];
    if (u >= n || v >= n) {
      throw LoadError("edge #" + std::to_string(k + 1) + " (" + std::to_string(u) + ", " +
                      std::to_string(v) + ") references a node outside [0, " + std::to_string(n) + ")");
    }
    all.emplace_back(u, v);
    all.emplace_back(v, u);
  }
  for (std::size_t i = 0; i < n; ++i) all.emplace_back(i, i);
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  Graph g;
  g.n_ = n;
  g.raw_edges_ = raw_edges.size();
  g.src_.reserve(all.size());
  g.dst_.reserve(all.size());
  g.offsets_.assign(n + 1, 0);
  g.degrees_.assign(n, 0);
  for (const auto& [u, v] : all) {
    g.src_.push_back(u);
    g.dst_.push_back(v);
    ++g.degrees_[u];
  }
  for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] = g.offsets_[i] + g.degrees_[i];
  return g;
}

inline Graph build_graph(std::size_t n, const std::vector<Edge>& raw_edges) {
  return build_graph(n, std::span<const Edge>(raw_edges));
}

/// Canonical (src, dst) edge enumeration, sorted by (src, dst).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> edge_endpoints(const Graph& g) {
  return {{g.src().begin(), g.src().end()}, {g.dst().begin(), g.dst().end()}};
}

/// L = I - D^{-1/2} A D^{-1/2} with A self-looped; one entry per edge, in
/// canonical edge order.
inline SparseMatrix normalized_laplacian(const Graph& g) {
  SparseMatrix l;
  l.rows = l.cols = g.num_nodes();
  const auto src = g.src();
  const auto dst = g.dst();
  const auto deg = g.degrees();
  l.row_index.assign(src.begin(), src.end());
  l.col_index.assign(dst.begin(), dst.end());
  l.value.resize(src.size());
  for (std::size_t e = 0; e < src.size(); ++e) {
    const double a = 1.0 / std::sqrt(static_cast<double>(deg[src[e]]) * static_cast<double>(deg[dst[e]]));
    l.value[e] = (src[e] == dst[e] ? 1.0 : 0.0) - a;
  }
  return l;
}

/// Fraction of non-loop edges joining same-label endpoints (1 if none).
inline double edge_homophily(const Graph& g, std::span<const int> labels) {
  std::size_t same = 0, total = 0;
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    if (g.src()[e] == g.dst()[e]) continue;
    ++total;
    if (labels[g.src()[e]] == labels[g.dst()[e]]) ++same;
  }
  return total == 0 ? 1.0 : static_cast<double>(same) / static_cast<double>(total);
}

}  // namespace jsdmp
