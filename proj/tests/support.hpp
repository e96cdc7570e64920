#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "jsdmp/jsdmp.hpp"

namespace jsdmp::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return uniform_matrix(r, c, lo, hi, rng);
}

/// Worst relative error between the tape gradient and central differences of
/// f with respect to every entry of `inputs`, relative to the largest
/// gradient magnitude (absolute when all gradients vanish).
inline double fd_relative_error(std::vector<Matrix> inputs, const std::function<Tensor(Tape&, std::vector<Tensor>&)>& f,
                                double h = 1e-6) {
  std::vector<Parameter> params;
  for (std::size_t k = 0; k < inputs.size(); ++k) params.emplace_back("in" + std::to_string(k), inputs[k]);
  auto eval = [&](bool grad) {
    Tape tape;
    std::vector<Tensor> ts;
    for (auto& p : params) ts.push_back(tape.parameter(p));
    const Tensor out = f(tape, ts);
    if (grad) tape.backward(out);
    return out.scalar();
  };
  eval(true);
  double max_diff = 0.0, scale = 0.0;
  for (auto& p : params) {
    const Matrix analytic = p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = eval(false);
      p.value[i] = orig - h;
      const double down = eval(false);
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
    }
  }
  return scale > 1e-12 ? max_diff / scale : max_diff;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

/// G(n, p) edge list over [0, n).
inline std::vector<Edge> random_edges(std::size_t n, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (u(rng) < p) edges.emplace_back(i, j);
  return edges;
}

/// Per-edge values as a dense n x n matrix (zero off the edge set).
inline Matrix edge_values_dense(const Graph& g, const Matrix& per_edge) {
  Matrix m(g.num_nodes(), g.num_nodes());
  for (std::size_t e = 0; e < g.num_edges(); ++e) m(g.src()[e], g.dst()[e]) = per_edge[e];
  return m;
}

/// Small labelled dataset with a stratified split, for model and loop tests.
inline Dataset small_dataset(std::size_t n, double homophily, std::uint64_t seed, std::size_t classes = 3,
                             std::size_t features = 20) {
  SynthConfig cfg;
  cfg.num_nodes = n;
  cfg.num_classes = classes;
  cfg.feature_dim = features;
  cfg.homophily = homophily;
  cfg.avg_degree = 6.0;
  Rng rng(seed);
  Dataset ds = synthesize_graph(cfg, rng);
  prepare_splits(ds, SplitMode::Fractional, seed);
  return ds;
}

}  // namespace jsdmp::testing
