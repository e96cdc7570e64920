#pragma once

// Divergence-weighted edge weights.
//
// For every directed edge (i, j) of the self-looped graph:
//   S_ij = a . (F_i || F_j) + <X_i, X_j>
//   D_ij = beta * JS(F_i, F_j) + (1 - beta) * JS(X_i, X_j)
//   E_ij = exp(S_ij - gamma * D_ij)
//   phi_ij = E_ij / (sqrt(sum_n E_in) * sqrt(sum_n E_jn))
// and a layer aggregates F_i <- sum_j phi_ij F_j over the neighbours of i.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "jsdmp/autodiff.hpp"
#include "jsdmp/error.hpp"
#include "jsdmp/graph.hpp"

namespace jsdmp {

/// How the pairwise Jensen-Shannon term is formed from raw rows.
enum class DivergenceMode {
  /// Softmax each row, mix with the arithmetic mean: the proper JS divergence.
  Normalized,
  /// Raw non-negative rows against the mixture 1/2 softmax(F_i + F_j).
  Literal,
};

/// Which similarity/divergence terms feed the edge weights.
enum class Ablation {
  Full,
  ContextOnly,
  StructureOnly,
  /// E = 1 on every edge: plain symmetric-normalised GCN propagation.
  None,
};

inline std::string_view to_string(DivergenceMode m) {
  return m == DivergenceMode::Normalized ? "normalized" : "literal";
}

inline DivergenceMode divergence_mode_from_string(std::string_view s) {
  if (s == "normalized") return DivergenceMode::Normalized;
  if (s == "literal") return DivergenceMode::Literal;
  throw ConfigError("unknown divergence mode '" + std::string(s) + "' (expected normalized|literal)");
}

inline std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::ContextOnly: return "context_only";
    case Ablation::StructureOnly: return "structure_only";
    case Ablation::None: return "none";
  }
  return "full";
}

inline Ablation ablation_from_string(std::string_view s) {
  if (s == "full") return Ablation::Full;
  if (s == "context_only") return Ablation::ContextOnly;
  if (s == "structure_only") return Ablation::StructureOnly;
  if (s == "none") return Ablation::None;
  throw ConfigError("unknown ablation '" + std::string(s) +
                    "' (expected full|context_only|structure_only|none)");
}

inline constexpr double kExponentClamp = 30.0;

/// Learnables of one divergence-weighted layer.
struct JsdmpLayerParams {
  Parameter w_f;        // D_in x D_out
  Parameter w_x;        // C x C
  Parameter attention;  // 2 D_out x 1
  Parameter beta_raw;   // 1 x 1, beta = sigmoid(beta_raw)
  Parameter gamma;      // 1 x 1

  template <class Rng>
  static JsdmpLayerParams make(const std::string& prefix, std::size_t d_in, std::size_t d_out,
                               std::size_t latent_dim, Rng& rng) {
    JsdmpLayerParams p;
    p.w_f = Parameter(prefix + ".w_f", glorot_uniform(d_in, d_out, rng));
    p.w_x = Parameter(prefix + ".w_x", glorot_uniform(latent_dim, latent_dim, rng));
    p.attention = Parameter(prefix + ".a", glorot_uniform(2 * d_out, 1, rng));
    p.beta_raw = Parameter(prefix + ".beta_raw", Matrix(1, 1, 0.0));
    p.gamma = Parameter(prefix + ".gamma", Matrix(1, 1, 1.0));
    return p;
  }

  std::vector<Parameter*> all() { return {&w_f, &w_x, &attention, &beta_raw, &gamma}; }

  double beta() const { return sigmoid_value(beta_raw.value[0]); }
};

/// Per-edge weights aligned with the canonical edge order (|E| x 1 each).
struct EdgeWeights {
  Tensor values;
  Tensor normalized;
};

/// F = F_in W_f and X = X_in W_x.
inline std::pair<Tensor, Tensor> map_features(const Tensor& f_in, const Tensor& x_in, const Tensor& w_f,
                                              const Tensor& w_x) {
  if (f_in.cols() != w_f.rows()) {
    throw DimensionError("feature mapping: features " + f_in.value().shape_string() + " vs W_f " +
                         w_f.value().shape_string());
  }
  if (x_in.cols() != w_x.rows()) {
    throw DimensionError("latent mapping: positions " + x_in.value().shape_string() + " vs W_x " +
                         w_x.value().shape_string());
  }
  return {matmul(f_in, w_f), matmul(x_in, w_x)};
}

/// a . (F_i || F_j) per edge, computed as (F a_1)_i + (F a_2)_j.
inline Tensor attention_score(const Tensor& f, const Graph& g, const Tensor& a) {
  const std::size_t d = f.cols();
  if (a.rows() != 2 * d || a.cols() != 1) {
    throw DimensionError("attention vector must be " + std::to_string(2 * d) + "x1, got " +
                         a.value().shape_string());
  }
  const Tensor left = matmul(f, slice_rows(a, 0, d));
  const Tensor right = matmul(f, slice_rows(a, d, 2 * d));
  return add(edge_gather(left, g.src()), edge_gather(right, g.dst()));
}

/// (X X^T)_ij per edge.
inline Tensor latent_inner_product(const Tensor& x, const Graph& g) {
  return row_sum(hadamard(edge_gather(x, g.src()), edge_gather(x, g.dst())));
}

/// Per-edge similarity S (|E| x 1): attention term plus latent inner product.
inline Tensor similarity(const Tensor& f, const Tensor& x, const Graph& g, const Tensor& a) {
  return add(attention_score(f, g, a), latent_inner_product(x, g));
}

/// Row-wise Jensen-Shannon divergence between two stacks of distributions
/// (natural log): 1/2 sum_s [p_s log(p_s / m_s) + q_s log(q_s / m_s)], m = (p + q) / 2.
inline Tensor jensen_shannon_rows(const Tensor& p, const Tensor& q) {
  const Tensor m = scale(add(p, q), 0.5);
  const Tensor log_m = log(m);
  const Tensor kl_p = hadamard(p, sub(log(p), log_m));
  const Tensor kl_q = hadamard(q, sub(log(q), log_m));
  return scale(row_sum(add(kl_p, kl_q)), 0.5);
}

/// Per-edge divergence between the rows of `h` at either endpoint.
inline Tensor pairwise_divergence(const Tensor& h, const Graph& g, DivergenceMode mode) {
  if (mode == DivergenceMode::Normalized) {
    // log p is taken per node and then gathered, so only the mixture needs a
    // per-edge log.
    const Tensor p = row_softmax(h);
    const Tensor log_p = log(p);
    const Tensor pi = edge_gather(p, g.src()), pj = edge_gather(p, g.dst());
    const Tensor log_m = log(scale(add(pi, pj), 0.5));
    const Tensor kl_i = hadamard(pi, sub(edge_gather(log_p, g.src()), log_m));
    const Tensor kl_j = hadamard(pj, sub(edge_gather(log_p, g.dst()), log_m));
    return scale(row_sum(add(kl_i, kl_j)), 0.5);
  }
  for (double v : h.value().values()) {
    if (v < 0.0) {
      throw DomainError(
          "literal divergence needs non-negative rows but found " + std::to_string(v) +
          "; use the normalized divergence mode");
    }
  }
  const Tensor hi = edge_gather(h, g.src());
  const Tensor hj = edge_gather(h, g.dst());
  const Tensor log_m = log(scale(row_softmax(add(hi, hj)), 0.5));
  const Tensor kl_i = hadamard(hi, sub(log(hi), log_m));
  const Tensor kl_j = hadamard(hj, sub(log(hj), log_m));
  return scale(row_sum(add(kl_i, kl_j)), 0.5);
}

/// Contextual divergence D' over mapped text features.
inline Tensor contextual_divergence(const Tensor& f, const Graph& g, DivergenceMode mode) {
  return pairwise_divergence(f, g, mode);
}

/// Structural divergence D'' over mapped latent positions.
inline Tensor structural_divergence(const Tensor& x, const Graph& g, DivergenceMode mode) {
  return pairwise_divergence(x, g, mode);
}

/// beta * Dc + (1 - beta) * Ds with beta a 1x1 tensor in (0, 1).
inline Tensor combined_divergence(const Tensor& dc, const Tensor& ds, const Tensor& beta) {
  const Tensor one_minus = add_scalar(scale(beta, -1.0), 1.0);
  return add(mul_scalar(dc, beta), mul_scalar(ds, one_minus));
}

/// E = exp(clamp(S - gamma D, -30, 30)).
inline Tensor edge_weights(const Tensor& s, const Tensor& d, const Tensor& gamma) {
  const Tensor exponent = sub(s, mul_scalar(d, gamma));
  const Matrix& ev = exponent.value();
  for (std::size_t e = 0; e < ev.size(); ++e) {
    if (std::isnan(ev[e])) {
      throw NumericError("NaN edge-weight exponent on edge " + std::to_string(e));
    }
  }
  return exp(clamp(exponent, -kExponentClamp, kExponentClamp));
}

/// phi_ij = E_ij / sqrt(rowsum_i * rowsum_j), row sums over outgoing edges in
/// canonical order.
inline Tensor sym_normalize(const Tensor& e, const Graph& g) {
  const Tensor row_sums = edge_scatter_sum(e, g.src(), g.num_nodes());
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    if (!(row_sums.value()[i] > 0.0)) {
      throw StateError("edge-weight row sum of node " + std::to_string(i) + " is not positive");
    }
  }
  const Tensor inv = rsqrt(row_sums);
  return hadamard(e, hadamard(edge_gather(inv, g.src()), edge_gather(inv, g.dst())));
}

/// out_i = sum over edges (i, j) of phi_ij * h_j.
inline Tensor propagate(const Tensor& phi, const Tensor& h, const Graph& g) {
  return edge_scatter_sum(scale_rows(edge_gather(h, g.dst()), phi), g.src(), g.num_nodes());
}

/// Standard GCN coefficients 1 / sqrt(d_i d_j) per edge.
inline Matrix gcn_coefficients(const Graph& g) {
  Matrix c(g.num_edges(), 1);
  const auto deg = g.degrees();
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    c[e] = 1.0 / std::sqrt(static_cast<double>(deg[g.src()[e]]) * static_cast<double>(deg[g.dst()[e]]));
  }
  return c;
}

/// Full edge-weight pipeline for already-mapped F and X.
inline EdgeWeights compute_edge_weights(const Tensor& f, const Tensor& x, const Graph& g, Tape& tape,
                                        JsdmpLayerParams& p, Ablation ablation, DivergenceMode mode) {
  if (ablation == Ablation::None) {
    return {tape.constant(Matrix(g.num_edges(), 1, 1.0)), tape.constant(gcn_coefficients(g))};
  }
  const Tensor gamma = tape.parameter(p.gamma);
  Tensor s, d;
  if (ablation == Ablation::ContextOnly) {
    s = attention_score(f, g, tape.parameter(p.attention));
    d = contextual_divergence(f, g, mode);
  } else if (ablation == Ablation::StructureOnly) {
    s = latent_inner_product(x, g);
    d = structural_divergence(x, g, mode);
  } else {
    s = similarity(f, x, g, tape.parameter(p.attention));
    const Tensor beta = sigmoid(tape.parameter(p.beta_raw));
    d = combined_divergence(contextual_divergence(f, g, mode), structural_divergence(x, g, mode), beta);
  }
  const Tensor e = edge_weights(s, d, gamma);
  return {e, sym_normalize(e, g)};
}

}  // namespace jsdmp
