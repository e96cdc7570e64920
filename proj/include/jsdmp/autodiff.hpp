#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records one forward pass. Each recorded node owns its value, a lazily
// allocated gradient buffer, and a closure that pushes the node's upstream
// gradient into its inputs. Tensors are cheap handles (tape, node id).
//
// Index spans, sparse matrices, labels and masks handed to the ops below are
// referenced, not copied: they must outlive the tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jsdmp/error.hpp"
#include "jsdmp/matrix.hpp"

namespace jsdmp {

/// A named learnable matrix that persists across tapes.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), trainable(train) {}
};

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Transpose,
  Add,
  Sub,
  Hadamard,
  Scale,
  AddScalar,
  MulScalar,
  Exp,
  Log,
  Relu,
  Sigmoid,
  Rsqrt,
  Clamp,
  RowSoftmax,
  RowSum,
  Sum,
  Gather,
  ScatterSum,
  ScaleRows,
  SparseMatMul,
  Dropout,
  SoftmaxCrossEntropy,
  AddBias,
  Element,
  SliceRows,
};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Hadamard: return "hadamard";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MulScalar: return "mul_scalar";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Rsqrt: return "rsqrt";
    case OpKind::Clamp: return "clamp";
    case OpKind::RowSoftmax: return "row_softmax";
    case OpKind::RowSum: return "row_sum";
    case OpKind::Sum: return "sum";
    case OpKind::Gather: return "edge_gather";
    case OpKind::ScatterSum: return "edge_scatter_sum";
    case OpKind::ScaleRows: return "scale_rows";
    case OpKind::SparseMatMul: return "sparse_matmul";
    case OpKind::Dropout: return "dropout";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Element: return "element";
    case OpKind::SliceRows: return "slice_rows";
  }
  return "unknown";
}

inline std::optional<OpKind> op_from_name(std::string_view name) {
  for (int k = 0; k <= static_cast<int>(OpKind::SliceRows); ++k) {
    if (op_name(static_cast<OpKind>(k)) == name) return static_cast<OpKind>(k);
  }
  return std::nullopt;
}

/// Natural-log arguments are clamped to at least this value.
inline constexpr double kLogEpsilon = 1e-12;

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  inline const Matrix& value() const;
  inline const Matrix& grad() const;
  inline bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()[0]; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

namespace detail {
// Process-wide fault injection used by the gradient-check harness tests: the
// upstream gradient handed to every backward rule of this op kind is negated.
inline std::optional<OpKind>& sign_flip_slot() {
  static std::optional<OpKind> slot;
  return slot;
}
}  // namespace detail

/// Negate the backward rule of `kind` for every tape (nullopt restores).
inline void inject_backward_sign_flip(std::optional<OpKind> kind) { detail::sign_flip_slot() = kind; }

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor parameter(Parameter& p) {
    const std::size_t id = push(OpKind::Leaf, p.value, p.trainable, {}, nullptr);
    nodes_[id].param = &p;
    if (p.trainable) params_.push_back(&p);
    return {this, id};
  }

  Tensor constant(Matrix m) { return {this, push(OpKind::Constant, std::move(m), false, {}, nullptr)}; }

  Tensor record(OpKind kind, Matrix value, std::vector<std::size_t> inputs, Backward fn) {
    bool rg = false;
    for (auto in : inputs) rg = rg || nodes_[in].requires_grad;
#ifndef NDEBUG
    for (double v : value.values()) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value produced by " + std::string(op_name(kind)));
      }
    }
#endif
    return {this, push(kind, std::move(value), rg, std::move(inputs), rg ? std::move(fn) : nullptr)};
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Parameter*>& parameters() const noexcept { return params_; }

  /// Gradient buffer for node `id`, zero-initialised on first use.
  Matrix& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Reverse sweep from a scalar loss. Writes gradients into every trainable
  /// Parameter registered on this tape (zero for unreachable ones).
  void backward(const Tensor& loss) {
    if (nodes_.empty() || loss.tape() != this || loss.id() >= nodes_.size()) {
      throw StateError("backward called before a forward pass was recorded on this tape");
    }
    if (backward_done_) throw StateError("backward already ran on this tape; record a new forward pass");
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw DimensionError("backward requires a 1x1 loss, got " + lv.shape_string());
    }
    backward_done_ = true;
    for (auto* p : params_) p->grad = Matrix(p->value.rows(), p->value.cols());
    grad(loss.id())[0] = 1.0;

    const auto flip = detail::sign_flip_slot();
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) {
        n.param->grad += n.grad;
        continue;
      }
      if (!n.backward) continue;
      if (flip && *flip == n.kind) {
        Matrix neg = n.grad;
        for (auto& v : neg.values()) v = -v;
        n.backward(*this, neg);
      } else {
        n.backward(*this, n.grad);
      }
    }
  }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter* param = nullptr;
  };

  std::size_t push(OpKind kind, Matrix value, bool rg, std::vector<std::size_t> inputs, Backward fn) {
    if (backward_done_) throw StateError("cannot record onto a tape after backward");
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Parameter*> params_;
  bool backward_done_ = false;
};

inline const Matrix& Tensor::value() const { return tape_->value(id_); }
inline const Matrix& Tensor::grad() const { return tape_->grad(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline Tape& same_tape(const Tensor& a, const Tensor& b) {
  if (a.tape() != b.tape()) throw StateError("operands recorded on different tapes");
  return *a.tape();
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + " shape mismatch: " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
}

inline void require_scalar(const Tensor& s, std::string_view op) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw DimensionError(std::string(op) + " expects a 1x1 scalar, got " + s.value().shape_string());
  }
}

// Elementwise unary op with derivative expressed through (x, y).
template <class Fwd, class Deriv>
Tensor unary(OpKind kind, const Tensor& x, Fwd f, Deriv d) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const std::size_t xi = x.id();
  const std::size_t yi = t.size();
  return t.record(kind, std::move(y), {xi}, [xi, yi, d](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(xi);
    const Matrix& yv = tp.value(yi);
    Matrix& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i], yv[i]);
  });
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = detail::same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions disagree: " + a.value().shape_string() + " * " +
                         b.value().shape_string());
  }
  Matrix c(a.rows(), b.cols());
  gemm_accumulate(a.value(), b.value(), c);
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(OpKind::MatMul, std::move(c), {ai, bi}, [ai, bi](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ai)) gemm_nt_accumulate(g, tp.value(bi), tp.grad(ai));
    if (tp.requires_grad(bi)) gemm_tn_accumulate(tp.value(ai), g, tp.grad(bi));
  });
}

inline Tensor transpose(const Tensor& x) {
  Tape& t = *x.tape();
  const std::size_t xi = x.id();
  return t.record(OpKind::Transpose, transpose(x.value()), {xi}, [xi](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gx(j, i) += g(i, j);
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Matrix c = a.value();
  c += b.value();
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(OpKind::Add, std::move(c), {ai, bi}, [ai, bi](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ai)) tp.grad(ai) += g;
    if (tp.requires_grad(bi)) tp.grad(bi) += g;
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Matrix c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(OpKind::Sub, std::move(c), {ai, bi}, [ai, bi](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ai)) tp.grad(ai) += g;
    if (tp.requires_grad(bi)) {
      Matrix& gb = tp.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "hadamard");
  Matrix c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(OpKind::Hadamard, std::move(c), {ai, bi}, [ai, bi](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ai)) {
      Matrix& ga = tp.grad(ai);
      const Matrix& bv = tp.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(bi)) {
      Matrix& gb = tp.grad(bi);
      const Matrix& av = tp.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(OpKind::Scale, x, [c](double v) { return c * v; },
                       [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(OpKind::AddScalar, x, [c](double v) { return v + c; },
                       [](double, double) { return 1.0; });
}

/// x * s where s is a 1x1 tensor.
inline Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  Tape& t = detail::same_tape(x, s);
  detail::require_scalar(s, "mul_scalar");
  const double sv = s.scalar();
  Matrix y = x.value();
  for (auto& v : y.values()) v *= sv;
  const std::size_t xi = x.id(), si = s.id();
  return t.record(OpKind::MulScalar, std::move(y), {xi, si}, [xi, si](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(xi);
    if (tp.requires_grad(xi)) {
      const double sv = tp.value(si)[0];
      Matrix& gx = tp.grad(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
    if (tp.requires_grad(si)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      tp.grad(si)[0] += acc;
    }
  });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(OpKind::Exp, x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

/// Natural log with arguments clamped to >= kLogEpsilon. Negative inputs are a
/// domain error; the clamped region has zero derivative.
inline Tensor log(const Tensor& x) {
  for (std::size_t i = 0; i < x.value().size(); ++i) {
    const double v = x.value()[i];
    if (!(v >= 0.0)) {
      throw DomainError("log of non-positive value " + std::to_string(v) + " at flat index " +
                        std::to_string(i));
    }
  }
  return detail::unary(OpKind::Log, x, [](double v) { return std::log(std::max(v, kLogEpsilon)); },
                       [](double v, double) { return v >= kLogEpsilon ? 1.0 / v : 0.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(OpKind::Sigmoid, x, sigmoid_value,
                       [](double, double y) { return y * (1.0 - y); });
}

/// x^(-1/2), strictly positive inputs only.
inline Tensor rsqrt(const Tensor& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("rsqrt of non-positive value " + std::to_string(v));
  }
  return detail::unary(OpKind::Rsqrt, x, [](double v) { return 1.0 / std::sqrt(v); },
                       [](double, double y) { return -0.5 * y * y * y; });
}

/// Clamp into [lo, hi]; gradient passes only strictly inside the interval.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary(OpKind::Clamp, x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
                       [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

inline Tensor row_softmax(const Tensor& x) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    auto out = y.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) z += (out[j] = std::exp(in[j] - mx));
    for (auto& v : out) v /= z;
  }
  const std::size_t xi = x.id(), yi = t.size();
  return t.record(OpKind::RowSoftmax, std::move(y), {xi}, [xi, yi](Tape& tp, const Matrix& g) {
    const Matrix& yv = tp.value(yi);
    Matrix& gx = tp.grad(xi);
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      auto yr = yv.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += gr[j] * yr[j];
      auto out = gx.row(r);
      for (std::size_t j = 0; j < yr.size(); ++j) out[j] += yr[j] * (gr[j] - dot);
    }
  });
}

/// n x d -> n x 1
inline Tensor row_sum(const Tensor& x) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v;
    y[r] = s;
  }
  const std::size_t xi = x.id();
  return t.record(OpKind::RowSum, std::move(y), {xi}, [xi](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad(xi);
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (auto& v : gx.row(r)) v += g[r];
  });
}

/// Sum of all entries -> 1 x 1
inline Tensor sum(const Tensor& x) {
  Tape& t = *x.tape();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t xi = x.id();
  return t.record(OpKind::Sum, Matrix(1, 1, s), {xi}, [xi](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad(xi);
    for (auto& v : gx.values()) v += g[0];
  });
}

/// Entry (r, c) of x as a 1 x 1 tensor.
inline Tensor element(const Tensor& x, std::size_t r, std::size_t c) {
  if (r >= x.rows() || c >= x.cols()) {
    throw IndexError("element (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                     x.value().shape_string());
  }
  Tape& t = *x.tape();
  const std::size_t xi = x.id();
  return t.record(OpKind::Element, Matrix(1, 1, x.value()(r, c)), {xi},
                  [xi, r, c](Tape& tp, const Matrix& g) { tp.grad(xi)(r, c) += g[0]; });
}

/// Rows [begin, end) of x.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows()) {
    throw IndexError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     x.value().shape_string());
  }
  const std::size_t d = x.cols();
  Matrix y(end - begin, d);
  std::copy_n(x.value().data() + begin * d, (end - begin) * d, y.data());
  Tape& t = *x.tape();
  const std::size_t xi = x.id();
  return t.record(OpKind::SliceRows, std::move(y), {xi}, [xi, begin, d](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * d + i] += g[i];
  });
}

/// Row e of the output is row index[e] of x. Backward scatter-adds in
/// ascending e, so the reduction order is fixed.
inline Tensor edge_gather(const Tensor& x, std::span<const std::size_t> index) {
  const Matrix& xv = x.value();
  const std::size_t d = xv.cols();
  Matrix y(index.size(), d);
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= xv.rows()) {
      throw IndexError("edge " + std::to_string(e) + " references node " + std::to_string(index[e]) +
                       " but only " + std::to_string(xv.rows()) + " rows exist");
    }
    std::copy_n(xv.data() + index[e] * d, d, y.data() + e * d);
  }
  Tape& t = *x.tape();
  const std::size_t xi = x.id();
  return t.record(OpKind::Gather, std::move(y), {xi}, [xi, index, d](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad(xi);
    for (std::size_t e = 0; e < index.size(); ++e) {
      double* dst = gx.data() + index[e] * d;
      const double* src = g.data() + e * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

/// Row i of the output sums the message rows e with index[e] == i, in
/// ascending e. Rows with no messages stay zero.
inline Tensor edge_scatter_sum(const Tensor& messages, std::span<const std::size_t> index, std::size_t n) {
  const Matrix& mv = messages.value();
  if (mv.rows() != index.size()) {
    throw DimensionError("scatter_sum got " + std::to_string(mv.rows()) + " messages but " +
                         std::to_string(index.size()) + " indices");
  }
  const std::size_t d = mv.cols();
  Matrix y(n, d);
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= n) {
      throw IndexError("edge " + std::to_string(e) + " targets node " + std::to_string(index[e]) +
                       " >= n = " + std::to_string(n));
    }
    double* dst = y.data() + index[e] * d;
    const double* src = mv.data() + e * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  Tape& t = *messages.tape();
  const std::size_t mi = messages.id();
  return t.record(OpKind::ScatterSum, std::move(y), {mi}, [mi, index, d](Tape& tp, const Matrix& g) {
    Matrix& gm = tp.grad(mi);
    for (std::size_t e = 0; e < index.size(); ++e) {
      const double* src = g.data() + index[e] * d;
      double* dst = gm.data() + e * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

/// Row e of m scaled by w[e]; w is |E| x 1.
inline Tensor scale_rows(const Tensor& m, const Tensor& w) {
  Tape& t = detail::same_tape(m, w);
  if (w.cols() != 1 || w.rows() != m.rows()) {
    throw DimensionError("scale_rows expects weights " + std::to_string(m.rows()) + "x1, got " +
                         w.value().shape_string());
  }
  Matrix y = m.value();
  const std::size_t d = y.cols();
  for (std::size_t e = 0; e < y.rows(); ++e)
    for (std::size_t j = 0; j < d; ++j) y(e, j) *= w.value()[e];
  const std::size_t mi = m.id(), wi = w.id();
  return t.record(OpKind::ScaleRows, std::move(y), {mi, wi}, [mi, wi, d](Tape& tp, const Matrix& g) {
    const Matrix& mv = tp.value(mi);
    const Matrix& wv = tp.value(wi);
    if (tp.requires_grad(mi)) {
      Matrix& gm = tp.grad(mi);
      for (std::size_t e = 0; e < mv.rows(); ++e)
        for (std::size_t j = 0; j < d; ++j) gm(e, j) += g(e, j) * wv[e];
    }
    if (tp.requires_grad(wi)) {
      Matrix& gw = tp.grad(wi);
      for (std::size_t e = 0; e < mv.rows(); ++e) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += g(e, j) * mv(e, j);
        gw[e] += s;
      }
    }
  });
}

/// S * x for a fixed (non-differentiable) sparse S.
inline Tensor sparse_matmul(const SparseMatrix& s, const Tensor& x) {
  Tape& t = *x.tape();
  const std::size_t xi = x.id();
  const SparseMatrix* sp = &s;
  return t.record(OpKind::SparseMatMul, s.multiply(x.value()), {xi}, [xi, sp](Tape& tp, const Matrix& g) {
    tp.grad(xi) += sp->multiply_transposed(g);
  });
}

/// x + b with b a 1 x d row broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  Tape& t = detail::same_tape(x, b);
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw DimensionError("add_bias expects 1x" + std::to_string(x.cols()) + " bias, got " +
                         b.value().shape_string());
  }
  Matrix y = x.value();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t j = 0; j < y.cols(); ++j) y(r, j) += b.value()[j];
  const std::size_t xi = x.id(), bi = b.id();
  return t.record(OpKind::AddBias, std::move(y), {xi, bi}, [xi, bi](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(xi)) tp.grad(xi) += g;
    if (tp.requires_grad(bi)) {
      Matrix& gb = tp.grad(bi);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(r, j);
    }
  });
}

/// Inverted dropout. Eval mode (or rate 0) is the identity.
template <class Rng>
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const Matrix& xv = x.value();
  Matrix mask(xv.rows(), xv.cols());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask.values()) m = u(rng) < rate ? 0.0 : keep_scale;
  Matrix y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  Tape& t = *x.tape();
  const std::size_t xi = x.id();
  return t.record(OpKind::Dropout, std::move(y), {xi}, [xi, mask = std::move(mask)](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

/// Mean softmax cross-entropy over rows with mask[r] set.
inline Tensor masked_softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                           std::span<const std::uint8_t> mask) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows() || mask.size() != z.rows()) {
    throw DimensionError("cross-entropy: logits have " + std::to_string(z.rows()) + " rows, labels " +
                         std::to_string(labels.size()) + ", mask " + std::to_string(mask.size()));
  }
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw ConfigError("cross-entropy mask selects no nodes");

  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (!mask[r]) continue;
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
      throw IndexError("label " + std::to_string(y) + " of node " + std::to_string(r) + " outside [0, " +
                       std::to_string(z.cols()) + ")");
    }
    auto zr = z.row(r);
    const double mx = *std::max_element(zr.begin(), zr.end());
    double s = 0.0;
    for (double v : zr) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    loss += lse - zr[static_cast<std::size_t>(y)];
    auto pr = probs.row(r);
    for (std::size_t j = 0; j < zr.size(); ++j) pr[j] = std::exp(zr[j] - lse);
  }
  const double inv = 1.0 / static_cast<double>(count);
  Tape& t = *logits.tape();
  const std::size_t li = logits.id();
  return t.record(OpKind::SoftmaxCrossEntropy, Matrix(1, 1, loss * inv), {li},
                  [li, labels = std::vector<int>(labels.begin(), labels.end()),
                   mask = std::vector<std::uint8_t>(mask.begin(), mask.end()), inv,
                   probs = std::move(probs)](Tape& tp, const Matrix& g) {
                    Matrix& gl = tp.grad(li);
                    const double s = g[0] * inv;
                    for (std::size_t r = 0; r < gl.rows(); ++r) {
                      if (!mask[r]) continue;
                      auto pr = probs.row(r);
                      auto out = gl.row(r);
                      for (std::size_t j = 0; j < out.size(); ++j) out[j] += s * pr[j];
                      out[static_cast<std::size_t>(labels[r])] -= s;
                    }
                  });
}

}  // namespace jsdmp
