#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jsdmp/error.hpp"

namespace jsdmp {

/// Dense row-major matrix of doubles. Plain value type; the autodiff layer
/// wraps these in tape nodes.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + std::to_string(rows) + "x" +
                           std::to_string(cols));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix& operator+=(const Matrix& o) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

// c += a * b, skipping zero entries of a (input features are mostly zeros).
inline void gemm_accumulate(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* crow = c.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a^T * b
inline void gemm_tn_accumulate(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data() + i * k;
    const double* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a * b^T
inline void gemm_nt_accumulate(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data() + i * k;
    double* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

inline Matrix dense_matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions disagree: " + a.shape_string() + " * " +
                         b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  gemm_accumulate(a, b, c);
  return c;
}

/// Uniform random matrix in [lo, hi).
template <class Rng>
Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = dist(rng);
  return m;
}

/// Glorot/Xavier uniform initialisation for a fan_in x fan_out weight.
template <class Rng>
Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform_matrix(rows, cols, -limit, limit, rng);
}

/// Sparse matrix in coordinate form with a row-sorted layout.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_index;
  std::vector<std::size_t> col_index;
  std::vector<double> value;

  std::size_t nnz() const noexcept { return value.size(); }

  Matrix to_dense() const {
    Matrix m(rows, cols);
    for (std::size_t e = 0; e < nnz(); ++e) m(row_index[e], col_index[e]) += value[e];
    return m;
  }

  /// y = S * x
  Matrix multiply(const Matrix& x) const {
    if (x.rows() != cols) {
      throw DimensionError("sparse matmul shape mismatch: " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " * " + x.shape_string());
    }
    Matrix y(rows, x.cols());
    for (std::size_t e = 0; e < nnz(); ++e) {
      const double v = value[e];
      auto src = x.row(col_index[e]);
      auto dst = y.row(row_index[e]);
      for (std::size_t j = 0; j < x.cols(); ++j) dst[j] += v * src[j];
    }
    return y;
  }

  /// y = S^T * x
  Matrix multiply_transposed(const Matrix& x) const {
    Matrix y(cols, x.cols());
    for (std::size_t e = 0; e < nnz(); ++e) {
      const double v = value[e];
      auto src = x.row(row_index[e]);
      auto dst = y.row(col_index[e]);
      for (std::size_t j = 0; j < x.cols(); ++j) dst[j] += v * src[j];
    }
    return y;
  }
};

}  // namespace jsdmp
