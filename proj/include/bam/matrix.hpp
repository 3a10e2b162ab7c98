#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bam {

// Dense row-major matrix of doubles. Deliberately minimal: the training code
// needs construction, element access, and a few shape-checked helpers.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
    v.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill);
  }

  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  double* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double x) { v.assign(v.size(), x); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline void require_shape(const Matrix& m, int rows, int cols, const char* what) {
  if (m.rows != rows || m.cols != cols)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                                std::to_string(m.cols));
}

// out = a * b  (shapes (n,k) x (k,m) -> (n,m)).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* or_ = out.row(i);
    for (int k = 0; k < a.cols; ++k) {
      double aik = ar[k];
      const double* br = b.row(k);
      for (int j = 0; j < b.cols; ++j) or_[j] += aik * br[j];
    }
  }
  return out;
}

// out = a * b^T  (shapes (n,k) x (m,k) -> (n,m)).
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_bt: inner dimensions differ");
  Matrix out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

// out = a^T * b  (shapes (n,k) x (n,m) -> (k,m)).
inline Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_at: outer dimensions differ");
  Matrix out(a.cols, b.cols);
  for (int n = 0; n < a.rows; ++n) {
    const double* ar = a.row(n);
    const double* br = b.row(n);
    for (int k = 0; k < a.cols; ++k) {
      double ank = ar[k];
      double* or_ = out.row(k);
      for (int j = 0; j < b.cols; ++j) or_[j] += ank * br[j];
    }
  }
  return out;
}

}  // namespace bam
