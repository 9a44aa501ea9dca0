#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include "capt/error.hpp"
#include "capt/rng.hpp"

namespace capt {

// Dense row-major matrix. Vectors are 1xN or Nx1, scalars 1x1.
template <typename T>
class Mat {
 public:
  Mat() : rows_(0), cols_(0) {}
  Mat(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, T(0)) {
    assert(rows >= 0 && cols >= 0);
  }

  static Mat zeros(int rows, int cols) { return Mat(rows, cols); }

  static Mat full(int rows, int cols, T value) {
    Mat m(rows, cols);
    for (T& x : m.data_) x = value;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const T* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  T& operator()(int r, int c) {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<size_t>(r) * cols_ + c];
  }
  T operator()(int r, int c) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<size_t>(r) * cols_ + c];
  }

  void fill(T value) {
    for (T& x : data_) x = value;
  }

  void add_inplace(const Mat& other) {
    assert(rows_ == other.rows_ && cols_ == other.cols_);
    const T* src = other.data();
    T* dst = data();
    for (size_t i = 0; i < data_.size(); ++i) dst[i] += src[i];
  }

  bool same_shape(const Mat& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  bool all_finite() const {
    for (T x : data_) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  template <typename U>
  Mat<U> cast() const {
    Mat<U> out(rows_, cols_);
    for (size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int rows_, cols_;
  std::vector<T> data_;
};

// C(m x n) = alpha * A(m x k) * B(k x n) + beta * C.
// Loop order keeps the inner loop streaming over contiguous B and C rows.
template <typename T>
void gemm_nn(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta, T* c,
             int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    const T* arow = a + static_cast<size_t>(i) * lda;
    for (int l = 0; l < k; ++l) {
      const T av = alpha * arow[l];
      const T* brow = b + static_cast<size_t>(l) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m x n) = alpha * A(m x k) * B(n x k)^T + beta * C. Multi-row products go
// through a materialized transpose so the inner loops stream like gemm_nn;
// single-row products (the decode path) use direct dots.
template <typename T>
void gemm_nt(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta, T* c,
             int ldc) {
  if (m >= 8) {
    std::vector<T> bt(static_cast<size_t>(k) * n);
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<size_t>(j) * ldb;
      for (int l = 0; l < k; ++l) bt[static_cast<size_t>(l) * n + j] = brow[l];
    }
    gemm_nn(m, n, k, alpha, a, lda, bt.data(), n, beta, c, ldc);
    return;
  }
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * lda;
    T* crow = c + static_cast<size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<size_t>(j) * ldb;
      T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
      int l = 0;
      for (; l + 4 <= k; l += 4) {
        s0 += arow[l] * brow[l];
        s1 += arow[l + 1] * brow[l + 1];
        s2 += arow[l + 2] * brow[l + 2];
        s3 += arow[l + 3] * brow[l + 3];
      }
      T s = (s0 + s1) + (s2 + s3);
      for (; l < k; ++l) s += arow[l] * brow[l];
      crow[j] = alpha * s + (beta == T(0) ? T(0) : beta * crow[j]);
    }
  }
}

// C(m x n) = alpha * A(k x m)^T * B(k x n) + beta * C. Outer-product accumulation;
// the inner loop streams over contiguous rows of B and C.
template <typename T>
void gemm_tn(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta, T* c,
             int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  for (int l = 0; l < k; ++l) {
    const T* arow = a + static_cast<size_t>(l) * lda;
    const T* brow = b + static_cast<size_t>(l) * ldb;
    for (int i = 0; i < m; ++i) {
      const T av = alpha * arow[i];
      T* crow = c + static_cast<size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// out = a * b
template <typename T>
Mat<T> matmul_nn(const Mat<T>& a, const Mat<T>& b) {
  assert(a.cols() == b.rows());
  Mat<T> out(a.rows(), b.cols());
  gemm_nn(a.rows(), b.cols(), a.cols(), T(1), a.data(), a.cols(), b.data(), b.cols(), T(0),
          out.data(), out.cols());
  return out;
}

// out = a * b^T
template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
  assert(a.cols() == b.cols());
  Mat<T> out(a.rows(), b.rows());
  gemm_nt(a.rows(), b.rows(), a.cols(), T(1), a.data(), a.cols(), b.data(), b.cols(), T(0),
          out.data(), out.cols());
  return out;
}

// out = a^T * b
template <typename T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b) {
  assert(a.rows() == b.rows());
  Mat<T> out(a.cols(), b.cols());
  gemm_tn(a.cols(), b.cols(), a.rows(), T(1), a.data(), a.cols(), b.data(), b.cols(), T(0),
          out.data(), out.cols());
  return out;
}

template <typename T>
void fill_uniform(Mat<T>& m, Rng& rng, double lo, double hi) {
  for (size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void fill_normal(Mat<T>& m, Rng& rng, double mean, double stddev) {
  for (size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal(mean, stddev));
}

// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void fill_fan_in_uniform(Mat<T>& m, Rng& rng, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  fill_uniform(m, rng, -bound, bound);
}

}  // namespace capt
