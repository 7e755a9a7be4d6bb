#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cellinr/error.hpp"

namespace cellinr::nn {

// Row-major dense matrix. Storage is aligned so Eigen's vectorized loops take the
// same path regardless of where the allocator puts the buffer.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0)) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, const std::vector<T>& data)
      : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
    if (data_.size() != rows * cols) throw ShapeError("matrix data length mismatch");
  }

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] T* row(std::size_t r) { return data_.data() + r * cols_; }
  [[nodiscard]] const T* row(std::size_t r) const { return data_.data() + r * cols_; }
  [[nodiscard]] T* data() { return data_.data(); }
  [[nodiscard]] const T* data() const { return data_.data(); }
  [[nodiscard]] std::span<T> span() { return data_; }
  [[nodiscard]] std::span<const T> span() const { return data_; }
  [[nodiscard]] std::vector<T> vec() const { return {data_.begin(), data_.end()}; }

  void set_zero() { std::fill(data_.begin(), data_.end(), T(0)); }

  template <class U>
  [[nodiscard]] Matrix<U> cast() const {
    return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  AlignedVector<T> data_;
};

// Dense kernels, backed by Eigen's blocked GEMM. Weights are stored in x out.

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const RowMajor<T>, Eigen::AlignedMax> view(const Matrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
template <class T>
Eigen::Map<RowMajor<T>, Eigen::AlignedMax> view(Matrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

// y = x * w + b   (x: R x I, w: I x O, b: 1 x O)
template <class T>
void linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b, Matrix<T>& y) {
  if (x.cols() != w.rows() || b.cols() != w.cols() || b.rows() != 1) throw ShapeError("linear: shape mismatch");
  y = Matrix<T>(x.rows(), w.cols());
  auto yv = view(y);
  yv.noalias() = view(x) * view(w);
  yv.rowwise() += view(b).row(0);
}

// dx = dy * w^T
template <class T>
void linear_backward_input(const Matrix<T>& dy, const Matrix<T>& w, Matrix<T>& dx) {
  if (dy.cols() != w.cols()) throw ShapeError("linear: shape mismatch");
  dx = Matrix<T>(dy.rows(), w.rows());
  view(dx).noalias() = view(dy) * view(w).transpose();
}

// dw += x^T * dy ; db += colsum(dy)
template <class T>
void linear_backward_params(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>& dw, Matrix<T>& db) {
  if (x.rows() != dy.rows() || dw.rows() != x.cols() || dw.cols() != dy.cols()) throw ShapeError("linear: shape mismatch");
  view(dw).noalias() += view(x).transpose() * view(dy);
  view(db).row(0) += view(dy).colwise().sum();
}

}  // namespace cellinr::nn
