#pragma once

#include <cassert>
#include <concepts>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "gopkit/error.hpp"

namespace gopkit {

/// Read-only, row-major view over a contiguous block of rows.
template <std::floating_point T>
class MatrixView {
 public:
  MatrixView() = default;
  MatrixView(std::span<const T> data, std::size_t cols) : data_(data), cols_(cols) {
    assert(cols_ == 0 || data_.size() % cols_ == 0);
  }

  std::size_t rows() const noexcept { return cols_ == 0 ? 0 : data_.size() / cols_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const T> row(std::size_t r) const { return data_.subspan(r * cols_, cols_); }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const T> data() const noexcept { return data_; }

  /// Rows [first, last] inclusive.
  MatrixView rows_between(std::size_t first, std::size_t last) const {
    if (first > last || last >= rows()) {
      throw Error(ErrorCode::IndexOutOfRange, "row range [" + std::to_string(first) + ", " +
                                                  std::to_string(last) + "] outside " +
                                                  std::to_string(rows()) + " rows");
    }
    return MatrixView(data_.subspan(first * cols_, (last - first + 1) * cols_), cols_);
  }

 private:
  std::span<const T> data_;
  std::size_t cols_ = 0;
};

/// Owning row-major matrix.
template <std::floating_point T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorCode::ShapeMismatch, "matrix data size does not match rows*cols");
    }
  }
  /// Nested-list construction, mostly for tests and fixtures.
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw Error(ErrorCode::ShapeMismatch, "ragged matrix rows");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols_, cols_); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols_, cols_);
  }

  const std::vector<T>& data() const noexcept { return data_; }
  std::vector<T>& data() noexcept { return data_; }

  MatrixView<T> view() const { return MatrixView<T>(std::span<const T>(data_), cols_); }
  operator MatrixView<T>() const { return view(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace gopkit
