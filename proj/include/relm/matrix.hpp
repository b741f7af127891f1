#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace relm {

/// Dense row-major matrix of doubles. Molecules at the scale this library
/// targets have at most a few hundred atoms, so dense storage is adequate.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a * b; throws Error(ShapeMismatch) on non-conforming shapes.
Matrix matmul(const Matrix& a, const Matrix& b);

/// a^T * b without materializing the transpose.
Matrix matmul_transposed_a(const Matrix& a, const Matrix& b);

/// a * b^T without materializing the transpose.
Matrix matmul_transposed_b(const Matrix& a, const Matrix& b);

void add_in_place(Matrix& into, const Matrix& other);

}  // namespace relm
