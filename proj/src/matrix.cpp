#include "relm/matrix.hpp"

#include <string>

#include "relm/error.hpp"
#include "relm/kernels.hpp"

namespace relm {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw Error(ErrorKind::ShapeMismatch, "matmul " + shape(a) + " * " + shape(b));
  Matrix out(a.rows(), b.cols());
  // i-k-j order so the inner loop is a contiguous axpy over a row of b.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double v = a(i, k);
      if (v == 0.0) continue;
      kernels::axpy(v, b.row(k), out_row);
    }
  }
  return out;
}

Matrix matmul_transposed_a(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw Error(ErrorKind::ShapeMismatch, "matmul " + shape(a) + "^T * " + shape(b));
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double v = a(k, i);
      if (v == 0.0) continue;
      kernels::axpy(v, b_row, out.row(i));
    }
  }
  return out;
}

Matrix matmul_transposed_b(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw Error(ErrorKind::ShapeMismatch, "matmul " + shape(a) + " * " + shape(b) + "^T");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = kernels::dot(a.row(i), b.row(j));
  return out;
}

void add_in_place(Matrix& into, const Matrix& other) {
  if (into.rows() != other.rows() || into.cols() != other.cols())
    throw Error(ErrorKind::ShapeMismatch, "add " + shape(into) + " + " + shape(other));
  kernels::axpy(1.0, other.data(), into.data());
}

}  // namespace relm
