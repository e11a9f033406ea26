#include "slomo/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "slomo/error.hpp"

namespace slomo {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw ShapeError("row index out of range");
    out.set_row(i, row(indices[i]));
  }
  return out;
}

void Matrix::set_row(std::size_t r, std::span<const double> values) {
  if (values.size() != cols_) throw ShapeError("set_row: width mismatch");
  std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ar, b.row(j));
  }
  return out;
}

Matrix vstack(std::initializer_list<const Matrix*> parts) {
  std::size_t rows = 0;
  std::size_t cols = parts.size() == 0 ? 0 : (*parts.begin())->cols();
  for (const Matrix* m : parts) {
    if (m->cols() != cols) throw ShapeError("vstack: column mismatch");
    rows += m->rows();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const Matrix* m : parts) {
    for (std::size_t i = 0; i < m->rows(); ++i) out.set_row(r++, m->row(i));
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite entry");
}

}  // namespace slomo
