#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace slomo {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Rows are samples throughout the library.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  Matrix select_rows(std::span<const std::size_t> indices) const;
  void set_row(std::size_t r, std::span<const double> values);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out = a * b^T, with b stored as (out_dim x in_dim).
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

// Stacks matrices with equal column counts vertically.
Matrix vstack(std::initializer_list<const Matrix*> parts);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

// Throws ShapeError naming `what` unless a and b have identical shapes.
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);
// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

}  // namespace slomo
