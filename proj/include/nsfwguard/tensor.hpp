#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace nsfwguard {

/// Dense row-major matrix of doubles. Rows are sequence positions (tokens or
/// patches) and columns are feature dimensions wherever it carries embeddings.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// All products throw ShapeError on mismatched inner dimensions.

/// a · b
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// out += aᵀ · b (gradient accumulation for weight matrices)
void accumulate_tn(const Matrix& a, const Matrix& b, Matrix& out);

/// Adds a 1×cols bias row to every row.
void add_row_bias(Matrix& m, const Matrix& bias);
/// out(0, :) += Σ_rows m
void accumulate_col_sums(const Matrix& m, Matrix& out);

Matrix transpose(const Matrix& m);

}  // namespace nsfwguard
