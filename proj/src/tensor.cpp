#include "nsfwguard/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nsfwguard/error.hpp"
#include "nsfwguard/kernels.hpp"

namespace nsfwguard {
namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul " + dims(a) + " by " + dims(b));
  const auto& k = kernels::active();
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.row(i).data();
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double s = a(i, p);
      if (s != 0.0) k.axpy(s, b.row(p).data(), dst, b.cols());
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  accumulate_tn(a, b, out);
  return out;
}

void accumulate_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ShapeError("matmul_tn " + dims(a) + " by " + dims(b) + " into " + dims(out));
  }
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* src = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = a(r, i);
      if (s != 0.0) k.axpy(s, src, out.row(i).data(), b.cols());
    }
  }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt " + dims(a) + " by " + dims(b));
  const auto& k = kernels::active();
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      out(i, j) = k.dot(a.row(i).data(), b.row(j).data(), a.cols());
    }
  }
  return out;
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != m.cols()) {
    throw ShapeError("bias " + dims(bias) + " for " + dims(m));
  }
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < m.rows(); ++r) k.axpy(1.0, bias.row(0).data(), m.row(r).data(), m.cols());
}

void accumulate_col_sums(const Matrix& m, Matrix& out) {
  if (out.rows() != 1 || out.cols() != m.cols()) {
    throw ShapeError("column sums of " + dims(m) + " into " + dims(out));
  }
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < m.rows(); ++r) k.axpy(1.0, m.row(r).data(), out.row(0).data(), m.cols());
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

}  // namespace nsfwguard
