#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace datacl {

// Dense row-major matrix of 64-bit reals. Row vectors are 1xN, column
// vectors Nx1; batches store one sample per row.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> flat() { return {data_.data(), data_.size()}; }
  std::span<const double> flat() const { return {data_.data(), data_.size()}; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);

// In-place accumulators for gradient hot paths.
void add_into(Matrix& dst, const Matrix& src);
void add_scaled_into(Matrix& dst, const Matrix& src, double s);

double frobenius_sq(const Matrix& a);

double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> u);

// Cosine similarity in [-1, 1]. A zero-norm input (tolerance 1e-12) yields 0
// with a logged warning instead of an error.
double cosine_sim(std::span<const double> u, std::span<const double> v);
double cosine_sim(const Matrix& u, const Matrix& v);

inline constexpr double kZeroNormTol = 1e-12;

std::uint64_t zero_norm_warning_count();

bool all_finite(const Matrix& a);
double max_abs(const Matrix& a);

// Bit-level equality, used by freezing and determinism checks.
bool bits_equal(const Matrix& a, const Matrix& b);

}  // namespace datacl
