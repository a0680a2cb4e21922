#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace cmvae {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  /// One-row matrix holding a copy of v.
  static Matrix row_vector(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_square() const { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Matrix transpose() const;
  void fill(double v);

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
/// Matrix product.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without forming the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
/// Row vector times matrix: v (1 x n) * m (n x k).
Vector vecmat(std::span<const double> v, const Matrix& m);

double trace(const Matrix& m);
double max_abs(const Matrix& m);
double max_abs(std::span<const double> v);
bool all_finite(const Matrix& m);
bool all_finite(std::span<const double> v);

/// exp(A) by scaling and squaring; the scaled matrix has infinity norm below 0.5.
Matrix mat_exp(const Matrix& a);

/// Cholesky factor L (lower) of a symmetric positive-definite matrix.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& m);

  /// Solves M X = B for every column of B.
  Matrix solve(const Matrix& b) const;
  Vector solve(std::span<const double> b) const;
  const Matrix& lower() const { return lower_; }

 private:
  Matrix lower_;
};

Matrix spd_solve(const Matrix& m, const Matrix& b);

/// log(sum(exp(v))) with a max shift.
double log_sum_exp(std::span<const double> v);

/// In-place softmax; returns the log-normalizer.
double softmax_inplace(std::span<double> v);

double logistic(double x);

/// Seeded generator; identical seeds give identical streams on every platform.
///
/// Uniforms come from the top 53 bits of a 64-bit Mersenne Twister draw. Normals
/// use the Marsaglia polar method with a cached spare, so the sequence only
/// depends on the engine output and on sqrt/log.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double normal();
  /// Uniform integer on [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Independent child stream keyed by index.
  Rng derive(std::uint64_t stream) const;

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cmvae
