#pragma once

// Dense double-precision linear algebra used throughout the library. Sizes
// are small (at most a few hundred rows, matrices for eigenproblems at most
// 64x64), so everything is plain row-major storage and straightforward loops.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace headgame {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  // Throws ValidationError if data.size() != rows*cols or any entry is not
  // finite.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix row_vector(std::span<const double> values);
  static Matrix column_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_square() const { return rows_ == cols_; }
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix matmul(const Matrix& a, const Matrix& b);
// a^T b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);

double frobenius_dot(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);
double frobenius_norm_sq(const Matrix& a);
double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> v);

double max_abs_diff(const Matrix& a, const Matrix& b);
bool is_symmetric(const Matrix& m, double tol = 1e-12);
Matrix symmetrize(const Matrix& m);

// Eigendecomposition of a symmetric matrix.
struct SymEig {
  std::vector<double> eigenvalues;  // ascending
  Matrix eigenvectors;              // orthonormal, column k pairs with eigenvalues[k]
};

// Cyclic Jacobi rotations; converges when the off-diagonal Frobenius mass
// drops below 1e-12 relative to the input norm.
SymEig sym_eig(const Matrix& m);

// V diag(f(lambda)) V^T.
template <typename F>
Matrix eig_reconstruct(const SymEig& e, F&& f) {
  const std::size_t n = e.eigenvalues.size();
  Matrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = f(e.eigenvalues[k]);
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = w * e.eigenvectors(i, k);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * e.eigenvectors(j, k);
    }
  }
  return out;
}

// sum_i ln(max(lambda_i(m + eps I), eps)). Always finite for eps > 0.
double logdet_clamped(const Matrix& m, double eps);

// Column z-scores (x - mu) / (sigma + eps) with the population standard
// deviation (divide by N).
Matrix zscore_columns(const Matrix& a, double eps);

Matrix column_means(const Matrix& a);
// Population covariance (divide by N) of the columns of a.
Matrix covariance(const Matrix& a);
// Pearson correlation of the columns; zero-variance columns get a unit
// diagonal and zero off-diagonal entries.
Matrix correlation(const Matrix& a);

struct Cosine {
  double value = 0.0;
  bool degenerate = false;  // one of the inputs had zero norm
};

// <u,v>/(|u||v|) clamped to [-1,1]; zero inputs give {0, degenerate}.
Cosine cosine(std::span<const double> u, std::span<const double> v);

// ln(1 + e^x) without overflow.
double softplus(double x);
// d/dx softplus(x) = logistic(x).
double logistic(double x);

// Lower-triangular L with L L^T = m. Throws ValidationError when m is not
// (numerically) positive definite.
Matrix cholesky(const Matrix& m);

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

Matrix hstack(std::span<const Matrix> blocks);
Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t count);
Matrix slice_rows(const Matrix& a, std::size_t begin, std::size_t count);

}  // namespace headgame
