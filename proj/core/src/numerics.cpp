#include "headgame/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "headgame/errors.hpp"

namespace headgame {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  require(std::isfinite(fill), "Matrix: non-finite fill value");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols,
          "Matrix: data length " + std::to_string(data_.size()) + " != " +
              std::to_string(rows) + "x" + std::to_string(cols));
  require(all_finite(), "Matrix: non-finite entry on construction");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, "Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::column_vector(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require(same_shape(other), "Matrix +=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require(same_shape(other), "Matrix -=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

namespace {

// Narrow right-hand sides (head dimensions, class counts) dominate; a fixed
// column count keeps the accumulators in registers.
// Four interleaved partial sums over the inner index break the add latency
// chain; they are combined in a fixed order.
template <std::size_t N, typename At>
void narrow_rows(At a_at, const double* b, double* out, std::size_t rows, std::size_t inner) {
  for (std::size_t i = 0; i < rows; ++i) {
    double acc[4][N] = {};
    std::size_t k = 0;
    for (; k + 4 <= inner; k += 4)
      for (std::size_t u = 0; u < 4; ++u) {
        const double aik = a_at(i, k + u);
        const double* bk = b + (k + u) * N;
        for (std::size_t j = 0; j < N; ++j) acc[u][j] += aik * bk[j];
      }
    for (; k < inner; ++k) {
      const double aik = a_at(i, k);
      const double* bk = b + k * N;
      for (std::size_t j = 0; j < N; ++j) acc[0][j] += aik * bk[j];
    }
    for (std::size_t j = 0; j < N; ++j)
      out[i * N + j] = (acc[0][j] + acc[1][j]) + (acc[2][j] + acc[3][j]);
  }
}

template <std::size_t N>
void matmul_narrow(const double* a, const double* b, double* out, std::size_t rows,
                   std::size_t inner) {
  narrow_rows<N>([a, inner](std::size_t i, std::size_t k) { return a[i * inner + k]; }, b, out,
                 rows, inner);
}

// a^T b for a narrow b. Four partial outputs, one per residue of the row
// index mod 4, keep consecutive updates of an entry independent.
template <std::size_t N>
void matmul_tn_narrow(const double* a, const double* b, double* out, std::size_t rows,
                      std::size_t cols) {
  std::vector<double> part(4 * cols * N, 0.0);
  for (std::size_t k = 0; k < rows; ++k) {
    double* p = part.data() + (k % 4) * cols * N;
    const double* ak = a + k * cols;
    const double* bk = b + k * N;
    for (std::size_t i = 0; i < cols; ++i) {
      const double aki = ak[i];
      for (std::size_t j = 0; j < N; ++j) p[i * N + j] += aki * bk[j];
    }
  }
  const std::size_t m = cols * N;
  for (std::size_t e = 0; e < m; ++e)
    out[e] = (part[e] + part[m + e]) + (part[2 * m + e] + part[3 * m + e]);
}

template <template <std::size_t> class Kernel, typename... Args>
bool dispatch_narrow(std::size_t n, Args... args) {
  switch (n) {
    case 1: Kernel<1>::run(args...); return true;
    case 2: Kernel<2>::run(args...); return true;
    case 3: Kernel<3>::run(args...); return true;
    case 4: Kernel<4>::run(args...); return true;
    case 5: Kernel<5>::run(args...); return true;
    case 6: Kernel<6>::run(args...); return true;
    case 7: Kernel<7>::run(args...); return true;
    case 8: Kernel<8>::run(args...); return true;
    default: return false;
  }
}

template <std::size_t N>
struct NarrowNN {
  static void run(const double* a, const double* b, double* o, std::size_t r, std::size_t k) {
    matmul_narrow<N>(a, b, o, r, k);
  }
};

template <std::size_t N>
struct NarrowTN {
  static void run(const double* a, const double* b, double* o, std::size_t r, std::size_t c) {
    matmul_tn_narrow<N>(a, b, o, r, c);
  }
};

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ (" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + ")");
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  if (dispatch_narrow<NarrowNN>(n, a.data().data(), b.data().data(), out.data().data(), a.rows(),
                                a.cols()))
    return out;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data().data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn: row counts differ");
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  if (dispatch_narrow<NarrowTN>(n, a.data().data(), b.data().data(), out.data().data(), a.rows(),
                                a.cols()))
    return out;
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.data().data() + k * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* o = out.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: column counts differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ai, b.row(j));
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "hadamard: shape mismatch");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double frobenius_dot(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "frobenius_dot: shape mismatch");
  return dot(a.data(), b.data());
}

double frobenius_norm_sq(const Matrix& a) { return dot(a.data(), a.data()); }
double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_norm_sq(a)); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool is_symmetric(const Matrix& m, double tol) {
  if (!m.is_square()) return false;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > tol) return false;
  return true;
}

Matrix symmetrize(const Matrix& m) {
  require(m.is_square(), "symmetrize: non-square input");
  Matrix out = m;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      const double avg = 0.5 * (m(i, j) + m(j, i));
      out(i, j) = avg;
      out(j, i) = avg;
    }
  return out;
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

}  // namespace

SymEig sym_eig(const Matrix& m) {
  require(m.is_square(), "sym_eig: non-square input " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
  require(is_symmetric(m, 1e-12 * std::max(1.0, frobenius_norm(m))),
          "sym_eig: input is not symmetric");
  const std::size_t n = m.rows();
  Matrix a = symmetrize(m);
  Matrix v = Matrix::identity(n);
  const double scale = std::max(frobenius_norm(a), 1e-300);
  constexpr int kMaxSweeps = 100;

  for (int sweep = 0; sweep < kMaxSweeps && off_diagonal_norm(a) >= 1e-12 * scale; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (off_diagonal_norm(a) >= 1e-10 * scale)
    throw NumericError("sym_eig: Jacobi iteration did not converge");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  SymEig out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = v(i, order[k]);
  }
  return out;
}

double logdet_clamped(const Matrix& m, double eps) {
  require(eps > 0.0, "logdet_clamped: eps must be positive");
  Matrix shifted = m;
  for (std::size_t i = 0; i < m.rows(); ++i) shifted(i, i) += eps;
  const SymEig e = sym_eig(shifted);
  double s = 0.0;
  for (double lambda : e.eigenvalues) s += std::log(std::max(lambda, eps));
  return s;
}

Matrix column_means(const Matrix& a) {
  Matrix mu(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) mu(0, c) += a(r, c);
  if (a.rows() > 0) mu *= 1.0 / static_cast<double>(a.rows());
  return mu;
}

Matrix zscore_columns(const Matrix& a, double eps) {
  require(a.rows() >= 2, "zscore_columns: need at least 2 rows");
  require(eps >= 0.0, "zscore_columns: eps must be nonnegative");
  const double n = static_cast<double>(a.rows());
  const Matrix mu = column_means(a);
  Matrix out(a.rows(), a.cols());
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double ss = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const double d = a(r, c) - mu(0, c);
      ss += d * d;
    }
    const double denom = std::sqrt(ss / n) + eps;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const double d = a(r, c) - mu(0, c);
      out(r, c) = d == 0.0 ? 0.0 : d / denom;
    }
  }
  return out;
}

Matrix covariance(const Matrix& a) {
  require(a.rows() >= 1, "covariance: empty input");
  const Matrix mu = column_means(a);
  Matrix centered = a;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) centered(r, c) -= mu(0, c);
  Matrix cov = matmul_tn(centered, centered);
  cov *= 1.0 / static_cast<double>(a.rows());
  return symmetrize(cov);
}

Matrix correlation(const Matrix& a) {
  Matrix cov = covariance(a);
  const std::size_t n = cov.rows();
  std::vector<double> sd(n);
  for (std::size_t i = 0; i < n; ++i) sd[i] = std::sqrt(std::max(cov(i, i), 0.0));
  Matrix r(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) {
        r(i, j) = 1.0;
      } else if (sd[i] > 0.0 && sd[j] > 0.0) {
        r(i, j) = std::clamp(cov(i, j) / (sd[i] * sd[j]), -1.0, 1.0);
      }
    }
  }
  return r;
}

Cosine cosine(std::span<const double> u, std::span<const double> v) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return {0.0, true};
  return {std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0), false};
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix cholesky(const Matrix& m) {
  require(m.is_square(), "cholesky: non-square input");
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw ValidationError("cholesky: matrix is not positive definite");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (double& x : o) x /= z;
  }
  return out;
}

Matrix hstack(std::span<const Matrix> blocks) {
  require(!blocks.empty(), "hstack: no blocks");
  const std::size_t rows = blocks.front().rows();
  std::size_t cols = 0;
  for (const Matrix& b : blocks) {
    require(b.rows() == rows, "hstack: row counts differ");
    cols += b.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const Matrix& b : blocks) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + offset);
    offset += b.cols();
  }
  return out;
}

Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.cols(), "slice_cols: out of range");
  Matrix out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = a(r, begin + c);
  return out;
}

Matrix slice_rows(const Matrix& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.rows(), "slice_rows: out of range");
  Matrix out(count, a.cols());
  for (std::size_t r = 0; r < count; ++r)
    std::copy(a.row(begin + r).begin(), a.row(begin + r).end(), out.row(r).begin());
  return out;
}

}  // namespace headgame
