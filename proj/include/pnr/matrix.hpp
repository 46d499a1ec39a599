#pragma once

#include <cassert>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace pnr {

// Dense row-major matrix of doubles. The one numeric carrier of the whole
// project: feature matrices, weights, images (flattened per patch), scalars
// (1x1). Values are treated as immutable once an operation has produced
// them; all free functions below return fresh matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols);
  Matrix(int rows, int cols, std::initializer_list<double> values);

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }
  static Matrix full(int rows, int cols, double value);
  static Matrix ones(int rows, int cols) { return full(rows, cols, 1.0); }
  static Matrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  long long size() const { return static_cast<long long>(rows_) * cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(int r, int c) {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }
  double operator()(int r, int c) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  std::string shape_str() const;  // e.g. "3x4"

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

bool operator==(const Matrix& a, const Matrix& b);

// ---- arithmetic ----

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double c, const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);

template <class F>
Matrix map_unary(const Matrix& a, F&& f) {
  Matrix out(a.rows(), a.cols());
  const double* src = a.data();
  double* dst = out.data();
  for (long long i = 0; i < a.size(); ++i) dst[i] = f(src[i]);
  return out;
}

double sum(const Matrix& a);
double mean(const Matrix& a);
double max_abs(const Matrix& a);  // entrywise infinity norm
double fro_norm(const Matrix& a);
double dot(const Matrix& a, const Matrix& b);  // entrywise

// ---- Cholesky ----

// Lower-triangular factor of a symmetric positive definite matrix.
struct Cholesky {
  Matrix l;
  Matrix solve(const Matrix& b) const;  // A x = b via two triangular solves
};

// Factor (a + a^T)/2 = l l^T. A pivot <= pivot_tol raises SingularityError
// carrying the failing pivot index. pivot_tol = 0 accepts any positive
// pivot; callers solving normal equations pass a relative threshold so that
// exactly rank-deficient systems are reported instead of amplified.
Cholesky cholesky_factor(const Matrix& a, double pivot_tol = 0.0);

// Solve A X = B for symmetric positive definite A.
Matrix cholesky_solve_spd(const Matrix& a, const Matrix& b);

// ---- summation ----

// Recursive pairwise sum of term(lo..hi-1), always split at the midpoint.
// Besides accuracy, the exact midpoint split makes the sum over a sequence
// followed by its own copy equal exactly twice the sum over the sequence,
// which the solver relies on for duplicated-shot invariance.
template <class F>
double pairwise_sum(int lo, int hi, F&& term) {
  const int len = hi - lo;
  if (len <= 0) return 0.0;
  if (len == 1) return term(lo);
  if (len == 2) return term(lo) + term(lo + 1);
  const int mid = lo + len / 2;
  return pairwise_sum(lo, mid, term) + pairwise_sum(mid, hi, term);
}

// ---- PNRM binary format ----
//
// magic "PNRM", u32 version (=1), u32 rows, u32 cols, then rows*cols
// float64 little-endian, row-major.

void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);

}  // namespace pnr
