#include "pnr/matrix.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "pnr/error.hpp"

namespace pnr {

namespace {

void check_positive_dims(int rows, int cols) {
  if (rows < 0 || cols < 0) {
    throw DimensionError("matrix dimensions must be non-negative, got " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

[[noreturn]] void throw_shape_mismatch(const char* op, const Matrix& a,
                                       const Matrix& b) {
  throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                       " vs " + b.shape_str());
}

}  // namespace

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
  check_positive_dims(rows, cols);
  data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Matrix::Matrix(int rows, int cols, std::initializer_list<double> values)
    : Matrix(rows, cols) {
  if (static_cast<long long>(values.size()) != size()) {
    throw DimensionError("initializer has " + std::to_string(values.size()) +
                         " values for a " + shape_str() + " matrix");
  }
  std::copy(values.begin(), values.end(), data_.begin());
}

Matrix Matrix::full(int rows, int cols, double value) {
  Matrix m(rows, cols);
  for (auto& v : m.data_) v = value;
  return m;
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool operator==(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw_shape_mismatch("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    double* dst = out.data() + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const double* brow = b.data() + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) dst[j] += aip * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("add", a, b);
  Matrix out(a.rows(), a.cols());
  for (long long i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("sub", a, b);
  Matrix out(a.rows(), a.cols());
  for (long long i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

Matrix operator*(double c, const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (long long i = 0; i < a.size(); ++i) out.data()[i] = c * a.data()[i];
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("hadamard", a, b);
  Matrix out(a.rows(), a.cols());
  for (long long i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

double sum(const Matrix& a) {
  double s = 0.0;
  for (long long i = 0; i < a.size(); ++i) s += a.data()[i];
  return s;
}

double mean(const Matrix& a) { return sum(a) / static_cast<double>(a.size()); }

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (long long i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i]));
  return m;
}

double fro_norm(const Matrix& a) {
  double s = 0.0;
  for (long long i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return std::sqrt(s);
}

double dot(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("dot", a, b);
  double s = 0.0;
  for (long long i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

Cholesky cholesky_factor(const Matrix& a, double pivot_tol) {
  if (a.rows() != a.cols()) {
    throw DimensionError("cholesky: matrix must be square, got " + a.shape_str());
  }
  const int n = a.rows();
  Matrix l(n, n);
  for (int j = 0; j < n; ++j) {
    // Symmetrized entry (a + a^T)/2 read on the fly.
    double d = 0.5 * (a(j, j) + a(j, j));
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > pivot_tol)) {
      throw SingularityError("cholesky: non-positive pivot " + std::to_string(d) +
                                 " at index " + std::to_string(j) +
                                 " (matrix not positive definite; consider ridge > 0)",
                             j);
    }
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      double s = 0.5 * (a(i, j) + a(j, i));
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return Cholesky{std::move(l)};
}

Matrix Cholesky::solve(const Matrix& b) const {
  const int n = l.rows();
  if (b.rows() != n) {
    throw DimensionError("cholesky solve: rhs has " + std::to_string(b.rows()) +
                         " rows, factor is " + l.shape_str());
  }
  const int m = b.cols();
  Matrix x(n, m);
  // Forward substitution L y = b, then back substitution L^T x = y;
  // both done column-block at once.
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < m; ++c) {
      double s = b(i, c);
      for (int k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
  }
  for (int i = n - 1; i >= 0; --i) {
    for (int c = 0; c < m; ++c) {
      double s = x(i, c);
      for (int k = i + 1; k < n; ++k) s -= l(k, i) * x(k, c);
      x(i, c) = s / l(i, i);
    }
  }
  return x;
}

Matrix cholesky_solve_spd(const Matrix& a, const Matrix& b) {
  return cholesky_factor(a, 0.0).solve(b);
}

// ---- PNRM io ----

namespace {

constexpr char kMagic[4] = {'P', 'N', 'R', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_u32le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("PNRM: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64le(std::ostream& out, double v) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IoError("PNRM: truncated payload");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

void write_matrix(std::ostream& out, const Matrix& m) {
  out.write(kMagic, 4);
  write_u32le(out, kVersion);
  write_u32le(out, static_cast<std::uint32_t>(m.rows()));
  write_u32le(out, static_cast<std::uint32_t>(m.cols()));
  for (long long i = 0; i < m.size(); ++i) write_f64le(out, m.data()[i]);
  if (!out) throw IoError("PNRM: write failed");
}

Matrix read_matrix(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("PNRM: bad magic bytes");
  }
  const std::uint32_t version = read_u32le(in);
  if (version != kVersion) {
    throw IoError("PNRM: unsupported version " + std::to_string(version));
  }
  const std::uint32_t rows = read_u32le(in);
  const std::uint32_t cols = read_u32le(in);
  if (rows > (1u << 24) || cols > (1u << 24)) {
    throw IoError("PNRM: implausible dimensions");
  }
  Matrix m(static_cast<int>(rows), static_cast<int>(cols));
  for (long long i = 0; i < m.size(); ++i) m.data()[i] = read_f64le(in);
  return m;
}

void save_matrix(const std::string& path, const Matrix& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_matrix(f, m);
  if (!f) throw IoError("write failed: " + path);
}

Matrix load_matrix(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  return read_matrix(f);
}

}  // namespace pnr
