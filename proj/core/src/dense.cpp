#include "abft/dense.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "abft/errors.hpp"

namespace abft {

namespace {

std::string shape(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

double parse_double(const std::string& token) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw InvalidArgument("malformed number '" + token + "'");
  }
  return value;
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " given " + std::to_string(data_.size()) + " values");
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t nr = rows.size();
  const std::size_t nc = nr == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(nr * nc);
  for (const auto& r : rows) {
    if (r.size() != nc) throw DimensionError("ragged row list");
    values.insert(values.end(), r.begin(), r.end());
  }
  return DenseMatrix(nr, nc, std::move(values));
}

DenseMatrix DenseMatrix::block(std::size_t r0, std::size_t c0, std::size_t nr,
                               std::size_t nc) const {
  if (r0 + nr > rows_ || c0 + nc > cols_) {
    throw DimensionError("block out of range of " + shape(*this));
  }
  DenseMatrix out(nr, nc);
  for (std::size_t i = 0; i < nr; ++i) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>((r0 + i) * cols_ + c0), nc,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * nc));
  }
  return out;
}

void DenseMatrix::set_block(std::size_t r0, std::size_t c0, const DenseMatrix& src) {
  if (r0 + src.rows_ > rows_ || c0 + src.cols_ > cols_) {
    throw DimensionError("block " + shape(src) + " does not fit into " + shape(*this));
  }
  for (std::size_t i = 0; i < src.rows_; ++i) {
    std::copy_n(src.data_.begin() + static_cast<std::ptrdiff_t>(i * src.cols_), src.cols_,
                data_.begin() + static_cast<std::ptrdiff_t>((r0 + i) * cols_ + c0));
  }
}

void gemm_update(DenseMatrix& c, const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("gemm_update: A " + shape(a) + " and B " + shape(b) +
                         " inner dimensions differ");
  }
  if (c.rows() != a.rows() || c.cols() != b.cols()) {
    throw DimensionError("gemm_update: C " + shape(c) + " does not match A*B " +
                         std::to_string(a.rows()) + "x" + std::to_string(b.cols()));
  }
  const std::size_t m = a.rows();
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < m; ++i) {
      const double aik = a(i, k);
      auto crow = c.row(i);
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

DenseMatrix multiply(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  gemm_update(c, a, b);
  return c;
}

std::vector<double> multiply(const DenseMatrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw DimensionError("matrix-vector: A " + shape(a) + " and x of length " +
                         std::to_string(x.size()));
  }
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) acc += arow[j] * x[j];
    y[i] = acc;
  }
  return y;
}

void axpy(DenseMatrix& y, double alpha, const DenseMatrix& x) {
  if (y.rows() != x.rows() || y.cols() != x.cols()) {
    throw DimensionError("axpy: " + shape(y) + " vs " + shape(x));
  }
  auto yv = y.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += alpha * xv[i];
}

DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

double frobenius_norm(const DenseMatrix& m) { return vector_norm2(m.values()); }

double vector_norm2(std::span<const double> x) {
  double sum = 0.0;
  for (double v : x) sum += v * v;
  return std::sqrt(sum);
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("max_abs_diff: " + shape(a) + " vs " + shape(b));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

ResidualReport residual_check(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& c,
                              std::span<const double> x, double eps, double threshold) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols() ||
      x.size() != b.cols()) {
    throw DimensionError("residual_check: A " + shape(a) + ", B " + shape(b) + ", C " +
                         shape(c) + ", x of length " + std::to_string(x.size()));
  }
  const auto cx = multiply(c, x);
  const auto abx = multiply(a, multiply(b, x));
  std::vector<double> diff(cx.size());
  for (std::size_t i = 0; i < cx.size(); ++i) diff[i] = cx[i] - abx[i];
  const double numerator = vector_norm2(diff);

  ResidualReport report;
  report.threshold = threshold;
  if (numerator == 0.0) {
    report.residual = 0.0;
    report.passed = true;
    return report;
  }
  const double n = static_cast<double>(std::max({a.rows(), a.cols(), b.cols()}));
  const double denominator = n * eps * frobenius_norm(c) * vector_norm2(x);
  if (denominator == 0.0) {
    throw InvalidArgument("residual_check: degenerate norm (||C|| or ||x|| is zero)");
  }
  report.residual = numerator / denominator;
  report.passed = report.residual <= threshold;
  return report;
}

DenseMatrix solve(const DenseMatrix& m, const DenseMatrix& rhs) {
  const std::size_t n = m.rows();
  if (m.cols() != n) throw DimensionError("solve: matrix " + shape(m) + " is not square");
  if (rhs.rows() != n) {
    throw DimensionError("solve: right-hand side " + shape(rhs) + " vs matrix " + shape(m));
  }
  DenseMatrix lu = m;
  DenseMatrix x = rhs;
  std::vector<std::size_t> col_perm(n);
  std::iota(col_perm.begin(), col_perm.end(), 0);

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pr = k;
    std::size_t pc = k;
    double best = 0.0;
    for (std::size_t i = k; i < n; ++i) {
      for (std::size_t j = k; j < n; ++j) {
        if (std::abs(lu(i, j)) > best) {
          best = std::abs(lu(i, j));
          pr = i;
          pc = j;
        }
      }
    }
    if (best == 0.0) throw InvalidArgument("solve: matrix is singular");
    if (pr != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(pr, j));
      for (std::size_t j = 0; j < x.cols(); ++j) std::swap(x(k, j), x(pr, j));
    }
    if (pc != k) {
      for (std::size_t i = 0; i < n; ++i) std::swap(lu(i, k), lu(i, pc));
      std::swap(col_perm[k], col_perm[pc]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double factor = lu(i, k) / lu(k, k);
      if (factor == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= factor * lu(k, j);
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= factor * x(k, j);
    }
  }
  for (std::size_t kk = n; kk-- > 0;) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double acc = x(kk, j);
      for (std::size_t t = kk + 1; t < n; ++t) acc -= lu(kk, t) * x(t, j);
      x(kk, j) = acc / lu(kk, kk);
    }
  }
  // Undo the column permutation: row k of x belongs to unknown col_perm[k].
  DenseMatrix out(n, x.cols());
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < x.cols(); ++j) out(col_perm[k], j) = x(k, j);
  return out;
}

namespace {
double norm1(const DenseMatrix& m) {
  double best = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += std::abs(m(i, j));
    best = std::max(best, s);
  }
  return best;
}
}  // namespace

double condition_number(const DenseMatrix& m) {
  try {
    const DenseMatrix inv = solve(m, DenseMatrix::identity(m.rows()));
    const double k = norm1(m) * norm1(inv);
    return std::isfinite(k) ? k : std::numeric_limits<double>::infinity();
  } catch (const InvalidArgument&) {
    return std::numeric_limits<double>::infinity();
  }
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw Error("format_double: conversion failed");
  return std::string(buf, ptr);
}

DenseMatrix read_matrix(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("matrix text: missing header line");
  std::istringstream header(line);
  long long rows = -1;
  long long cols = -1;
  if (!(header >> rows >> cols) || rows < 0 || cols < 0) {
    throw InvalidArgument("matrix text: header must be 'rows cols'");
  }
  DenseMatrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (!std::getline(in, line)) {
      throw InvalidArgument("matrix text: expected " + std::to_string(rows) + " rows, got " +
                            std::to_string(i));
    }
    std::istringstream ls(line);
    std::string token;
    std::size_t j = 0;
    while (ls >> token) {
      if (j >= m.cols()) throw InvalidArgument("matrix text: row " + std::to_string(i) + " too long");
      m(i, j++) = parse_double(token);
    }
    if (j != m.cols()) throw InvalidArgument("matrix text: row " + std::to_string(i) + " too short");
  }
  return m;
}

void write_matrix(std::ostream& out, const DenseMatrix& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j != 0) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

}  // namespace abft
