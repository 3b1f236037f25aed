#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace abft {

/// Row-major dense block of doubles. Storage always holds rows*cols values.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  /// Copy of the nr x nc sub-block starting at (r0, c0).
  DenseMatrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;
  void set_block(std::size_t r0, std::size_t c0, const DenseMatrix& src);

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline constexpr double kMachineEpsilon = std::numeric_limits<double>::epsilon();

/// C <- C + A*B, in place. Accumulation runs k-outer, then i, then j, so
/// every entry sees its products added in increasing k order.
void gemm_update(DenseMatrix& c, const DenseMatrix& a, const DenseMatrix& b);

/// Fresh product A*B (gemm_update on a zero matrix).
DenseMatrix multiply(const DenseMatrix& a, const DenseMatrix& b);
std::vector<double> multiply(const DenseMatrix& a, std::span<const double> x);

/// y <- y + alpha*x.
void axpy(DenseMatrix& y, double alpha, const DenseMatrix& x);

DenseMatrix transpose(const DenseMatrix& m);

double frobenius_norm(const DenseMatrix& m);
double vector_norm2(std::span<const double> x);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

struct ResidualReport {
  double residual = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

inline constexpr double kResidualThreshold = 100.0;

/// ||Cx - A(Bx)||_2 / (n eps ||C||_F ||x||_2) with n the largest dimension
/// involved. A zero numerator passes; a zero norm with a non-zero numerator
/// throws InvalidArgument("degenerate norm").
ResidualReport residual_check(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& c,
                              std::span<const double> x, double eps = kMachineEpsilon,
                              double threshold = kResidualThreshold);

/// Solves M X = R for square M by Gaussian elimination with complete pivoting.
DenseMatrix solve(const DenseMatrix& m, const DenseMatrix& rhs);

/// kappa_1(M) = ||M||_1 ||M^-1||_1; infinity when M is singular.
double condition_number(const DenseMatrix& m);

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

/// Text fixture format: "rows cols" then one line per row.
DenseMatrix read_matrix(std::istream& in);
void write_matrix(std::ostream& out, const DenseMatrix& m);

}  // namespace abft
