#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "abft/dense.hpp"

namespace abft {

using Vector = std::vector<double>;

/// Weighted checksum system y_i = sum_j a_ij x_j over p data holders with
/// f checksums. Any f x f column subset of `weights` must be nonsingular
/// for every f-erasure pattern to be recoverable.
struct ChecksumScheme {
  std::size_t f = 1;
  std::size_t p = 1;
  std::uint64_t seed = 0;
  DenseMatrix weights;              // f x p
  double tolerance_factor = 50.0;   // tau = factor * n * eps * ||core||_F

  double weight(std::size_t i, std::size_t j) const { return weights(i, j); }
};

/// f == 1 gives all-ones weights. Otherwise weights are drawn uniformly on
/// [0.5, 1.5) and redrawn until every sampled f x f submatrix has condition
/// number below 1/eps.
ChecksumScheme make_scheme(std::size_t f, std::size_t p, std::uint64_t seed = 0);

void write_scheme(std::ostream& out, const ChecksumScheme& scheme);
ChecksumScheme read_scheme(std::istream& in);

/// y_i = sum_j a_ij x_j, accumulated in j order.
std::vector<Vector> encode_vector(std::span<const Vector> parts, const ChecksumScheme& scheme);

/// Rebuilds the parts listed in `lost` from the survivors and the f checksums.
std::map<std::size_t, Vector> recover_erasures(const std::map<std::size_t, Vector>& surviving,
                                               std::span<const Vector> checksums,
                                               const std::set<std::size_t>& lost,
                                               const ChecksumScheme& scheme);

/// Same solve, starting from syndromes s_i = y_i - sum_{j survived} a_ij x_j.
/// Only the first |lost| syndromes are used. This is the form a distributed
/// reduction delivers.
std::map<std::size_t, Vector> solve_erasures(std::span<const Vector> syndromes,
                                             const std::set<std::size_t>& lost,
                                             const ChecksumScheme& scheme);

/// Blocking of a matrix over a grid_rows x grid_cols process grid with
/// square nb x nb blocks. Checksums are taken per process block: block
/// column J belongs to group J / grid_cols and slot J % grid_cols.
struct Blocking {
  std::size_t nb = 1;
  std::size_t grid_rows = 1;
  std::size_t grid_cols = 1;
};

/// Full checksum form [A, A C_R; C_C^T A, C_C^T A C_R].
struct EncodedMatrix {
  DenseMatrix core;
  DenseMatrix rowsum;  // rows(core) x (groups_c * f_r * nb)
  DenseMatrix colsum;  // (groups_r * f_c * nb) x cols(core)
  DenseMatrix cross;   // (groups_r * f_c * nb) x (groups_c * f_r * nb)
  Blocking blocking;
};

/// `rows_scheme` weights the block columns (A C_R, p == grid_cols);
/// `cols_scheme` weights the block rows (C_C^T A, p == grid_rows).
EncodedMatrix encode_matrix(const DenseMatrix& a, const ChecksumScheme& rows_scheme,
                            const ChecksumScheme& cols_scheme, const Blocking& blocking);

/// Checksum C_R applied from the right: groups of grid_cols block columns
/// collapse into f block columns each.
DenseMatrix apply_row_checksum(const DenseMatrix& a, const ChecksumScheme& scheme,
                               std::size_t nb);
/// Checksum C_C^T applied from the left.
DenseMatrix apply_col_checksum(const DenseMatrix& a, const ChecksumScheme& scheme,
                               std::size_t nb);

enum class DiagnosisStatus { consistent, corrected, uncorrectable };

std::string to_string(DiagnosisStatus status);

struct ErrorLocation {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const ErrorLocation&) const = default;
};

struct ErrorDiagnosis {
  DiagnosisStatus status = DiagnosisStatus::consistent;
  std::optional<ErrorLocation> location;
  double magnitude = 0.0;
  double tolerance = 0.0;
  std::size_t row_flags = 0;     // above-tolerance entries of the row residual
  std::size_t col_flags = 0;     // ... of the column residual
  std::size_t cross_flags = 0;   // ... of the cross checksum residual
};

/// Consistency tolerance for `e`: factor * max(rows, cols) * eps * ||core||_F.
double consistency_tolerance(const EncodedMatrix& e, const ChecksumScheme& rows_scheme,
                             const ChecksumScheme& cols_scheme);

/// Checks the row, column and cross checksums of `e`. A single corrupted
/// core entry (f == 1 both ways) is located, subtracted out of `e.core`,
/// and re-verified; anything else above tolerance is uncorrectable and
/// leaves `e` untouched.
ErrorDiagnosis verify_consistency(EncodedMatrix& e, const ChecksumScheme& rows_scheme,
                                  const ChecksumScheme& cols_scheme);

/// Detection only: true when no residual exceeds the tolerance.
bool is_consistent(const EncodedMatrix& e, const ChecksumScheme& rows_scheme,
                   const ChecksumScheme& cols_scheme);

}  // namespace abft
