#include "abft/checksum.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "abft/errors.hpp"
#include "abft/random.hpp"

namespace abft {

namespace {

constexpr std::size_t kMaxSubsetSamples = 256;
constexpr int kMaxSchemeDraws = 100;

std::string describe(const std::set<std::size_t>& s) {
  std::string out = "{";
  for (auto it = s.begin(); it != s.end(); ++it) {
    if (it != s.begin()) out += ",";
    out += std::to_string(*it);
  }
  return out + "}";
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

// Lexicographic successor of a k-subset of [0, n); false after the last.
bool next_subset(std::vector<std::size_t>& idx, std::size_t n) {
  const std::size_t k = idx.size();
  for (std::size_t t = k; t-- > 0;) {
    if (idx[t] < n - k + t) {
      ++idx[t];
      for (std::size_t u = t + 1; u < k; ++u) idx[u] = idx[u - 1] + 1;
      return true;
    }
  }
  return false;
}

DenseMatrix columns(const DenseMatrix& w, std::span<const std::size_t> cols, std::size_t nrows) {
  DenseMatrix sub(nrows, cols.size());
  for (std::size_t i = 0; i < nrows; ++i)
    for (std::size_t c = 0; c < cols.size(); ++c) sub(i, c) = w(i, cols[c]);
  return sub;
}

bool well_conditioned(const DenseMatrix& w, std::size_t f, std::size_t p, Rng& rng) {
  const double limit = 1.0 / kMachineEpsilon;
  std::vector<std::size_t> idx(f);
  if (binomial(p, f) <= static_cast<double>(kMaxSubsetSamples)) {
    for (std::size_t t = 0; t < f; ++t) idx[t] = t;
    do {
      if (!(condition_number(columns(w, idx, f)) < limit)) return false;
    } while (next_subset(idx, p));
    return true;
  }
  for (std::size_t s = 0; s < kMaxSubsetSamples; ++s) {
    // Partial Fisher-Yates over [0, p) for a uniform f-subset.
    std::vector<std::size_t> pool(p);
    for (std::size_t t = 0; t < p; ++t) pool[t] = t;
    for (std::size_t t = 0; t < f; ++t) {
      const std::size_t pick = t + static_cast<std::size_t>(rng.below(p - t));
      std::swap(pool[t], pool[pick]);
      idx[t] = pool[t];
    }
    if (!(condition_number(columns(w, idx, f)) < limit)) return false;
  }
  return true;
}

void check_well_formed(const EncodedMatrix& e, const ChecksumScheme& rs, const ChecksumScheme& cs) {
  const auto& b = e.blocking;
  if (b.nb == 0 || e.core.rows() % b.nb != 0 || e.core.cols() % b.nb != 0 ||
      rs.p != b.grid_cols || cs.p != b.grid_rows) {
    throw DimensionError("encoded matrix does not match its blocking or schemes");
  }
}

struct Residuals {
  DenseMatrix row;
  DenseMatrix col;
  DenseMatrix cross;
};

Residuals residuals(const EncodedMatrix& e, const ChecksumScheme& rs, const ChecksumScheme& cs) {
  const std::size_t nb = e.blocking.nb;
  Residuals r{apply_row_checksum(e.core, rs, nb), apply_col_checksum(e.core, cs, nb),
              apply_row_checksum(e.colsum, rs, nb)};
  if (r.row.rows() != e.rowsum.rows() || r.row.cols() != e.rowsum.cols() ||
      r.col.rows() != e.colsum.rows() || r.col.cols() != e.colsum.cols() ||
      r.cross.rows() != e.cross.rows() || r.cross.cols() != e.cross.cols()) {
    throw DimensionError("encoded matrix checksum blocks have the wrong shape");
  }
  axpy(r.row, -1.0, e.rowsum);
  axpy(r.col, -1.0, e.colsum);
  axpy(r.cross, -1.0, e.cross);
  return r;
}

struct Flag {
  std::size_t i;
  std::size_t j;
  double value;
};

std::vector<Flag> flags_above(const DenseMatrix& m, double tau) {
  std::vector<Flag> out;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (std::abs(m(i, j)) > tau) out.push_back({i, j, m(i, j)});
  return out;
}

}  // namespace

ChecksumScheme make_scheme(std::size_t f, std::size_t p, std::uint64_t seed) {
  if (f < 1 || f > p) {
    throw InvalidArgument("invalid checksum scheme: need 1 <= f <= p, got f=" + std::to_string(f) +
                          ", p=" + std::to_string(p));
  }
  ChecksumScheme s;
  s.f = f;
  s.p = p;
  s.seed = seed;
  if (f == 1) {
    s.weights = DenseMatrix(1, p, 1.0);
    return s;
  }
  Rng rng(seed);
  for (int attempt = 0; attempt < kMaxSchemeDraws; ++attempt) {
    DenseMatrix w(f, p);
    for (double& v : w.values()) v = rng.uniform(0.5, 1.5);
    if (well_conditioned(w, f, p, rng)) {
      s.weights = std::move(w);
      return s;
    }
  }
  throw InvalidArgument("could not draw a well-conditioned scheme for f=" + std::to_string(f) +
                        ", p=" + std::to_string(p));
}

void write_scheme(std::ostream& out, const ChecksumScheme& scheme) {
  out << scheme.f << ' ' << scheme.p << ' ' << scheme.seed << '\n';
  for (std::size_t i = 0; i < scheme.f; ++i) {
    for (std::size_t j = 0; j < scheme.p; ++j) {
      if (j != 0) out << ' ';
      out << format_double(scheme.weights(i, j));
    }
    out << '\n';
  }
}

ChecksumScheme read_scheme(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("scheme text: missing header");
  std::istringstream header(line);
  ChecksumScheme s;
  if (!(header >> s.f >> s.p >> s.seed) || s.f < 1 || s.f > s.p) {
    throw InvalidArgument("scheme text: header must be 'f p seed' with 1 <= f <= p");
  }
  std::ostringstream body;
  body << s.f << ' ' << s.p << '\n';
  for (std::size_t i = 0; i < s.f; ++i) {
    if (!std::getline(in, line)) throw InvalidArgument("scheme text: missing weight row");
    body << line << '\n';
  }
  std::istringstream matrix_text(body.str());
  s.weights = read_matrix(matrix_text);
  return s;
}

std::vector<Vector> encode_vector(std::span<const Vector> parts, const ChecksumScheme& scheme) {
  if (parts.size() != scheme.p) {
    throw DimensionError("encode_vector: scheme expects " + std::to_string(scheme.p) +
                         " parts, got " + std::to_string(parts.size()));
  }
  const std::size_t len = parts.empty() ? 0 : parts.front().size();
  for (std::size_t j = 0; j < parts.size(); ++j) {
    if (parts[j].size() != len) {
      throw DimensionError("encode_vector: part " + std::to_string(j) + " has length " +
                           std::to_string(parts[j].size()) + ", expected " + std::to_string(len));
    }
  }
  std::vector<Vector> out(scheme.f, Vector(len, 0.0));
  for (std::size_t i = 0; i < scheme.f; ++i)
    for (std::size_t j = 0; j < scheme.p; ++j) {
      const double w = scheme.weight(i, j);
      for (std::size_t t = 0; t < len; ++t) out[i][t] += w * parts[j][t];
    }
  return out;
}

std::map<std::size_t, Vector> solve_erasures(std::span<const Vector> syndromes,
                                             const std::set<std::size_t>& lost,
                                             const ChecksumScheme& scheme) {
  std::map<std::size_t, Vector> out;
  if (lost.empty()) return out;
  if (lost.size() > scheme.f) {
    throw UncorrectableError("cannot recover lost set " + describe(lost) + " with f=" +
                             std::to_string(scheme.f));
  }
  if (syndromes.size() < lost.size()) {
    throw DimensionError("solve_erasures: need " + std::to_string(lost.size()) +
                         " syndromes, got " + std::to_string(syndromes.size()));
  }
  for (std::size_t l : lost) {
    if (l >= scheme.p) throw DimensionError("lost index " + std::to_string(l) + " out of range");
  }
  const std::size_t m = lost.size();
  const std::size_t len = syndromes.front().size();
  const std::vector<std::size_t> cols(lost.begin(), lost.end());
  const DenseMatrix sub = columns(scheme.weights, cols, m);
  if (!(condition_number(sub) < 1.0 / kMachineEpsilon)) {
    throw UncorrectableError("recovery submatrix for lost set " + describe(lost) +
                             " is numerically singular");
  }
  DenseMatrix rhs(m, len);
  for (std::size_t i = 0; i < m; ++i) {
    if (syndromes[i].size() != len) throw DimensionError("solve_erasures: ragged syndromes");
    std::copy(syndromes[i].begin(), syndromes[i].end(), rhs.row(i).begin());
  }
  const DenseMatrix x = solve(sub, rhs);
  for (std::size_t c = 0; c < m; ++c) {
    const auto r = x.row(c);
    out.emplace(cols[c], Vector(r.begin(), r.end()));
  }
  return out;
}

std::map<std::size_t, Vector> recover_erasures(const std::map<std::size_t, Vector>& surviving,
                                               std::span<const Vector> checksums,
                                               const std::set<std::size_t>& lost,
                                               const ChecksumScheme& scheme) {
  if (lost.empty()) return {};
  if (lost.size() > scheme.f) {
    throw UncorrectableError("cannot recover lost set " + describe(lost) + " with f=" +
                             std::to_string(scheme.f));
  }
  if (checksums.size() != scheme.f) {
    throw DimensionError("recover_erasures: expected " + std::to_string(scheme.f) +
                         " checksums, got " + std::to_string(checksums.size()));
  }
  for (std::size_t j = 0; j < scheme.p; ++j) {
    const bool have = surviving.contains(j);
    const bool gone = lost.contains(j);
    if (have == gone) {
      throw DimensionError("recover_erasures: part " + std::to_string(j) +
                           (have ? " is both surviving and lost" : " is neither surviving nor lost"));
    }
  }
  const std::size_t len = checksums.front().size();
  std::vector<Vector> syndromes(checksums.begin(), checksums.end());
  for (std::size_t i = 0; i < scheme.f; ++i) {
    if (syndromes[i].size() != len) throw DimensionError("recover_erasures: ragged checksums");
    for (const auto& [j, part] : surviving) {
      if (part.size() != len) {
        throw DimensionError("recover_erasures: part " + std::to_string(j) + " has length " +
                             std::to_string(part.size()) + ", expected " + std::to_string(len));
      }
      const double w = scheme.weight(i, j);
      for (std::size_t t = 0; t < len; ++t) syndromes[i][t] -= w * part[t];
    }
  }
  return solve_erasures(syndromes, lost, scheme);
}

DenseMatrix apply_row_checksum(const DenseMatrix& a, const ChecksumScheme& scheme, std::size_t nb) {
  if (nb == 0 || a.cols() % nb != 0) {
    throw DimensionError("row checksum: " + std::to_string(a.cols()) +
                         " columns are not a multiple of block size " + std::to_string(nb));
  }
  const std::size_t nbc = a.cols() / nb;
  const std::size_t groups = (nbc + scheme.p - 1) / scheme.p;
  DenseMatrix out(a.rows(), groups * scheme.f * nb);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto src = a.row(r);
    auto dst = out.row(r);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < scheme.f; ++i) {
        const std::size_t dcol = (g * scheme.f + i) * nb;
        for (std::size_t j = 0; j < scheme.p && g * scheme.p + j < nbc; ++j) {
          const double w = scheme.weight(i, j);
          const std::size_t scol = (g * scheme.p + j) * nb;
          for (std::size_t t = 0; t < nb; ++t) dst[dcol + t] += w * src[scol + t];
        }
      }
  }
  return out;
}

DenseMatrix apply_col_checksum(const DenseMatrix& a, const ChecksumScheme& scheme, std::size_t nb) {
  if (nb == 0 || a.rows() % nb != 0) {
    throw DimensionError("column checksum: " + std::to_string(a.rows()) +
                         " rows are not a multiple of block size " + std::to_string(nb));
  }
  const std::size_t nbr = a.rows() / nb;
  const std::size_t groups = (nbr + scheme.p - 1) / scheme.p;
  DenseMatrix out(groups * scheme.f * nb, a.cols());
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < scheme.f; ++i)
      for (std::size_t j = 0; j < scheme.p && g * scheme.p + j < nbr; ++j) {
        const double w = scheme.weight(i, j);
        for (std::size_t t = 0; t < nb; ++t) {
          const auto src = a.row((g * scheme.p + j) * nb + t);
          auto dst = out.row((g * scheme.f + i) * nb + t);
          for (std::size_t c = 0; c < a.cols(); ++c) dst[c] += w * src[c];
        }
      }
  return out;
}

EncodedMatrix encode_matrix(const DenseMatrix& a, const ChecksumScheme& rows_scheme,
                            const ChecksumScheme& cols_scheme, const Blocking& blocking) {
  if (blocking.nb == 0 || blocking.grid_rows == 0 || blocking.grid_cols == 0) {
    throw DimensionError("encode_matrix: empty blocking");
  }
  if (rows_scheme.p != blocking.grid_cols || cols_scheme.p != blocking.grid_rows) {
    throw DimensionError("encode_matrix: schemes cover " + std::to_string(cols_scheme.p) + "x" +
                         std::to_string(rows_scheme.p) + " holders but the grid is " +
                         std::to_string(blocking.grid_rows) + "x" +
                         std::to_string(blocking.grid_cols));
  }
  if (a.rows() % blocking.nb != 0 || a.cols() % blocking.nb != 0) {
    throw DimensionError("encode_matrix: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " is not a multiple of block size " +
                         std::to_string(blocking.nb));
  }
  EncodedMatrix e;
  e.core = a;
  e.blocking = blocking;
  e.rowsum = apply_row_checksum(a, rows_scheme, blocking.nb);
  e.colsum = apply_col_checksum(a, cols_scheme, blocking.nb);
  e.cross = apply_row_checksum(e.colsum, rows_scheme, blocking.nb);
  return e;
}

std::string to_string(DiagnosisStatus status) {
  switch (status) {
    case DiagnosisStatus::consistent: return "consistent";
    case DiagnosisStatus::corrected: return "corrected";
    case DiagnosisStatus::uncorrectable: return "uncorrectable";
  }
  return "unknown";
}

double consistency_tolerance(const EncodedMatrix& e, const ChecksumScheme& rows_scheme,
                             const ChecksumScheme& cols_scheme) {
  const double factor = std::max(rows_scheme.tolerance_factor, cols_scheme.tolerance_factor);
  const double n = static_cast<double>(std::max(e.core.rows(), e.core.cols()));
  return factor * n * kMachineEpsilon * frobenius_norm(e.core);
}

bool is_consistent(const EncodedMatrix& e, const ChecksumScheme& rows_scheme,
                   const ChecksumScheme& cols_scheme) {
  check_well_formed(e, rows_scheme, cols_scheme);
  const double tau = consistency_tolerance(e, rows_scheme, cols_scheme);
  const Residuals r = residuals(e, rows_scheme, cols_scheme);
  return flags_above(r.row, tau).empty() && flags_above(r.col, tau).empty() &&
         flags_above(r.cross, tau).empty();
}

ErrorDiagnosis verify_consistency(EncodedMatrix& e, const ChecksumScheme& rows_scheme,
                                  const ChecksumScheme& cols_scheme) {
  check_well_formed(e, rows_scheme, cols_scheme);
  ErrorDiagnosis d;
  d.tolerance = consistency_tolerance(e, rows_scheme, cols_scheme);
  const Residuals r = residuals(e, rows_scheme, cols_scheme);
  const auto row_flags = flags_above(r.row, d.tolerance);
  const auto col_flags = flags_above(r.col, d.tolerance);
  const auto cross_flags = flags_above(r.cross, d.tolerance);
  d.row_flags = row_flags.size();
  d.col_flags = col_flags.size();
  d.cross_flags = cross_flags.size();
  if (row_flags.empty() && col_flags.empty() && cross_flags.empty()) return d;

  d.status = DiagnosisStatus::uncorrectable;
  if (rows_scheme.f != 1 || cols_scheme.f != 1) return d;
  if (row_flags.size() != 1 || col_flags.size() != 1 || !cross_flags.empty()) return d;

  // Row residual entry (i, g*nb + jj) and column residual entry (g'*nb + ii, j)
  // must name the same block slot from both sides.
  const std::size_t nb = e.blocking.nb;
  const Flag& rf = row_flags.front();
  const Flag& cf = col_flags.front();
  const std::size_t i = rf.i;
  const std::size_t j = cf.j;
  const std::size_t bi = i / nb;
  const std::size_t bj = j / nb;
  if (bj / e.blocking.grid_cols != rf.j / nb || j % nb != rf.j % nb) return d;
  if (bi / e.blocking.grid_rows != cf.i / nb || i % nb != cf.i % nb) return d;

  const double magnitude = rf.value / rows_scheme.weight(0, bj % e.blocking.grid_cols);
  const double original = e.core(i, j);
  e.core(i, j) = original - magnitude;
  if (!is_consistent(e, rows_scheme, cols_scheme)) {
    e.core(i, j) = original;
    return d;
  }
  d.status = DiagnosisStatus::corrected;
  d.location = ErrorLocation{i, j};
  d.magnitude = magnitude;
  return d;
}

}  // namespace abft
