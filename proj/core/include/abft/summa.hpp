#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "abft/checksum.hpp"
#include "abft/dense.hpp"
#include "abft/grid.hpp"

namespace abft {

/// 2D block-cyclic layout of a rows x cols matrix over the (q-1) x (q-1)
/// compute subgrid. Dimensions are zero-padded so every rank, checksum
/// ranks included, holds a local array of block_groups_r x block_groups_c
/// blocks of nb x nb.
struct MatrixLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t nb = 1;
  std::size_t grid = 1;       // compute ranks per grid line (q - 1)
  std::size_t groups_r = 0;   // local block rows per rank
  std::size_t groups_c = 0;   // local block cols per rank

  static MatrixLayout make(std::size_t rows, std::size_t cols, std::size_t nb, std::size_t grid);

  std::size_t padded_rows() const { return groups_r * grid * nb; }
  std::size_t padded_cols() const { return groups_c * grid * nb; }
  std::size_t local_rows() const { return groups_r * nb; }
  std::size_t local_cols() const { return groups_c * nb; }
  std::size_t block_rows() const { return groups_r * grid; }
  std::size_t block_cols() const { return groups_c * grid; }
};

/// A matrix spread over a GridWorld together with its checksum blocks.
/// The local arrays live in the ranks' own state under `name`, so a rank
/// failure really destroys them.
struct FtMatrix {
  std::string name;
  MatrixLayout layout;
  ChecksumScheme rows_scheme;   // weights over process columns (A C_R)
  ChecksumScheme cols_scheme;   // weights over process rows (C_C^T A)
  bool degraded = false;

  const DenseMatrix& local(const GridWorld& world, RankId r) const;
  DenseMatrix& local(GridWorld& world, RankId r) const;

  /// Observer view of the whole encoded matrix (padded). Reads rank state
  /// directly without messaging; throws ProtocolError if a rank holds no data.
  EncodedMatrix assemble(const GridWorld& world) const;
  /// The logical rows x cols matrix.
  DenseMatrix gather(const GridWorld& world) const;
};

/// Deals `a` block-cyclically to the compute ranks and places its row,
/// column and cross checksums on the border ranks. Schemes default to
/// f = 1 all-ones over q-1 holders.
FtMatrix distribute(const DenseMatrix& a, GridWorld& world, std::size_t nb, std::string name);
FtMatrix distribute(const DenseMatrix& a, GridWorld& world, std::size_t nb, std::string name,
                    const ChecksumScheme& rows_scheme, const ChecksumScheme& cols_scheme);

/// Block (I, J) -> owning compute rank coordinate and local block index.
struct BlockPlacement {
  Coord owner;
  std::size_t local_block_row = 0;
  std::size_t local_block_col = 0;
};
BlockPlacement place_block(const MatrixLayout& layout, std::size_t block_row, std::size_t block_col);

using LocalSlice = std::function<DenseMatrix(const DenseMatrix&)>;

/// Rebuilds (a slice of) the local array of `lost` from the other ranks of
/// its grid row (axis row) or column (axis col) with one weighted reduce
/// rooted at `root`. Data ranks are solved from their group's checksum;
/// checksum ranks are re-encoded from the data ranks.
DenseMatrix rebuild_from_checksums(GridWorld& world, const FtMatrix& m, RankId lost, RankId root,
                                   Axis axis, std::string_view tag, const LocalSlice& slice = {});

/// Row for everything except the checksum-row ranks, which use their column.
Axis default_rebuild_axis(const GridWorld& world, RankId lost);

struct PhaseStats {
  std::string name;
  std::uint64_t events = 0;
  std::uint64_t messages = 0;
  std::uint64_t words = 0;
};

struct RecoveryReport {
  std::size_t detected_at_step = 0;
  std::vector<RankId> failed;
  RankId recovered_rank = 0;
  std::size_t resume_step = 0;     // every rank holds C after this many steps
  std::size_t ranks_ahead = 0;     // survivors that finished the interrupted step before noticing
  std::size_t laggards = 0;        // survivors that replayed one step during pushdata
  std::size_t rebuilt_panels = 0;  // panels only the failed rank held, rebuilt from checksums
  std::array<PhaseStats, 4> phases{};  // detection, restart, pushdata, checksum
  bool success = false;
  std::string detail;
};

using StepObserver =
    std::function<void(std::size_t step, const GridWorld& world, const FtMatrix& c)>;

struct FtResult {
  FtMatrix c;
  std::vector<RecoveryReport> recoveries;
  bool degraded = false;
  std::string failure;
};

/// Outer-product SUMMA over encoded operands. Step s ring-broadcasts block
/// column s of A_F along every grid row and block row s of B_F along every
/// grid column; each rank, checksum ranks included, applies its rank-nb
/// update as soon as it holds both panels. Checksums are never recomputed.
class SummaEngine {
 public:
  SummaEngine(GridWorld& world, FtMatrix a, FtMatrix b, std::string c_name = "C");

  std::size_t steps() const noexcept { return steps_; }
  std::size_t next_step() const noexcept { return next_; }
  const FtMatrix& a() const noexcept { return a_; }
  const FtMatrix& b() const noexcept { return b_; }
  const FtMatrix& c() const noexcept { return c_; }
  /// Steps applied by rank r, or -1 when the rank holds no state.
  long applied(RankId r) const;

  /// One outer-product step. Throws FailureNotice if a failure is met.
  void run_step(std::size_t step);
  /// Completion barrier after the last step.
  void finish();
  /// Detection, restart, pushdata and checksum phases after a notice
  /// raised during `step`. On success the caller resumes at resume_step.
  RecoveryReport recover(std::size_t step);

  /// Runs to completion, recovering from every tolerated failure.
  FtResult run(const StepObserver& on_step = {});

 private:
  void apply_update(RankId r, std::size_t step);
  void store_panel(RankId r, std::string_view key, const DenseMatrix& panel, std::size_t step);
  bool holds_panel(RankId r, std::string_view key, std::size_t step) const;
  DenseMatrix a_panel(RankId r, std::size_t step) const;
  DenseMatrix b_panel(RankId r, std::size_t step) const;

  GridWorld& world_;
  FtMatrix a_;
  FtMatrix b_;
  FtMatrix c_;
  std::size_t steps_ = 0;
  std::size_t next_ = 0;
};

/// C = A B on the grid with on-the-fly recovery.
FtResult ft_pdgemm(const FtMatrix& a, const FtMatrix& b, GridWorld& world,
                   const StepObserver& on_step = {});

}  // namespace abft
