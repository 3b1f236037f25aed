#include "abft/summa.hpp"

#include <algorithm>

namespace abft {

namespace {

constexpr std::string_view kPanelA = "panelA";
constexpr std::string_view kPanelB = "panelB";
constexpr std::string_view kApplied = "C.applied";

std::string step_key(std::string_view key) { return std::string(key) + ".step"; }

// Which part of the encoded matrix a rank's local array mirrors.
enum class Part { core, rowsum, colsum, cross };

Part part_of(const GridWorld& world, RankId r) {
  const Coord c = world.coord(r);
  const std::size_t last = world.side() - 1;
  if (c.row < last && c.col < last) return Part::core;
  if (c.row < last) return Part::rowsum;
  if (c.col < last) return Part::colsum;
  return Part::cross;
}

// Global block offsets (in blocks) of local block (gi, gj) of rank r within
// the matching part of the encoded matrix.
std::pair<std::size_t, std::size_t> global_block(const GridWorld& world, RankId r, std::size_t gi,
                                                 std::size_t gj) {
  const Coord c = world.coord(r);
  const std::size_t p = world.side() - 1;
  switch (part_of(world, r)) {
    case Part::core: return {gi * p + c.row, gj * p + c.col};
    case Part::rowsum: return {gi * p + c.row, gj};
    case Part::colsum: return {gi, gj * p + c.col};
    case Part::cross: return {gi, gj};
  }
  return {0, 0};
}

DenseMatrix& part_matrix(EncodedMatrix& e, Part part) {
  switch (part) {
    case Part::core: return e.core;
    case Part::rowsum: return e.rowsum;
    case Part::colsum: return e.colsum;
    case Part::cross: return e.cross;
  }
  return e.core;
}

void check_scheme(const ChecksumScheme& s, std::size_t p, const char* which) {
  if (s.f != 1 || s.p != p) {
    throw InvalidArgument(std::string(which) + " scheme must have f=1 over " + std::to_string(p) +
                          " holders, got f=" + std::to_string(s.f) + ", p=" + std::to_string(s.p));
  }
}

struct PhaseMeter {
  const GridWorld& world;
  std::uint64_t clock0;
  std::uint64_t sent0;
  std::uint64_t words0;

  explicit PhaseMeter(const GridWorld& w)
      : world(w), clock0(w.clock()), sent0(w.messages_sent()), words0(w.words_sent()) {}

  PhaseStats finish(std::string name) const {
    return PhaseStats{std::move(name), world.clock() - clock0, world.messages_sent() - sent0,
                      world.words_sent() - words0};
  }
};

class RecoveryWindow {
 public:
  explicit RecoveryWindow(GridWorld& w) : world_(w) { world_.set_recovering(true); }
  ~RecoveryWindow() { world_.set_recovering(false); }
  RecoveryWindow(const RecoveryWindow&) = delete;
  RecoveryWindow& operator=(const RecoveryWindow&) = delete;

 private:
  GridWorld& world_;
};

}  // namespace

MatrixLayout MatrixLayout::make(std::size_t rows, std::size_t cols, std::size_t nb,
                                std::size_t grid) {
  if (nb == 0) throw InvalidArgument("block size must be at least 1");
  if (grid == 0) throw InvalidArgument("compute grid must be at least 1x1");
  MatrixLayout l;
  l.rows = rows;
  l.cols = cols;
  l.nb = nb;
  l.grid = grid;
  const std::size_t mb = (rows + nb - 1) / nb;
  const std::size_t nbc = (cols + nb - 1) / nb;
  l.groups_r = std::max<std::size_t>(1, (mb + grid - 1) / grid);
  l.groups_c = std::max<std::size_t>(1, (nbc + grid - 1) / grid);
  return l;
}

BlockPlacement place_block(const MatrixLayout& layout, std::size_t block_row, std::size_t block_col) {
  return BlockPlacement{Coord{block_row % layout.grid, block_col % layout.grid},
                        block_row / layout.grid, block_col / layout.grid};
}

const DenseMatrix& FtMatrix::local(const GridWorld& world, RankId r) const {
  const auto& data = world.rank(r).data;
  auto it = data.find(name);
  if (it == data.end()) {
    throw ProtocolError("rank " + std::to_string(r) + " holds no data for " + name);
  }
  return it->second;
}

DenseMatrix& FtMatrix::local(GridWorld& world, RankId r) const {
  auto& data = world.rank(r).data;
  auto it = data.find(name);
  if (it == data.end()) {
    throw ProtocolError("rank " + std::to_string(r) + " holds no data for " + name);
  }
  return it->second;
}

EncodedMatrix FtMatrix::assemble(const GridWorld& world) const {
  const std::size_t nb = layout.nb;
  EncodedMatrix e;
  e.blocking = Blocking{nb, layout.grid, layout.grid};
  e.core = DenseMatrix(layout.padded_rows(), layout.padded_cols());
  e.rowsum = DenseMatrix(layout.padded_rows(), layout.local_cols());
  e.colsum = DenseMatrix(layout.local_rows(), layout.padded_cols());
  e.cross = DenseMatrix(layout.local_rows(), layout.local_cols());
  for (RankId r = 0; r < world.size(); ++r) {
    const DenseMatrix& loc = local(world, r);
    DenseMatrix& dst = part_matrix(e, part_of(world, r));
    for (std::size_t gi = 0; gi < layout.groups_r; ++gi)
      for (std::size_t gj = 0; gj < layout.groups_c; ++gj) {
        const auto [bi, bj] = global_block(world, r, gi, gj);
        dst.set_block(bi * nb, bj * nb, loc.block(gi * nb, gj * nb, nb, nb));
      }
  }
  return e;
}

DenseMatrix FtMatrix::gather(const GridWorld& world) const {
  return assemble(world).core.block(0, 0, layout.rows, layout.cols);
}

FtMatrix distribute(const DenseMatrix& a, GridWorld& world, std::size_t nb, std::string name) {
  const std::size_t p = world.compute_side();
  return distribute(a, world, nb, std::move(name), make_scheme(1, p), make_scheme(1, p));
}

FtMatrix distribute(const DenseMatrix& a, GridWorld& world, std::size_t nb, std::string name,
                    const ChecksumScheme& rows_scheme, const ChecksumScheme& cols_scheme) {
  const std::size_t p = world.compute_side();
  check_scheme(rows_scheme, p, "row");
  check_scheme(cols_scheme, p, "column");
  FtMatrix m;
  m.name = std::move(name);
  m.layout = MatrixLayout::make(a.rows(), a.cols(), nb, p);
  m.rows_scheme = rows_scheme;
  m.cols_scheme = cols_scheme;

  DenseMatrix padded(m.layout.padded_rows(), m.layout.padded_cols());
  padded.set_block(0, 0, a);
  EncodedMatrix e = encode_matrix(padded, rows_scheme, cols_scheme, Blocking{nb, p, p});

  for (RankId r = 0; r < world.size(); ++r) {
    const DenseMatrix& src = part_matrix(e, part_of(world, r));
    DenseMatrix loc(m.layout.local_rows(), m.layout.local_cols());
    for (std::size_t gi = 0; gi < m.layout.groups_r; ++gi)
      for (std::size_t gj = 0; gj < m.layout.groups_c; ++gj) {
        const auto [bi, bj] = global_block(world, r, gi, gj);
        loc.set_block(gi * nb, gj * nb, src.block(bi * nb, bj * nb, nb, nb));
      }
    world.rank(r).data.insert_or_assign(m.name, std::move(loc));
  }
  return m;
}

Axis default_rebuild_axis(const GridWorld& world, RankId lost) {
  const Coord c = world.coord(lost);
  const std::size_t last = world.side() - 1;
  // Checksum-row ranks hold column sums: rebuild them down their column.
  return (c.row == last && c.col < last) ? Axis::col : Axis::row;
}

DenseMatrix rebuild_from_checksums(GridWorld& world, const FtMatrix& m, RankId lost, RankId root,
                                   Axis axis, std::string_view tag, const LocalSlice& slice) {
  const Coord lc = world.coord(lost);
  const std::size_t last = world.side() - 1;
  const std::size_t index = axis == Axis::row ? lc.row : lc.col;
  const std::size_t lost_slot = axis == Axis::row ? lc.col : lc.row;
  const ChecksumScheme& scheme = axis == Axis::row ? m.rows_scheme : m.cols_scheme;
  const std::vector<RankId> members = world.line(axis, index);

  auto payload = [&](RankId r) {
    const DenseMatrix& loc = m.local(world, r);
    return slice ? slice(loc) : loc;
  };

  std::vector<Contribution> parts;
  if (lost_slot == last) {
    // The checksum holder itself: weighted sum of the data holders.
    for (std::size_t j = 0; j < last; ++j) {
      parts.push_back({members[j], scheme.weight(0, j), payload(members[j])});
    }
    return reduce(world, std::move(parts), root, tag);
  }
  for (std::size_t j = 0; j < last; ++j) {
    if (j == lost_slot) continue;
    parts.push_back({members[j], -scheme.weight(0, j), payload(members[j])});
  }
  parts.push_back({members[last], 1.0, payload(members[last])});
  const DenseMatrix syndrome = reduce(world, std::move(parts), root, tag);

  const std::vector<Vector> syndromes{Vector(syndrome.values().begin(), syndrome.values().end())};
  auto solved = solve_erasures(syndromes, {lost_slot}, scheme);
  return DenseMatrix(syndrome.rows(), syndrome.cols(), std::move(solved.at(lost_slot)));
}

SummaEngine::SummaEngine(GridWorld& world, FtMatrix a, FtMatrix b, std::string c_name)
    : world_(world), a_(std::move(a)), b_(std::move(b)) {
  const auto& la = a_.layout;
  const auto& lb = b_.layout;
  if (la.cols != lb.rows || la.nb != lb.nb || la.grid != lb.grid || la.groups_c != lb.groups_r) {
    throw DimensionError("ft_pdgemm: A (" + std::to_string(la.rows) + "x" + std::to_string(la.cols) +
                         ", nb " + std::to_string(la.nb) + ") and B (" + std::to_string(lb.rows) +
                         "x" + std::to_string(lb.cols) + ", nb " + std::to_string(lb.nb) +
                         ") are not conformal");
  }
  if (la.grid != world_.compute_side()) {
    throw DimensionError("ft_pdgemm: operands were distributed on a different grid");
  }
  if (c_name == a_.name || c_name == b_.name) {
    throw InvalidArgument("ft_pdgemm: result name collides with an operand");
  }
  steps_ = la.block_cols();
  c_ = distribute(DenseMatrix(la.rows, lb.cols), world_, la.nb, std::move(c_name), b_.rows_scheme,
                  a_.cols_scheme);
  for (RankId r = 0; r < world_.size(); ++r) world_.rank(r).marks.insert_or_assign(std::string(kApplied), 0);
}

long SummaEngine::applied(RankId r) const {
  const auto& marks = world_.rank(r).marks;
  auto it = marks.find(kApplied);
  return it == marks.end() ? -1 : static_cast<long>(it->second);
}

void SummaEngine::store_panel(RankId r, std::string_view key, const DenseMatrix& panel,
                              std::size_t step) {
  auto& st = world_.rank(r);
  st.data.insert_or_assign(std::string(key), panel);
  st.marks.insert_or_assign(step_key(key), static_cast<std::int64_t>(step));
}

bool SummaEngine::holds_panel(RankId r, std::string_view key, std::size_t step) const {
  const auto& st = world_.rank(r);
  auto it = st.marks.find(step_key(key));
  return it != st.marks.end() && it->second == static_cast<std::int64_t>(step) &&
         st.data.contains(key);
}

DenseMatrix SummaEngine::a_panel(RankId r, std::size_t step) const {
  const std::size_t nb = a_.layout.nb;
  const std::size_t g = step / a_.layout.grid;
  return a_.local(world_, r).block(0, g * nb, a_.layout.local_rows(), nb);
}

DenseMatrix SummaEngine::b_panel(RankId r, std::size_t step) const {
  const std::size_t nb = b_.layout.nb;
  const std::size_t g = step / b_.layout.grid;
  return b_.local(world_, r).block(g * nb, 0, nb, b_.layout.local_cols());
}

void SummaEngine::apply_update(RankId r, std::size_t step) {
  auto& st = world_.rank(r);
  DenseMatrix& c = c_.local(world_, r);
  gemm_update(c, st.data.find(kPanelA)->second, st.data.find(kPanelB)->second);
  st.marks.insert_or_assign(std::string(kApplied), static_cast<std::int64_t>(step + 1));
  world_.compute(r, "gemm", c.size());
}

void SummaEngine::run_step(std::size_t step) {
  if (step >= steps_) throw InvalidArgument("step " + std::to_string(step) + " out of range");
  world_.begin_step(step);
  const std::size_t q = world_.side();
  const std::size_t slot = step % a_.layout.grid;

  for (std::size_t r = 0; r < q; ++r) {
    const RankId root = world_.rank_of(r, slot);
    DenseMatrix panel;
    if (world_.alive(root)) {
      panel = a_panel(root, step);
      store_panel(root, kPanelA, panel, step);
    }
    ring_broadcast(world_, Axis::row, r, root, panel, "bcastA",
                   [&](RankId to, const DenseMatrix& p) { store_panel(to, kPanelA, p, step); });
  }

  auto ready = [&](RankId r) {
    return world_.alive(r) && applied(r) == static_cast<long>(step) &&
           holds_panel(r, kPanelA, step) && holds_panel(r, kPanelB, step);
  };
  for (std::size_t c = 0; c < q; ++c) {
    const RankId root = world_.rank_of(slot, c);
    DenseMatrix panel;
    if (world_.alive(root)) {
      panel = b_panel(root, step);
      store_panel(root, kPanelB, panel, step);
    }
    ring_broadcast(world_, Axis::col, c, root, panel, "bcastB",
                   [&](RankId to, const DenseMatrix& p) {
                     store_panel(to, kPanelB, p, step);
                     if (ready(to)) apply_update(to, step);
                   });
    if (ready(root)) apply_update(root, step);
  }
}

void SummaEngine::finish() {
  world_.begin_step(steps_);
  std::vector<RankId> all(world_.size());
  for (RankId r = 0; r < all.size(); ++r) all[r] = r;
  world_.barrier(all, "complete");
  // Kills that fired on the barrier's own events.
  const auto failed = world_.failed_ranks();
  if (!failed.empty()) {
    RankId detector = 0;
    while (!world_.alive(detector)) ++detector;
    world_.raise_failure(all, detector, failed.front(), "complete");
  }
}

RecoveryReport SummaEngine::recover(std::size_t step) {
  RecoveryWindow window(world_);
  RecoveryReport rep;
  rep.detected_at_step = step;

  // Detection: every live rank learns of the failure at its next
  // communication; some have already finished the interrupted step.
  PhaseMeter detect(world_);
  rep.failed = world_.agree_on_failures("detect");
  for (RankId r = 0; r < world_.size(); ++r) {
    if (world_.alive(r) && applied(r) > static_cast<long>(step)) ++rep.ranks_ahead;
  }
  rep.phases[0] = detect.finish("detection");
  if (rep.failed.size() != 1) {
    rep.detail = std::to_string(rep.failed.size()) +
                 " simultaneous failures exceed the single-failure tolerance";
    return rep;
  }
  const RankId victim = rep.failed.front();
  rep.recovered_rank = victim;

  PhaseMeter restart(world_);
  world_.respawn(victim);
  rep.phases[1] = restart.finish("restart");

  // Pushdata: survivors converge on the furthest completed step.
  PhaseMeter push(world_);
  long target = 0;
  for (RankId r = 0; r < world_.size(); ++r) {
    if (r != victim) target = std::max(target, applied(r));
  }
  const std::size_t q = world_.side();
  if (target > 0) {
    const auto s = static_cast<std::size_t>(target - 1);
    const std::size_t slot = s % a_.layout.grid;
    const std::size_t nb = a_.layout.nb;
    const std::size_t g = s / a_.layout.grid;
    for (RankId r = 0; r < world_.size(); ++r) {
      if (r == victim || applied(r) == target) continue;
      if (applied(r) != target - 1) {
        throw ProtocolError("rank " + std::to_string(r) + " is more than one step behind");
      }
      ++rep.laggards;
      const Coord rc = world_.coord(r);
      auto obtain = [&](std::string_view key, Axis axis, std::size_t index, RankId root,
                        const FtMatrix& m, const LocalSlice& slice, std::string_view tag) {
        if (holds_panel(r, key, s)) return;
        if (root == r) {
          store_panel(r, key, slice(m.local(world_, r)), s);
          return;
        }
        // A live root regenerates the panel from its operand, even when the
        // interrupted step never reached its ring.
        if (root != victim) {
          world_.send(root, r, tag, slice(m.local(world_, root)));
          store_panel(r, key, world_.recv(r, root).payload, s);
          return;
        }
        for (RankId h : world_.line(axis, index)) {
          if (h != victim && h != r && world_.alive(h) && holds_panel(h, key, s)) {
            world_.send(h, r, tag, world_.rank(h).data.find(key)->second);
            store_panel(r, key, world_.recv(r, h).payload, s);
            return;
          }
        }
        ++rep.rebuilt_panels;
        store_panel(r, key, rebuild_from_checksums(world_, m, victim, r, axis, tag, slice), s);
      };
      obtain(kPanelA, Axis::row, rc.row, world_.rank_of(rc.row, slot), a_,
             [&](const DenseMatrix& loc) { return loc.block(0, g * nb, loc.rows(), nb); }, "pushA");
      obtain(kPanelB, Axis::col, rc.col, world_.rank_of(slot, rc.col), b_,
             [&](const DenseMatrix& loc) { return loc.block(g * nb, 0, nb, loc.cols()); }, "pushB");
      apply_update(r, s);
    }
  }
  rep.phases[2] = push.finish("pushdata");

  // Checksum: rebuild the lost local arrays from the surviving peers.
  PhaseMeter rebuild(world_);
  const Axis axis = default_rebuild_axis(world_, victim);
  for (const FtMatrix* m : {&a_, &b_, &c_}) {
    DenseMatrix loc = rebuild_from_checksums(world_, *m, victim, victim, axis, "rebuild" + m->name);
    world_.rank(victim).data.insert_or_assign(m->name, std::move(loc));
  }
  world_.rank(victim).marks.insert_or_assign(std::string(kApplied), target);
  rep.phases[3] = rebuild.finish("checksum");

  rep.resume_step = static_cast<std::size_t>(target);
  (void)q;
  bool ok = true;
  for (const FtMatrix* m : {&a_, &b_, &c_}) {
    ok = ok && is_consistent(m->assemble(world_), m->rows_scheme, m->cols_scheme);
  }
  rep.success = ok;
  if (!ok) rep.detail = "post-recovery consistency check failed";
  return rep;
}

FtResult SummaEngine::run(const StepObserver& on_step) {
  FtResult res;
  const std::size_t q = world_.side();
  world_.arm_random_killer(steps_ * (4 * q * (q - 1) + q * q) + q * q);
  while (true) {
    try {
      while (next_ < steps_) {
        run_step(next_);
        ++next_;
        if (on_step) on_step(next_ - 1, world_, c_);
      }
      finish();
      break;
    } catch (const FailureNotice&) {
      RecoveryReport rep;
      try {
        rep = recover(next_);
      } catch (const FailureNotice& again) {
        rep.detected_at_step = next_;
        rep.detail = std::string("failure during recovery: ") + again.what();
      } catch (const UncorrectableError& e) {
        rep.detected_at_step = next_;
        rep.detail = e.what();
      }
      res.recoveries.push_back(rep);
      if (!rep.success) {
        res.degraded = true;
        res.failure = rep.detail;
        c_.degraded = true;
        break;
      }
      if (rep.resume_step > next_ && next_ < steps_) {
        if (on_step) on_step(next_, world_, c_);
      }
      next_ = rep.resume_step;
    }
  }
  res.c = c_;
  return res;
}

FtResult ft_pdgemm(const FtMatrix& a, const FtMatrix& b, GridWorld& world,
                   const StepObserver& on_step) {
  SummaEngine engine(world, a, b);
  return engine.run(on_step);
}

}  // namespace abft
