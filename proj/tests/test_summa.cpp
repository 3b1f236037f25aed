#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "abft/random.hpp"
#include "abft/summa.hpp"

using namespace abft;

namespace {

struct Outcome {
  GridWorld world;
  FtResult res;
  DenseMatrix a, b, c;
};

Outcome run_case(std::size_t n, std::size_t q, std::size_t nb, FaultPlan plan,
                 std::uint64_t seed = 1, const StepObserver& obs = {}) {
  Rng rng(seed);
  DenseMatrix a = random_matrix(n, n, rng);
  DenseMatrix b = random_matrix(n, n, rng);
  GridWorld world(q, std::move(plan), seed);
  const FtMatrix fa = distribute(a, world, nb, "A");
  const FtMatrix fb = distribute(b, world, nb, "B");
  FtResult res = ft_pdgemm(fa, fb, world, obs);
  DenseMatrix c = res.degraded ? DenseMatrix() : res.c.gather(world);
  return Outcome{std::move(world), std::move(res), std::move(a), std::move(b), std::move(c)};
}

FaultPlan kill_at_step(std::size_t q, std::size_t row, std::size_t col, std::uint64_t step) {
  FaultPlan p;
  p.injections.push_back({row * q + col, {Trigger::Kind::step, step}});
  return p;
}

FaultPlan kill_at_event(RankId victim, std::uint64_t event) {
  FaultPlan p;
  p.injections.push_back({victim, {Trigger::Kind::event, event}});
  return p;
}

// No payload leaves a rank between its failure and its respawn.
void expect_isolation(const GridWorld& w) {
  std::vector<bool> dead(w.size(), false);
  for (const auto& e : w.events()) {
    if (e.kind == EventKind::fail) dead[e.src] = true;
    if (e.kind == EventKind::respawn) dead[e.src] = false;
    if (e.kind == EventKind::send) {
      EXPECT_FALSE(dead[e.src]) << format_event(e);
    }
    if (e.kind == EventKind::recv || e.kind == EventKind::compute) {
      EXPECT_FALSE(dead[e.kind == EventKind::recv ? e.dst : e.src]) << format_event(e);
    }
  }
  EXPECT_EQ(w.messages_sent(), w.messages_delivered() + w.messages_discarded());
}

}  // namespace

TEST(Distribute, OneBlockPerComputeRank) {
  GridWorld w(3);
  const DenseMatrix a = DenseMatrix::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}, {13, 14, 15, 16}});
  const FtMatrix m = distribute(a, w, 2, "A");
  for (RankId r = 0; r < 9; ++r) {
    EXPECT_EQ(m.local(w, r).rows(), 2u);
    EXPECT_EQ(m.local(w, r).cols(), 2u);
  }
  EXPECT_EQ(m.local(w, w.rank_of(1, 0)), a.block(2, 0, 2, 2));
  // Border rank (0,2) holds the sum of (0,0) and (0,1).
  EXPECT_EQ(m.local(w, w.rank_of(0, 2)), DenseMatrix::from_rows({{4, 6}, {12, 14}}));
  EXPECT_EQ(m.local(w, w.rank_of(2, 0)), DenseMatrix::from_rows({{10, 12}, {18, 20}}));
  EXPECT_EQ(m.local(w, w.rank_of(2, 2)), DenseMatrix::from_rows({{24, 28}, {40, 44}}));
  EXPECT_EQ(m.gather(w), a);
}

TEST(Distribute, ZeroMatrixZeroChecksums) {
  GridWorld w(3);
  const FtMatrix m = distribute(DenseMatrix(4, 4), w, 2, "A");
  for (RankId r = 0; r < 9; ++r)
    for (double v : m.local(w, r).values()) EXPECT_EQ(v, 0.0);
}

TEST(Distribute, CyclicWrap) {
  GridWorld w(3);
  DenseMatrix a(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) a(i, j) = static_cast<double>(10 * (i / 2) + j / 2);
  const FtMatrix m = distribute(a, w, 2, "A");
  // Rank (0,0) holds blocks (0,0), (0,2), (2,0), (2,2); padding beyond 6x6 is zero.
  const DenseMatrix& loc = m.local(w, 0);
  ASSERT_EQ(loc.rows(), 4u);
  EXPECT_EQ(loc(0, 0), 0.0);
  EXPECT_EQ(loc(0, 2), 2.0);
  EXPECT_EQ(loc(2, 0), 20.0);
  EXPECT_EQ(loc(2, 2), 22.0);
  for (std::size_t gi = 0; gi < 3; ++gi)
    for (std::size_t gj = 0; gj < 3; ++gj) {
      const BlockPlacement p = place_block(m.layout, gi, gj);
      EXPECT_EQ(m.local(w, w.rank_of(p.owner.row, p.owner.col))(p.local_block_row * 2, p.local_block_col * 2),
                a(gi * 2, gj * 2));
    }
  EXPECT_EQ(m.gather(w), a);
  EXPECT_TRUE(is_consistent(m.assemble(w), m.rows_scheme, m.cols_scheme));
}

TEST(Distribute, SmallerThanOneBlockPerRank) {
  GridWorld w(4);
  const DenseMatrix a = DenseMatrix::from_rows({{1, 2}, {3, 4}});
  const FtMatrix m = distribute(a, w, 2, "A");
  EXPECT_EQ(m.gather(w), a);
  for (double v : m.local(w, w.rank_of(1, 1)).values()) EXPECT_EQ(v, 0.0);
}

TEST(Distribute, RejectsForeignSchemes) {
  GridWorld w(3);
  EXPECT_THROW(distribute(DenseMatrix(4, 4), w, 2, "A", make_scheme(1, 3), make_scheme(1, 2)),
               InvalidArgument);
  EXPECT_THROW(distribute(DenseMatrix(4, 4), w, 0, "A"), InvalidArgument);
}

TEST(FtPdgemm, IdentityTimesIdentity) {
  GridWorld w(3);
  const FtMatrix i8 = distribute(DenseMatrix::identity(8), w, 2, "A");
  const FtMatrix j8 = distribute(DenseMatrix::identity(8), w, 2, "B");
  const FtResult r = ft_pdgemm(i8, j8, w);
  EXPECT_FALSE(r.degraded);
  EXPECT_TRUE(r.recoveries.empty());
  EXPECT_EQ(r.c.gather(w), DenseMatrix::identity(8));
  EXPECT_TRUE(is_consistent(r.c.assemble(w), r.c.rows_scheme, r.c.cols_scheme));
}

TEST(FtPdgemm, FaultFreeMatchesProduct) {
  for (std::size_t q : {2u, 3u, 4u}) {
    for (std::size_t n : {5u, 8u, 13u}) {
      Outcome o = run_case(n, q, 2, {});
      const DenseMatrix ref = multiply(o.a, o.b);
      EXPECT_LE(max_abs_diff(o.c, ref), 4 * n * kMachineEpsilon * frobenius_norm(ref)) << q << " " << n;
    }
  }
}

TEST(FtPdgemm, RectangularOperands) {
  Rng rng(4);
  const DenseMatrix a = random_matrix(6, 4, rng), b = random_matrix(4, 10, rng);
  GridWorld w(3);
  const FtResult r = ft_pdgemm(distribute(a, w, 2, "A"), distribute(b, w, 2, "B"), w);
  EXPECT_LE(max_abs_diff(r.c.gather(w), multiply(a, b)), 1e-13);
}

TEST(FtPdgemm, NonconformalOperands) {
  GridWorld w(3);
  const FtMatrix a = distribute(DenseMatrix(6, 4), w, 2, "A");
  const FtMatrix b = distribute(DenseMatrix(6, 4), w, 2, "B");
  EXPECT_THROW(ft_pdgemm(a, b, w), DimensionError);
  const FtMatrix b2 = distribute(DenseMatrix(4, 4), w, 1, "B");
  EXPECT_THROW(ft_pdgemm(a, b2, w), DimensionError);
}

TEST(FtPdgemm, ComputeRankFailureAtStepTwo) {
  const Outcome clean = run_case(8, 3, 2, {});
  const Outcome hit = run_case(8, 3, 2, kill_at_step(3, 1, 0, 2));
  ASSERT_FALSE(hit.res.degraded) << hit.res.failure;
  ASSERT_EQ(hit.res.recoveries.size(), 1u);
  const RecoveryReport& r = hit.res.recoveries[0];
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.detected_at_step, 2u);
  EXPECT_EQ(r.recovered_rank, 3u);
  EXPECT_EQ(r.phases[0].name, "detection");
  EXPECT_EQ(r.phases[3].name, "checksum");
  EXPECT_GT(r.phases[3].messages, 0u);
  EXPECT_LE(max_abs_diff(hit.c, clean.c), 1e-10);
  expect_isolation(hit.world);
}

TEST(FtPdgemm, ChecksumRankFailure) {
  const Outcome clean = run_case(12, 3, 2, {});
  for (auto [row, col] : {std::pair{0, 2}, {2, 1}, {2, 2}}) {
    const Outcome hit = run_case(12, 3, 2, kill_at_step(3, row, col, 3));
    ASSERT_FALSE(hit.res.degraded);
    EXPECT_LE(max_abs_diff(hit.c, clean.c), 1e-10);
    EXPECT_TRUE(is_consistent(hit.res.c.assemble(hit.world), hit.res.c.rows_scheme, hit.res.c.cols_scheme));
    // The rebuilt border block equals the fault-free one.
    const RankId r = 3 * row + col;
    EXPECT_LE(max_abs_diff(hit.res.c.local(hit.world, r), clean.res.c.local(clean.world, r)), 1e-10);
  }
}

TEST(FtPdgemm, FailureBeforeAnyUpdate) {
  const Outcome clean = run_case(8, 3, 2, {});
  const Outcome hit = run_case(8, 3, 2, kill_at_step(3, 1, 1, 0));
  ASSERT_EQ(hit.res.recoveries.size(), 1u);
  EXPECT_EQ(hit.res.recoveries[0].resume_step, 0u);
  EXPECT_EQ(hit.res.recoveries[0].laggards, 0u);
  EXPECT_LE(max_abs_diff(hit.c, clean.c), 1e-12);
}

TEST(FtPdgemm, FailureAtFinishBarrier) {
  const Outcome clean = run_case(8, 3, 2, {});
  const Outcome hit = run_case(8, 3, 2, kill_at_step(3, 0, 1, 4));
  ASSERT_EQ(hit.res.recoveries.size(), 1u);
  EXPECT_EQ(hit.res.recoveries[0].detected_at_step, 4u);
  EXPECT_EQ(hit.res.recoveries[0].resume_step, 4u);
  EXPECT_LE(max_abs_diff(hit.c, clean.c), 1e-10);
}

TEST(FtPdgemm, TwoSimultaneousFailuresDegrade) {
  FaultPlan plan = kill_at_step(3, 0, 0, 1);
  plan.injections.push_back({4, {Trigger::Kind::step, 1}});
  const Outcome o = run_case(8, 3, 2, plan);
  EXPECT_TRUE(o.res.degraded);
  EXPECT_TRUE(o.res.c.degraded);
  ASSERT_EQ(o.res.recoveries.size(), 1u);
  EXPECT_FALSE(o.res.recoveries[0].success);
  EXPECT_EQ(o.res.recoveries[0].failed.size(), 2u);
  EXPECT_FALSE(o.res.failure.empty());
}

TEST(FtPdgemm, SequentialFailuresRecoverEach) {
  const Outcome clean = run_case(12, 3, 2, {});
  FaultPlan plan = kill_at_step(3, 0, 0, 1);
  plan.injections.push_back({8, {Trigger::Kind::step, 4}});
  const Outcome o = run_case(12, 3, 2, plan);
  ASSERT_FALSE(o.res.degraded) << o.res.failure;
  EXPECT_EQ(o.res.recoveries.size(), 2u);
  EXPECT_LE(max_abs_diff(o.c, clean.c), 1e-10);
}

TEST(Recover, HandCheckedBlockRebuild) {
  // 4x4 on q=3: every rank holds exactly one 2x2 block of C.
  Rng rng(8);
  const DenseMatrix a = random_matrix(4, 4, rng), b = random_matrix(4, 4, rng);
  GridWorld w(3);
  SummaEngine e(w, distribute(a, w, 2, "A"), distribute(b, w, 2, "B"));
  e.run_step(0);
  const DenseMatrix before = e.c().local(w, 0);
  const DenseMatrix rowsum = e.c().local(w, 2);
  const DenseMatrix other = e.c().local(w, 1);
  w.kill(0);
  w.agree_on_failures("t");
  w.respawn(0);
  const DenseMatrix rebuilt = rebuild_from_checksums(w, e.c(), 0, 0, Axis::row, "t");
  DenseMatrix hand = rowsum;
  axpy(hand, -1.0, other);
  EXPECT_EQ(rebuilt, hand);
  EXPECT_LE(max_abs_diff(rebuilt, before), 1e-14);
}

TEST(Recover, CornerBothRoutesAgree) {
  Rng rng(9);
  const DenseMatrix a = random_matrix(12, 12, rng), b = random_matrix(12, 12, rng);
  GridWorld w(3);
  SummaEngine e(w, distribute(a, w, 2, "A"), distribute(b, w, 2, "B"));
  for (std::size_t s = 0; s < 3; ++s) e.run_step(s);
  const RankId corner = 8;
  const DenseMatrix before = e.c().local(w, corner);
  w.kill(corner);
  w.agree_on_failures("t");
  w.respawn(corner);
  const DenseMatrix by_row = rebuild_from_checksums(w, e.c(), corner, corner, Axis::row, "row");
  const DenseMatrix by_col = rebuild_from_checksums(w, e.c(), corner, corner, Axis::col, "col");
  const double tol = 10 * 12 * kMachineEpsilon * frobenius_norm(before);
  EXPECT_LE(max_abs_diff(by_row, by_col), tol);
  EXPECT_LE(max_abs_diff(by_row, before), tol);
}

TEST(Recover, RebuiltOperandsMatchOriginals) {
  Rng rng(10);
  const DenseMatrix a = random_matrix(12, 12, rng), b = random_matrix(12, 12, rng);
  for (RankId victim = 0; victim < 9; ++victim) {
    GridWorld ref(3);
    const FtMatrix ra = distribute(a, ref, 2, "A");
    const FtMatrix rb = distribute(b, ref, 2, "B");
    GridWorld w(3, kill_at_step(3, victim / 3, victim % 3, 2));
    SummaEngine e(w, distribute(a, w, 2, "A"), distribute(b, w, 2, "B"));
    const FtResult res = e.run();
    ASSERT_FALSE(res.degraded);
    // kappa of a 1x1 all-ones recovery system is 1.
    const double tol = 10 * 12 * kMachineEpsilon;
    EXPECT_LE(max_abs_diff(e.a().local(w, victim), ra.local(ref, victim)),
              tol * frobenius_norm(ra.local(ref, victim)));
    EXPECT_LE(max_abs_diff(e.b().local(w, victim), rb.local(ref, victim)),
              tol * frobenius_norm(rb.local(ref, victim)));
  }
}

TEST(Invariant, ConsistentAfterEveryStep) {
  std::size_t checked = 0;
  const Outcome o = run_case(24, 3, 2, {}, 3, [&](std::size_t, const GridWorld& w, const FtMatrix& c) {
    EncodedMatrix e = c.assemble(w);
    EXPECT_EQ(verify_consistency(e, c.rows_scheme, c.cols_scheme).status, DiagnosisStatus::consistent);
    ++checked;
  });
  EXPECT_EQ(checked, 12u);
}

TEST(Invariant, ConsistentAfterEveryStepWithRecovery) {
  std::vector<std::size_t> seen;
  const Outcome o = run_case(24, 3, 2, kill_at_step(3, 1, 1, 5), 3,
                             [&](std::size_t s, const GridWorld& w, const FtMatrix& c) {
                               EXPECT_TRUE(is_consistent(c.assemble(w), c.rows_scheme, c.cols_scheme));
                               seen.push_back(s);
                             });
  std::vector<std::size_t> all(12);
  for (std::size_t s = 0; s < 12; ++s) all[s] = s;
  EXPECT_EQ(seen, all);
}

TEST(Sweep, EveryRankEveryStep) {
  const Outcome clean = run_case(12, 3, 2, {});
  for (RankId victim = 0; victim < 9; ++victim) {
    for (std::uint64_t step = 0; step < 6; ++step) {
      const Outcome o = run_case(12, 3, 2, kill_at_step(3, victim / 3, victim % 3, step));
      ASSERT_FALSE(o.res.degraded) << victim << "@" << step << ": " << o.res.failure;
      EXPECT_EQ(o.res.recoveries.size(), 1u);
      EXPECT_LE(max_abs_diff(o.c, clean.c), 1e-10) << victim << "@" << step;
    }
  }
}

TEST(Sweep, EveryRankEveryEvent) {
  const Outcome clean = run_case(12, 3, 2, {});
  const std::uint64_t horizon = clean.world.events().size();
  std::size_t ahead = 0, laggards = 0, rebuilt = 0;
  for (RankId victim = 0; victim < 9; ++victim) {
    for (std::uint64_t t = 1; t <= horizon; ++t) {
      const Outcome o = run_case(12, 3, 2, kill_at_event(victim, t));
      ASSERT_FALSE(o.res.degraded) << victim << "@event " << t << ": " << o.res.failure;
      ASSERT_EQ(o.res.recoveries.size(), 1u) << victim << "@event " << t;
      EXPECT_LE(max_abs_diff(o.c, clean.c), 1e-10) << victim << "@event " << t;
      const RecoveryReport& r = o.res.recoveries[0];
      ahead += r.ranks_ahead > 0;
      laggards += r.laggards > 0;
      rebuilt += r.rebuilt_panels > 0;
      expect_isolation(o.world);
    }
  }
  // The sweep must exercise the pipeline paths, not only clean step boundaries.
  EXPECT_GT(ahead, 0u);
  EXPECT_GT(laggards, 0u);
  EXPECT_GT(rebuilt, 0u);
}

TEST(Sweep, RandomKillerLargerGrid) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    FaultPlan plan;
    plan.killer = RandomKiller{1.0, seed};
    const Outcome o = run_case(30, 4, 3, plan, seed);
    ASSERT_FALSE(o.res.degraded) << seed << ": " << o.res.failure;
    EXPECT_LE(max_abs_diff(o.c, multiply(o.a, o.b)), 1e-10);
  }
}

TEST(Determinism, IdenticalLogs) {
  const Outcome x = run_case(12, 3, 2, kill_at_event(4, 77), 5);
  const Outcome y = run_case(12, 3, 2, kill_at_event(4, 77), 5);
  EXPECT_EQ(x.world.export_log(), y.world.export_log());
  EXPECT_EQ(x.c, y.c);
}
