#include <algorithm>
#include <map>

#include <gtest/gtest.h>

#include "abft/checksum.hpp"
#include "abft/grid.hpp"

using namespace abft;

namespace {

std::vector<Event> of_kind(const GridWorld& w, EventKind k) {
  std::vector<Event> out;
  for (const auto& e : w.events())
    if (e.kind == k) out.push_back(e);
  return out;
}

DenseMatrix scalar(double v) { return DenseMatrix(1, 1, v); }

}  // namespace

TEST(Spawn, RankCounts) {
  const auto w3 = spawn_grid(3);
  EXPECT_EQ(w3.size(), 9u);
  EXPECT_EQ(w3.compute_rank_count(), 4u);
  EXPECT_EQ(w3.checksum_rank_count(), 5u);

  const auto w2 = spawn_grid(2);
  EXPECT_EQ(w2.size(), 4u);
  EXPECT_EQ(w2.compute_rank_count(), 1u);
  EXPECT_EQ(w2.checksum_rank_count(), 3u);

  const auto w8 = spawn_grid(8);
  EXPECT_EQ(w8.size(), 64u);
  EXPECT_EQ(w8.compute_rank_count(), 49u);
  std::size_t checks = 0;
  for (RankId r = 0; r < w8.size(); ++r) checks += w8.is_checksum(r);
  EXPECT_EQ(checks, 15u);
}

TEST(Spawn, RejectsTinyGrid) {
  EXPECT_THROW(spawn_grid(1), InvalidArgument);
  EXPECT_THROW(spawn_grid(0), InvalidArgument);
  FaultPlan bad;
  bad.injections.push_back({9, {}});
  EXPECT_THROW(spawn_grid(3, bad), InvalidArgument);
}

TEST(Spawn, CoordinatesRowMajor) {
  const auto w = spawn_grid(3);
  EXPECT_EQ(w.rank_of(1, 2), 5u);
  EXPECT_EQ(w.coord(7), (Coord{2, 1}));
  EXPECT_TRUE(w.is_checksum(w.rank_of(2, 0)));
  EXPECT_TRUE(w.is_checksum(w.rank_of(0, 2)));
  EXPECT_FALSE(w.is_checksum(w.rank_of(1, 1)));
  EXPECT_EQ(w.line(Axis::col, 1), (std::vector<RankId>{1, 4, 7}));
}

TEST(RingBroadcast, RowZero) {
  auto w = spawn_grid(3);
  const DenseMatrix payload = DenseMatrix::from_rows({{1, 2}, {3, 4}});
  std::map<RankId, DenseMatrix> got;
  const auto delivered = ring_broadcast(w, Axis::row, 0, w.rank_of(0, 0), payload, "bc",
                                        [&](RankId r, const DenseMatrix& m) { got[r] = m; });
  EXPECT_EQ(delivered, (std::vector<RankId>{1, 2}));
  EXPECT_EQ(got.at(1), payload);
  EXPECT_EQ(got.at(2), payload);
  const auto sends = of_kind(w, EventKind::send);
  ASSERT_EQ(sends.size(), 2u);
  EXPECT_EQ(sends[0].src, 0u);
  EXPECT_EQ(sends[0].dst, 1u);
  EXPECT_EQ(sends[1].src, 1u);
  EXPECT_EQ(sends[1].dst, 2u);
  EXPECT_EQ(sends[0].size_words, 4u);
}

TEST(RingBroadcast, SoleLiveRank) {
  auto w = spawn_grid(2);
  w.kill(1);
  EXPECT_THROW(ring_broadcast(w, Axis::row, 0, 0, scalar(1), "bc"), FailureNotice);
  // Once the failure is known the rank is skipped.
  const auto delivered = ring_broadcast(w, Axis::row, 0, 0, scalar(1), "bc");
  EXPECT_TRUE(delivered.empty());
}

TEST(RingBroadcast, FailedNeighbourNoticedAtRootSend) {
  FaultPlan plan;
  plan.injections.push_back({1, {Trigger::Kind::step, 0}});
  auto w = spawn_grid(3, plan);
  w.begin_step(0);
  try {
    ring_broadcast(w, Axis::row, 0, 0, scalar(1), "bc");
    FAIL() << "expected FailureNotice";
  } catch (const FailureNotice& n) {
    EXPECT_EQ(n.failed(), std::vector<RankId>{1});
  }
  const auto notices = of_kind(w, EventKind::notice);
  ASSERT_FALSE(notices.empty());
  EXPECT_EQ(notices.front().src, 1u);
  EXPECT_EQ(notices.front().dst, 0u);
  EXPECT_TRUE(of_kind(w, EventKind::send).empty());
  EXPECT_TRUE(w.rank(1).failure_known);
}

TEST(Notify, ComputeNeverObservesFailure) {
  FaultPlan plan;
  plan.injections.push_back({4, {Trigger::Kind::step, 2}});
  auto w = spawn_grid(3, plan);
  w.begin_step(1);
  EXPECT_TRUE(w.alive(4));
  w.begin_step(2);
  EXPECT_FALSE(w.alive(4));
  // Local work on the neighbour goes on without a notice.
  EXPECT_NO_THROW(w.compute(3, "gemm", 4));
  EXPECT_TRUE(of_kind(w, EventKind::notice).empty());
  // The next broadcast touching rank 4 raises it.
  EXPECT_THROW(ring_broadcast(w, Axis::row, 1, 3, scalar(1), "bc"), FailureNotice);
  const auto notices = of_kind(w, EventKind::notice);
  ASSERT_FALSE(notices.empty());
  const auto fail = of_kind(w, EventKind::fail);
  ASSERT_EQ(fail.size(), 1u);
  EXPECT_LT(fail[0].clock, notices[0].clock);
}

TEST(Notify, NoInjectionsNoNotice) {
  auto w = spawn_grid(3);
  for (std::size_t s = 0; s < 5; ++s) {
    w.begin_step(s);
    for (std::size_t r = 0; r < 3; ++r) ring_broadcast(w, Axis::row, r, w.rank_of(r, s % 3), scalar(1), "bc");
  }
  w.send(0, 8, "pt", scalar(2));
  EXPECT_EQ(w.recv(8, 0).payload, scalar(2));
  EXPECT_TRUE(of_kind(w, EventKind::notice).empty());
  EXPECT_TRUE(w.failed_ranks().empty());
}

TEST(Notify, EventTriggerFiresOnce) {
  FaultPlan plan;
  plan.injections.push_back({2, {Trigger::Kind::event, 3}});
  auto w = spawn_grid(3, plan);
  w.send(0, 1, "a", scalar(1));
  w.recv(1, 0);
  EXPECT_TRUE(w.alive(2));
  w.compute(0, "c", 1);  // third event: the trigger fires right after it
  EXPECT_FALSE(w.alive(2));
  EXPECT_EQ(w.injections_fired(), 1u);
  w.respawn(2);
  for (int i = 0; i < 5; ++i) w.compute(0, "c", 1);
  EXPECT_TRUE(w.alive(2));
  EXPECT_EQ(w.injections_fired(), 1u);
}

TEST(Reduce, UnitWeights) {
  auto w = spawn_grid(3);
  const DenseMatrix got = reduce(w, {{0, 1.0, scalar(1)}, {1, 1.0, scalar(2)}, {2, 1.0, scalar(3)}}, 0, "r");
  EXPECT_EQ(got, scalar(6));
}

TEST(Reduce, SingleParticipant) {
  auto w = spawn_grid(3);
  const DenseMatrix m = DenseMatrix::from_rows({{1.5, -2}});
  EXPECT_EQ(reduce(w, {{4, 1.0, m}}, 4, "r"), m);
}

TEST(Reduce, WeightedMatchesEncodeVector) {
  auto w = spawn_grid(3);
  const auto s = make_scheme(2, 4, 7);
  Rng rng(3);
  std::vector<Vector> parts(4, Vector(5));
  for (auto& p : parts)
    for (double& v : p) v = rng.uniform(-1, 1);
  const auto ref = encode_vector(parts, s);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<Contribution> c;
    for (std::size_t j = 0; j < 4; ++j) c.push_back({j, s.weight(i, j), DenseMatrix(1, 5, parts[j])});
    const DenseMatrix got = reduce(w, c, 8, "r");
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(got(0, t), ref[i][t]);
  }
}

TEST(Reduce, FailureAbortsWithoutDelivery) {
  auto w = spawn_grid(3);
  w.kill(2);
  EXPECT_THROW(reduce(w, {{0, 1.0, scalar(1)}, {1, 1.0, scalar(2)}, {2, 1.0, scalar(3)}}, 4, "r"),
               FailureNotice);
  EXPECT_EQ(w.pending(0, 4), 0u);
  EXPECT_EQ(w.pending(1, 4), 0u);
  EXPECT_EQ(w.messages_sent(), w.messages_delivered() + w.messages_discarded());
  EXPECT_GT(w.messages_discarded(), 0u);
}

TEST(Respawn, BlankState) {
  auto w = spawn_grid(3);
  w.rank(4).data["C"] = DenseMatrix(2, 2, 1.0);
  w.kill(4);
  EXPECT_TRUE(w.rank(4).data.empty());
  w.respawn(4);
  EXPECT_TRUE(w.alive(4));
  EXPECT_TRUE(w.rank(4).data.empty());
  EXPECT_EQ(w.rank(4).incarnation, 1u);
  EXPECT_EQ(of_kind(w, EventKind::respawn).size(), 1u);
  EXPECT_EQ(of_kind(w, EventKind::sync).size(), 9u);
}

TEST(Respawn, LiveRankIsProtocolError) {
  auto w = spawn_grid(3);
  EXPECT_THROW(w.respawn(4), ProtocolError);
}

TEST(Respawn, StaleMessagesDiscarded) {
  auto w = spawn_grid(3);
  w.send(0, 4, "stale", scalar(1));
  w.send(1, 4, "stale", scalar(2));
  w.kill(4);
  w.respawn(4);
  EXPECT_EQ(w.pending(0, 4), 0u);
  const auto discards = of_kind(w, EventKind::discard);
  ASSERT_EQ(discards.size(), 2u);
  EXPECT_EQ(discards[0].tag, "stale");
  EXPECT_EQ(w.messages_sent(), w.messages_delivered() + w.messages_discarded());
}

TEST(Messaging, FifoPerChannel) {
  auto w = spawn_grid(3);
  for (int i = 0; i < 5; ++i) w.send(3, 5, "m", scalar(i));
  w.send(4, 5, "other", scalar(99));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(w.recv(5, 3).payload, scalar(i));
  EXPECT_THROW(w.recv(5, 3), ProtocolError);
}

TEST(Messaging, DeadSenderAndReceiver) {
  auto w = spawn_grid(3);
  w.kill(1);
  EXPECT_THROW(w.send(1, 0, "x", scalar(1)), ProtocolError);
  EXPECT_THROW(w.send(0, 1, "x", scalar(1)), FailureNotice);
  EXPECT_THROW(w.recv(1, 0), ProtocolError);
  EXPECT_THROW(w.compute(1, "x", 1), ProtocolError);
}

TEST(Determinism, RandomKillerSameSeedSameLog) {
  auto drive = [](std::uint64_t seed) {
    FaultPlan plan;
    plan.killer = RandomKiller{2.0, seed};
    GridWorld w(3, plan, seed);
    w.arm_random_killer(100);
    for (int step = 0; step < 20; ++step) {
      for (std::size_t r = 0; r < 3; ++r) {
        try {
          ring_broadcast(w, Axis::row, r, w.rank_of(r, 0), scalar(step), "bc");
        } catch (const FailureNotice&) {
          w.agree_on_failures("agree");
          for (RankId f : w.failed_ranks()) w.respawn(f);
        }
      }
    }
    return w.export_log();
  };
  EXPECT_EQ(drive(5), drive(5));
  EXPECT_NE(drive(5), drive(6));
}

TEST(RandomKiller, DeferredWhileRecovering) {
  FaultPlan plan;
  plan.killer = RandomKiller{1.0, 3};
  GridWorld w(3, plan, 3);
  w.arm_random_killer(1);  // due at the first event
  w.set_recovering(true);
  for (int i = 0; i < 4; ++i) w.compute(0, "c", 1);
  EXPECT_TRUE(w.failed_ranks().empty());
  w.set_recovering(false);
  EXPECT_EQ(w.failed_ranks().size(), 1u);
}

TEST(EventLog, FormatLine) {
  const Event e{7, EventKind::send, 1, 2, "bcastA", 16};
  EXPECT_EQ(format_event(e), "7 send 1 2 bcastA 16");
  auto w = spawn_grid(2);
  w.compute(0, "gemm", 4);
  EXPECT_EQ(w.export_log(), "0 compute 0 0 gemm 4\n");
}
