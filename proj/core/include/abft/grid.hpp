#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abft/dense.hpp"
#include "abft/errors.hpp"
#include "abft/random.hpp"

namespace abft {

using RankId = std::size_t;

struct Coord {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const Coord&) const = default;
};

enum class Axis { row, col };

struct Trigger {
  enum class Kind { step, event };
  Kind kind = Kind::step;
  std::uint64_t value = 0;
};

/// One scripted kill: `victim` fails once `trigger` has elapsed.
struct Injection {
  RankId victim = 0;
  Trigger trigger;
};

/// Kills floor(rate) ranks per armed run, plus one more with probability
/// frac(rate), at uniformly random event times and random live victims.
struct RandomKiller {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

struct FaultPlan {
  std::vector<Injection> injections;
  std::optional<RandomKiller> killer;
};

enum class EventKind { send, recv, discard, compute, fail, notice, respawn, sync };

std::string to_string(EventKind kind);

struct Event {
  std::uint64_t clock = 0;
  EventKind kind = EventKind::send;
  RankId src = 0;
  RankId dst = 0;
  std::string tag;
  std::size_t size_words = 0;

  bool operator==(const Event&) const = default;
};

/// "clock kind src dst tag size_words"
std::string format_event(const Event& e);

struct Message {
  std::string tag;
  DenseMatrix payload;
  RankId src = 0;
  RankId dst = 0;
  std::size_t size_words = 0;
};

/// Raised at a communication point that touched a failed rank. Every live
/// participant of the operation has a `notice` event in the log.
class FailureNotice : public Error {
 public:
  FailureNotice(std::vector<RankId> failed, std::string where);

  const std::vector<RankId>& failed() const noexcept { return failed_; }
  const std::string& where() const noexcept { return where_; }

 private:
  std::vector<RankId> failed_;
  std::string where_;
};

enum class RankStatus { alive, failed };

/// Everything a rank owns. Wiped when the rank fails.
struct RankState {
  RankStatus status = RankStatus::alive;
  bool failure_known = false;
  std::uint32_t incarnation = 0;
  std::map<std::string, DenseMatrix, std::less<>> data;
  std::map<std::string, std::int64_t, std::less<>> marks;
};

/// Deterministic q x q simulated machine. Row q-1 and column q-1 hold
/// checksums; the leading (q-1) x (q-1) ranks hold data. Ranks are
/// numbered row-major. All operations run sequentially on the caller's
/// thread and every observable action appends to the event log.
class GridWorld {
 public:
  GridWorld(std::size_t q, FaultPlan plan = {}, std::uint64_t seed = 0);

  std::size_t side() const noexcept { return q_; }
  std::size_t size() const noexcept { return q_ * q_; }
  std::size_t compute_side() const noexcept { return q_ - 1; }
  std::size_t compute_rank_count() const noexcept { return (q_ - 1) * (q_ - 1); }
  std::size_t checksum_rank_count() const noexcept { return 2 * q_ - 1; }

  RankId rank_of(std::size_t row, std::size_t col) const;
  Coord coord(RankId r) const;
  bool is_checksum(RankId r) const;
  /// Ranks of one grid row or column, in increasing index order.
  std::vector<RankId> line(Axis axis, std::size_t index) const;

  const RankState& rank(RankId r) const;
  RankState& rank(RankId r);
  bool alive(RankId r) const { return rank(r).status == RankStatus::alive; }
  std::vector<RankId> failed_ranks() const;

  /// Point-to-point. Throws ProtocolError when `src` is dead and
  /// FailureNotice (noticed by `src`) when `dst` is dead.
  void send(RankId src, RankId dst, std::string_view tag, DenseMatrix payload);
  /// Pops the oldest message on src->dst. Throws ProtocolError if none.
  Message recv(RankId dst, RankId src);
  std::size_t pending(RankId src, RankId dst) const;
  /// Drops everything queued on src->dst, logging one discard per message.
  std::size_t discard_pending(RankId src, RankId dst);

  /// Local work; advances the clock but never observes failures.
  void compute(RankId r, std::string_view tag, std::size_t size_words);

  /// Synchronisation point for `participants`; raises FailureNotice if any
  /// of them is dead.
  void barrier(std::span<const RankId> participants, std::string_view tag);

  /// Logs a notice of `failed` at every live participant (`detector` first),
  /// marks the failure as known and throws.
  [[noreturn]] void raise_failure(std::span<const RankId> participants, RankId detector,
                                  RankId failed, std::string_view tag);

  /// Every live rank learns every current failure. Returns the failed ranks.
  std::vector<RankId> agree_on_failures(std::string_view tag);

  /// Fires step-triggered injections with trigger <= step.
  void begin_step(std::uint64_t step);
  /// Immediate failure of `victim` (no-op if already failed).
  void kill(RankId victim);
  /// Replaces a failed rank with a blank one. Stale messages addressed to
  /// the dead incarnation are discarded. Throws ProtocolError if alive.
  void respawn(RankId r);

  /// Schedules the random killer's kills over the next `horizon` events.
  void arm_random_killer(std::uint64_t horizon);
  /// Random kills that come due while recovering are held back until the
  /// recovery window closes.
  void set_recovering(bool recovering);

  std::uint64_t clock() const noexcept { return clock_; }
  const std::vector<Event>& events() const noexcept { return events_; }
  std::string export_log() const;

  std::uint64_t messages_sent() const noexcept { return sent_; }
  std::uint64_t messages_delivered() const noexcept { return delivered_; }
  std::uint64_t messages_discarded() const noexcept { return discarded_; }
  std::uint64_t words_sent() const noexcept { return words_sent_; }
  std::size_t injections_fired() const noexcept { return fired_; }

  const FaultPlan& fault_plan() const noexcept { return plan_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  struct ScheduledKill {
    std::uint64_t clock;
    bool done;
  };

  void log(EventKind kind, RankId src, RankId dst, std::string_view tag, std::size_t words);
  void fire_due_event_triggers();
  void fail(RankId victim, std::string_view why);
  void check_rank(RankId r) const;

  std::size_t q_;
  FaultPlan plan_;
  std::uint64_t seed_;
  std::vector<RankState> ranks_;
  std::map<std::pair<RankId, RankId>, std::deque<Message>> channels_;
  std::vector<Event> events_;
  std::uint64_t clock_ = 0;
  std::vector<bool> injection_done_;
  std::vector<ScheduledKill> random_kills_;
  std::optional<Rng> killer_rng_;
  bool recovering_ = false;
  bool firing_ = false;
  std::uint64_t sent_ = 0;
  std::uint64_t delivered_ = 0;
  std::uint64_t discarded_ = 0;
  std::uint64_t words_sent_ = 0;
  std::size_t fired_ = 0;
};

/// Validates q >= 2 and builds the world.
GridWorld spawn_grid(std::size_t q, FaultPlan plan = {}, std::uint64_t seed = 0);

/// Forwards `payload` hop by hop around one grid row or column starting at
/// `root`. Ranks whose failure is already known are skipped; an unknown
/// failure met on the way raises FailureNotice to the whole line.
/// `on_deliver` runs at each receiver right after its recv event.
std::vector<RankId> ring_broadcast(
    GridWorld& world, Axis axis, std::size_t index, RankId root, const DenseMatrix& payload,
    std::string_view tag,
    const std::function<void(RankId, const DenseMatrix&)>& on_deliver = {});

struct Contribution {
  RankId rank = 0;
  double weight = 1.0;
  DenseMatrix payload;
};

/// Weighted sum of the contributions delivered at `root`, accumulated in
/// ascending rank order. A dead participant aborts the reduction: nothing
/// is delivered and messages already queued at the root are discarded.
DenseMatrix reduce(GridWorld& world, std::vector<Contribution> parts, RankId root,
                   std::string_view tag);

}  // namespace abft
