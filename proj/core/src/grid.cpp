#include "abft/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace abft {

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::send: return "send";
    case EventKind::recv: return "recv";
    case EventKind::discard: return "discard";
    case EventKind::compute: return "compute";
    case EventKind::fail: return "fail";
    case EventKind::notice: return "notice";
    case EventKind::respawn: return "respawn";
    case EventKind::sync: return "sync";
  }
  return "unknown";
}

std::string format_event(const Event& e) {
  std::ostringstream os;
  os << e.clock << ' ' << to_string(e.kind) << ' ' << e.src << ' ' << e.dst << ' ' << e.tag << ' '
     << e.size_words;
  return os.str();
}

FailureNotice::FailureNotice(std::vector<RankId> failed, std::string where)
    : Error([&] {
        std::string msg = "failure notice at " + where + ": rank(s)";
        for (RankId r : failed) msg += " " + std::to_string(r);
        return msg;
      }()),
      failed_(std::move(failed)),
      where_(std::move(where)) {}

GridWorld::GridWorld(std::size_t q, FaultPlan plan, std::uint64_t seed)
    : q_(q), plan_(std::move(plan)), seed_(seed), ranks_(q * q),
      injection_done_(plan_.injections.size(), false) {
  if (q < 2) throw InvalidArgument("grid side must be at least 2, got " + std::to_string(q));
  for (const auto& inj : plan_.injections) {
    if (inj.victim >= size()) {
      throw InvalidArgument("fault plan names rank " + std::to_string(inj.victim) +
                            " outside a grid of " + std::to_string(size()));
    }
  }
  if (plan_.killer) {
    if (!(plan_.killer->rate >= 0.0)) throw InvalidArgument("random killer rate must be >= 0");
    killer_rng_.emplace(plan_.killer->seed);
  }
}

RankId GridWorld::rank_of(std::size_t row, std::size_t col) const {
  if (row >= q_ || col >= q_) {
    throw InvalidArgument("grid coordinate (" + std::to_string(row) + "," + std::to_string(col) +
                          ") outside a " + std::to_string(q_) + "x" + std::to_string(q_) + " grid");
  }
  return row * q_ + col;
}

Coord GridWorld::coord(RankId r) const {
  check_rank(r);
  return {r / q_, r % q_};
}

bool GridWorld::is_checksum(RankId r) const {
  const Coord c = coord(r);
  return c.row == q_ - 1 || c.col == q_ - 1;
}

std::vector<RankId> GridWorld::line(Axis axis, std::size_t index) const {
  std::vector<RankId> out(q_);
  for (std::size_t t = 0; t < q_; ++t) {
    out[t] = axis == Axis::row ? rank_of(index, t) : rank_of(t, index);
  }
  return out;
}

void GridWorld::check_rank(RankId r) const {
  if (r >= ranks_.size()) {
    throw InvalidArgument("rank " + std::to_string(r) + " outside a grid of " +
                          std::to_string(ranks_.size()));
  }
}

const RankState& GridWorld::rank(RankId r) const {
  check_rank(r);
  return ranks_[r];
}

RankState& GridWorld::rank(RankId r) {
  check_rank(r);
  return ranks_[r];
}

std::vector<RankId> GridWorld::failed_ranks() const {
  std::vector<RankId> out;
  for (RankId r = 0; r < ranks_.size(); ++r)
    if (ranks_[r].status == RankStatus::failed) out.push_back(r);
  return out;
}

void GridWorld::log(EventKind kind, RankId src, RankId dst, std::string_view tag,
                    std::size_t words) {
  events_.push_back(Event{clock_, kind, src, dst, std::string(tag), words});
  ++clock_;
  fire_due_event_triggers();
}

void GridWorld::fire_due_event_triggers() {
  if (firing_) return;
  firing_ = true;
  for (std::size_t i = 0; i < plan_.injections.size(); ++i) {
    const auto& inj = plan_.injections[i];
    if (!injection_done_[i] && inj.trigger.kind == Trigger::Kind::event &&
        clock_ >= inj.trigger.value) {
      injection_done_[i] = true;
      ++fired_;
      fail(inj.victim, "injected");
    }
  }
  if (!recovering_) {
    for (auto& kill : random_kills_) {
      if (kill.done || clock_ < kill.clock) continue;
      kill.done = true;
      std::vector<RankId> live;
      for (RankId r = 0; r < ranks_.size(); ++r)
        if (ranks_[r].status == RankStatus::alive) live.push_back(r);
      if (live.empty()) continue;
      ++fired_;
      fail(live[killer_rng_->below(live.size())], "killer");
    }
  }
  firing_ = false;
}

void GridWorld::fail(RankId victim, std::string_view why) {
  RankState& s = ranks_[victim];
  if (s.status == RankStatus::failed) return;
  s.status = RankStatus::failed;
  s.failure_known = false;
  s.data.clear();
  s.marks.clear();
  log(EventKind::fail, victim, victim, why, 0);
}

void GridWorld::begin_step(std::uint64_t step) {
  for (std::size_t i = 0; i < plan_.injections.size(); ++i) {
    const auto& inj = plan_.injections[i];
    if (!injection_done_[i] && inj.trigger.kind == Trigger::Kind::step && inj.trigger.value <= step) {
      injection_done_[i] = true;
      ++fired_;
      fail(inj.victim, "injected");
    }
  }
}

void GridWorld::kill(RankId victim) {
  check_rank(victim);
  fail(victim, "killed");
}

void GridWorld::send(RankId src, RankId dst, std::string_view tag, DenseMatrix payload) {
  check_rank(src);
  check_rank(dst);
  if (!alive(src)) {
    throw ProtocolError("rank " + std::to_string(src) + " is dead and cannot send");
  }
  if (!alive(dst)) {
    const RankId only[] = {src};
    raise_failure(only, src, dst, tag);
  }
  const std::size_t words = payload.size();
  channels_[{src, dst}].push_back(Message{std::string(tag), std::move(payload), src, dst, words});
  ++sent_;
  words_sent_ += words;
  log(EventKind::send, src, dst, tag, words);
}

Message GridWorld::recv(RankId dst, RankId src) {
  check_rank(src);
  check_rank(dst);
  if (!alive(dst)) {
    throw ProtocolError("rank " + std::to_string(dst) + " is dead and cannot receive");
  }
  auto it = channels_.find({src, dst});
  if (it == channels_.end() || it->second.empty()) {
    throw ProtocolError("no message pending on channel " + std::to_string(src) + "->" +
                        std::to_string(dst));
  }
  Message m = std::move(it->second.front());
  it->second.pop_front();
  ++delivered_;
  log(EventKind::recv, src, dst, m.tag, m.size_words);
  return m;
}

std::size_t GridWorld::discard_pending(RankId src, RankId dst) {
  auto it = channels_.find({src, dst});
  if (it == channels_.end()) return 0;
  std::size_t n = 0;
  while (!it->second.empty()) {
    const Message m = std::move(it->second.front());
    it->second.pop_front();
    ++discarded_;
    ++n;
    log(EventKind::discard, m.src, m.dst, m.tag, m.size_words);
  }
  return n;
}

std::size_t GridWorld::pending(RankId src, RankId dst) const {
  auto it = channels_.find({src, dst});
  return it == channels_.end() ? 0 : it->second.size();
}

void GridWorld::compute(RankId r, std::string_view tag, std::size_t size_words) {
  check_rank(r);
  if (!alive(r)) throw ProtocolError("rank " + std::to_string(r) + " is dead and cannot compute");
  log(EventKind::compute, r, r, tag, size_words);
}

void GridWorld::barrier(std::span<const RankId> participants, std::string_view tag) {
  for (RankId r : participants) {
    if (!alive(r)) {
      RankId detector = r;
      for (RankId p : participants)
        if (alive(p)) {
          detector = p;
          break;
        }
      raise_failure(participants, detector, r, tag);
    }
  }
  for (RankId r : participants)
    if (alive(r)) log(EventKind::sync, r, r, tag, 0);
}

void GridWorld::raise_failure(std::span<const RankId> participants, RankId detector, RankId failed,
                              std::string_view tag) {
  ranks_[failed].failure_known = true;
  if (alive(detector)) log(EventKind::notice, failed, detector, tag, 0);
  for (RankId p : participants) {
    if (p != detector && p != failed && alive(p)) log(EventKind::notice, failed, p, tag, 0);
  }
  throw FailureNotice({failed}, std::string(tag));
}

std::vector<RankId> GridWorld::agree_on_failures(std::string_view tag) {
  std::vector<RankId> failed = failed_ranks();
  for (RankId f : failed) {
    ranks_[f].failure_known = true;
    for (RankId r = 0; r < ranks_.size(); ++r) {
      if (ranks_[r].status == RankStatus::alive) log(EventKind::notice, f, r, tag, 0);
    }
  }
  // Kills fired by the notices themselves are picked up by the caller.
  return failed_ranks();
}

void GridWorld::respawn(RankId r) {
  check_rank(r);
  RankState& s = ranks_[r];
  if (s.status != RankStatus::failed) {
    throw ProtocolError("cannot respawn rank " + std::to_string(r) + ": it is alive");
  }
  for (RankId src = 0; src < ranks_.size(); ++src) discard_pending(src, r);
  const std::uint32_t incarnation = s.incarnation + 1;
  s = RankState{};
  s.incarnation = incarnation;
  log(EventKind::respawn, r, r, "respawn", 0);
  for (RankId p = 0; p < ranks_.size(); ++p) {
    if (ranks_[p].status == RankStatus::alive) log(EventKind::sync, p, p, "respawn", 0);
  }
}

void GridWorld::arm_random_killer(std::uint64_t horizon) {
  if (!plan_.killer || horizon == 0) return;
  const double rate = plan_.killer->rate;
  auto count = static_cast<std::uint64_t>(std::floor(rate));
  if (killer_rng_->uniform() < rate - std::floor(rate)) ++count;
  std::vector<std::uint64_t> times;
  for (std::uint64_t k = 0; k < count; ++k) times.push_back(clock_ + killer_rng_->below(horizon));
  std::sort(times.begin(), times.end());
  for (auto t : times) random_kills_.push_back({t, false});
}

void GridWorld::set_recovering(bool recovering) {
  recovering_ = recovering;
  if (!recovering_) fire_due_event_triggers();
}

std::string GridWorld::export_log() const {
  std::string out;
  for (const auto& e : events_) {
    out += format_event(e);
    out += '\n';
  }
  return out;
}

GridWorld spawn_grid(std::size_t q, FaultPlan plan, std::uint64_t seed) {
  return GridWorld(q, std::move(plan), seed);
}

std::vector<RankId> ring_broadcast(GridWorld& world, Axis axis, std::size_t index, RankId root,
                                   const DenseMatrix& payload, std::string_view tag,
                                   const std::function<void(RankId, const DenseMatrix&)>& on_deliver) {
  const std::vector<RankId> line = world.line(axis, index);
  const auto root_pos = std::find(line.begin(), line.end(), root);
  if (root_pos == line.end()) {
    throw InvalidArgument("ring_broadcast: root " + std::to_string(root) + " is not on the line");
  }
  const RankState& root_state = world.rank(root);
  if (root_state.status == RankStatus::failed && root_state.failure_known) {
    throw ProtocolError("ring_broadcast: root " + std::to_string(root) + " is known to be dead");
  }

  std::vector<RankId> ring;
  const auto start = static_cast<std::size_t>(root_pos - line.begin());
  for (std::size_t t = 0; t < line.size(); ++t) {
    const RankId r = line[(start + t) % line.size()];
    const RankState& s = world.rank(r);
    if (r != root && s.status == RankStatus::failed && s.failure_known) continue;
    ring.push_back(r);
  }

  std::vector<RankId> delivered;
  for (std::size_t h = 1; h < ring.size(); ++h) {
    const RankId cur = ring[h - 1];
    const RankId next = ring[h];
    if (!world.alive(cur)) world.raise_failure(ring, next, cur, tag);
    if (!world.alive(next)) world.raise_failure(ring, cur, next, tag);
    world.send(cur, next, tag, payload);
    if (!world.alive(next)) world.raise_failure(ring, cur, next, tag);
    Message m = world.recv(next, cur);
    delivered.push_back(next);
    if (on_deliver && world.alive(next)) on_deliver(next, m.payload);
  }
  return delivered;
}

DenseMatrix reduce(GridWorld& world, std::vector<Contribution> parts, RankId root,
                   std::string_view tag) {
  if (parts.empty()) throw InvalidArgument("reduce: no contributions");
  std::sort(parts.begin(), parts.end(),
            [](const Contribution& a, const Contribution& b) { return a.rank < b.rank; });
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].rank == parts[i - 1].rank) {
      throw InvalidArgument("reduce: rank " + std::to_string(parts[i].rank) + " contributes twice");
    }
    if (parts[i].payload.rows() != parts[0].payload.rows() ||
        parts[i].payload.cols() != parts[0].payload.cols()) {
      throw DimensionError("reduce: contribution from rank " + std::to_string(parts[i].rank) +
                           " is not conformal");
    }
  }
  std::vector<RankId> participants;
  for (const auto& p : parts) participants.push_back(p.rank);
  if (std::find(participants.begin(), participants.end(), root) == participants.end()) {
    participants.push_back(root);
  }

  auto abort = [&](RankId detector, RankId failed) {
    if (world.alive(root)) {
      for (const auto& p : parts) {
        if (p.rank == root) continue;
        world.discard_pending(p.rank, root);
      }
    }
    world.raise_failure(participants, detector, failed, tag);
  };

  if (!world.alive(root)) {
    const RankId detector = parts.front().rank != root ? parts.front().rank : root;
    world.raise_failure(participants, detector, root, tag);
  }
  for (const auto& p : parts) {
    if (p.rank == root) continue;
    if (!world.alive(root)) abort(p.rank, root);
    if (!world.alive(p.rank)) abort(root, p.rank);
    world.send(p.rank, root, tag, p.payload);
  }

  DenseMatrix acc(parts[0].payload.rows(), parts[0].payload.cols());
  for (const auto& p : parts) {
    if (!world.alive(root)) abort(p.rank, root);
    if (p.rank == root) {
      axpy(acc, p.weight, p.payload);
      continue;
    }
    const Message m = world.recv(root, p.rank);
    axpy(acc, p.weight, m.payload);
  }
  return acc;
}

}  // namespace abft
