#include "smartshards/sim.hpp"

namespace smartshards {

Network::Network(uint64_t seed, int max_delay, TraceSink& sink,
                 bool trace_wire)
    : rng_(seed, "net.delay"),
      max_delay_(max_delay),
      sink_(sink),
      trace_wire_(trace_wire),
      alive_([](int32_t) { return true; }) {}

void Network::send(int32_t from, int32_t to, Message msg, int round) {
  int delay = 1 + static_cast<int>(rng_.below(static_cast<uint64_t>(max_delay_)));
  int due = round + delay;
  auto key = std::make_pair(from, to);
  // FIFO per channel: never deliver before an earlier message on the same
  // channel. Since the earlier message was sent no later than this round,
  // the clamp keeps the delay within [1, maxDelay].
  auto it = chan_last_due_.find(key);
  if (it != chan_last_due_.end() && due < it->second) due = it->second;
  chan_last_due_[key] = due;
  int64_t seq = chan_next_seq_[key]++;

  if (trace_wire_) {
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::Send;
    e.actor = from;
    e.digest = message_digest(msg);
    e.f0 = to;
    e.f1 = seq;
    e.f2 = message_kind(msg);
    e.f3 = due;
    sink_.event(e);
  }
  ++total_sends_;
  pending_[due].push_back(InFlight{from, to, round, seq, std::move(msg)});
}

std::vector<Network::Delivery> Network::take(int round) {
  std::vector<Delivery> out;
  auto it = pending_.find(round);
  if (it == pending_.end()) return out;
  out.reserve(it->second.size());
  for (auto& m : it->second) {
    bool to_alive = alive_(m.to);
    bool from_alive = alive_(m.from);
    if (!to_alive || !from_alive) {
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Drop;
      e.actor = m.to;
      e.digest = message_digest(m.msg);
      e.f0 = m.from;
      e.f1 = m.chan_seq;
      e.f2 = message_kind(m.msg);
      e.f3 = to_alive ? 2 : 1;  // 1: receiver gone, 2: sender gone
      sink_.event(e);
      continue;
    }
    if (trace_wire_) {
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Deliver;
      e.actor = m.to;
      e.digest = message_digest(m.msg);
      e.f0 = m.from;
      e.f1 = m.chan_seq;
      e.f2 = message_kind(m.msg);
      e.f3 = m.send_round;
      sink_.event(e);
    }
    out.push_back(
        Delivery{m.from, m.to, m.send_round, m.chan_seq, std::move(m.msg)});
  }
  pending_.erase(it);
  return out;
}

int Network::next_due_round() const {
  return pending_.empty() ? -1 : pending_.begin()->first;
}

int64_t Network::purge(int round, const std::function<bool(int32_t, int32_t,
                                                           const Message&)>&
                                      pred) {
  int64_t purged = 0;
  for (auto it = pending_.begin(); it != pending_.end();) {
    auto& batch = it->second;
    for (auto m = batch.begin(); m != batch.end();) {
      if (pred(m->from, m->to, m->msg)) {
        TraceEvent e;
        e.round = round;
        e.kind = EventKind::Drop;
        e.actor = m->to;
        e.digest = message_digest(m->msg);
        e.f0 = m->from;
        e.f1 = m->chan_seq;
        e.f2 = message_kind(m->msg);
        e.f3 = 3;  // invalidated by lifecycle surgery
        sink_.event(e);
        ++purged;
        m = batch.erase(m);
      } else {
        ++m;
      }
    }
    if (batch.empty()) {
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
  return purged;
}

}  // namespace smartshards
