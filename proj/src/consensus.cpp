#include "smartshards/consensus.hpp"

#include <algorithm>

namespace smartshards {

ShardId consensus_shard(const ConsensusMsg& m) {
  return std::visit([](const auto& x) { return x.shard; }, m);
}

ShardConsensus::ShardConsensus(PeerId self, ShardId shard,
                               const ConsensusParams& params, ConsensusEnv* env)
    : self_(self), shard_(shard), params_(params), env_(env) {}

const std::vector<PeerId>& ShardConsensus::members(int epoch) {
  return env_->members_at(shard_, epoch);
}

int64_t ShardConsensus::fault_cap(int epoch) {
  return (static_cast<int64_t>(members(epoch).size()) - 1) / 3;
}

int64_t ShardConsensus::quorum(int epoch) { return 2 * fault_cap(epoch) + 1; }

PeerId ShardConsensus::leader_of(int view) const {
  const auto& m = env_->members_at(shard_, env_->current_epoch(shard_));
  if (m.empty()) return -1;
  return m[static_cast<size_t>(view) % m.size()];
}

namespace {
PeerId leader_for(const std::vector<PeerId>& members, int view) {
  if (members.empty()) return -1;
  return members[static_cast<size_t>(view) % members.size()];
}
}  // namespace

int ShardConsensus::open_count() const {
  int n = 0;
  for (const auto& [_, inst] : instances_)
    if (!inst.decided) ++n;
  return n;
}

bool ShardConsensus::verdict_open(Digest tx_digest) const {
  for (const auto& [_, inst] : instances_)
    if (!inst.decided && inst.is_verdict &&
        inst.verdict_tx.digest() == tx_digest)
      return true;
  return false;
}

ShardConsensus::Instance& ShardConsensus::instance(int64_t seq, int epoch) {
  auto it = instances_.find(seq);
  if (it == instances_.end()) {
    Instance inst;
    inst.seq = seq;
    inst.epoch = epoch;
    it = instances_.emplace(seq, std::move(inst)).first;
  }
  return it->second;
}

void ShardConsensus::broadcast(const ConsensusMsg& m, int epoch,
                               ConsensusOutput& out) {
  for (PeerId p : members(epoch)) out.sends.push_back({p, m});
}

void ShardConsensus::send_to(PeerId to, const ConsensusMsg& m,
                             ConsensusOutput& out) {
  out.sends.push_back({to, m});
}

int64_t ShardConsensus::propose(const Payload& p, int round,
                                ConsensusOutput& out) {
  if (!is_leader()) {
    out.violations.push_back("proposal attempt by non-leader");
    return -1;
  }
  int epoch = env_->current_epoch(shard_);
  int64_t seq = next_seq_++;
  Instance& inst = instance(seq, epoch);
  inst.epoch = epoch;
  if (const Transaction* tx = p.verdict_tx()) {
    inst.is_verdict = true;
    inst.verdict_tx = *tx;
  }
  inst.known_payloads[p.digest()] = p;
  inst.last_progress = round;
  broadcast(PrePrepareMsg{shard_, seq, view_, epoch, p}, epoch, out);
  last_leader_broadcast_ = round;
  return seq;
}

void ShardConsensus::handle(const ConsensusMsg& m, PeerId from, int round,
                            ConsensusOutput& out) {
  // Instances below the bootstrap watermark were decided before this
  // replica's state snapshot; late messages for them carry no information.
  if (const auto* pp0 = std::get_if<PrePrepareMsg>(&m)) {
    if (pp0->seq < bootstrap_floor_) return;
  } else if (const auto* v0 = std::get_if<VoteMsg>(&m)) {
    if (v0->seq < bootstrap_floor_) return;
  } else if (const auto* c0 = std::get_if<CertMsg>(&m)) {
    if (c0->seq < bootstrap_floor_) return;
  }
  if (const auto* vc = std::get_if<ViewChangeMsg>(&m)) {
    handle_view_change(*vc, from, round, out);
    return;
  }
  if (const auto* hb = std::get_if<HeartbeatMsg>(&m)) {
    note_leader_activity(from, hb->view, round);
    return;
  }
  if (const auto* pp = std::get_if<PrePrepareMsg>(&m)) {
    if (pp->epoch > env_->current_epoch(shard_)) {
      // Proposal from a membership epoch we have not executed yet. Channel
      // order is preserved, so follow-up certificates join the same buffer.
      epoch_buffer_.push_back({from, m});
      return;
    }
    if (pp->seq >= next_seq_) next_seq_ = pp->seq + 1;
    Instance& inst = instance(pp->seq, pp->epoch);
    if (inst.decided) return;
    if (pp->view > view_) {
      inst.future.push_back({from, m});
      return;
    }
    if (pp->view < view_) return;
    if (leader_for(members(inst.epoch), pp->view) != from) {
      out.violations.push_back("pre-prepare from non-leader peer " +
                               std::to_string(from));
      return;
    }
    note_leader_activity(from, pp->view, round);
    accept_preprepare(inst, *pp, round, out);
    return;
  }
  if (const auto* vote = std::get_if<VoteMsg>(&m)) {
    auto it = instances_.find(vote->seq);
    if (it == instances_.end()) {
      if (!epoch_buffer_.empty()) epoch_buffer_.push_back({from, m});
      return;
    }
    Instance& inst = it->second;
    if (inst.decided) return;
    if (vote->view > view_) {
      inst.future.push_back({from, m});
      return;
    }
    collect_vote(inst, *vote, from, round, out);
    return;
  }
  if (const auto* cert = std::get_if<CertMsg>(&m)) {
    auto it = instances_.find(cert->seq);
    if (it == instances_.end() && !epoch_buffer_.empty()) {
      epoch_buffer_.push_back({from, m});
      return;
    }
    if (cert->seq >= next_seq_) next_seq_ = cert->seq + 1;
    Instance& inst = instance(cert->seq, env_->current_epoch(shard_));
    if (inst.decided) return;
    if (cert->view > view_) {
      inst.future.push_back({from, m});
      return;
    }
    handle_cert(inst, *cert, from, round, out);
    return;
  }
}

void ShardConsensus::epoch_advanced(int round, ConsensusOutput& out) {
  if (epoch_buffer_.empty()) return;
  int epoch = env_->current_epoch(shard_);
  std::vector<std::pair<PeerId, ConsensusMsg>> pending;
  pending.swap(epoch_buffer_);
  for (auto& [from, msg] : pending) {
    const auto* pp = std::get_if<PrePrepareMsg>(&msg);
    if (pp && pp->epoch > epoch) {
      epoch_buffer_.push_back({from, std::move(msg)});
      continue;
    }
    handle(msg, from, round, out);
  }
}

void ShardConsensus::bootstrap(int64_t next_seq, int view, int round) {
  next_seq_ = next_seq;
  bootstrap_floor_ = next_seq;
  view_ = view;
  last_leader_activity_ = round;
  // Sequences below the snapshot watermark were decided before we joined.
  for (auto it = instances_.begin(); it != instances_.end();) {
    if (it->first < next_seq) {
      it = instances_.erase(it);
    } else {
      ++it;
    }
  }
}

void ShardConsensus::accept_preprepare(Instance& inst, const PrePrepareMsg& m,
                                       int round, ConsensusOutput& out) {
  ViewState& vs = inst.views[m.view];
  Digest d = m.payload.digest();
  if (vs.accepted && *vs.accepted != d) {
    out.violations.push_back("conflicting pre-prepare in view " +
                             std::to_string(m.view));
    return;
  }
  bool fresh = !vs.accepted;
  vs.accepted = d;
  inst.known_payloads[d] = m.payload;
  if (const Transaction* tx = m.payload.verdict_tx()) {
    inst.is_verdict = true;
    inst.verdict_tx = *tx;
  }
  inst.last_progress = round;
  if (!fresh || vs.prepare_voted) {
    maybe_complete_pending(inst, out);
    return;
  }
  // Locked state overrides the proposal; otherwise verdict instances vote
  // their current receipt quorum and hold while it is still false.
  if (inst.lock_view >= 0) {
    cast_prepare(inst, m.view, inst.lock_digest, inst.lock_bit, round, out);
  } else if (inst.is_verdict) {
    if (env_->verdict_input(shard_, inst.verdict_tx)) {
      cast_prepare(inst, m.view, d, true, round, out);
    } else {
      inst.hold_since = round;
    }
  } else {
    cast_prepare(inst, m.view, d, true, round, out);
  }
  maybe_complete_pending(inst, out);
}

void ShardConsensus::cast_prepare(Instance& inst, int view, Digest digest,
                                  bool bit, int round, ConsensusOutput& out) {
  (void)round;
  ViewState& vs = inst.views[view];
  if (vs.prepare_voted) return;
  vs.prepare_voted = true;
  inst.hold_since = -1;
  const auto& mem = members(inst.epoch);
  // A replica outside the instance's member set (it left the shard after the
  // instance opened) keeps executing decisions but has no vote to cast.
  if (!std::binary_search(mem.begin(), mem.end(), self_)) return;
  send_to(leader_for(mem, view),
          VoteMsg{shard_, inst.seq, view, VotePhase::Prepare, digest, bit},
          out);
}

void ShardConsensus::collect_vote(Instance& inst, const VoteMsg& m,
                                  PeerId from, int round,
                                  ConsensusOutput& out) {
  const auto& mem = members(inst.epoch);
  if (leader_for(mem, m.view) != self_) return;
  if (!std::binary_search(mem.begin(), mem.end(), from)) {
    out.violations.push_back("vote from non-member peer " +
                             std::to_string(from));
    return;
  }
  ViewState& vs = inst.views[m.view];
  auto& voters = m.phase == VotePhase::Prepare ? vs.prepare_voters
                                               : vs.commit_voters;
  // An equivocating voter counts once per phase; later conflicting votes
  // from the same sender are dropped.
  if (!voters.insert(from).second) return;
  auto& buckets = m.phase == VotePhase::Prepare ? vs.prepares : vs.commits;
  auto& backers = buckets[{m.digest, m.bit}];
  backers.insert(from);
  inst.last_progress = round;
  if (static_cast<int64_t>(backers.size()) < quorum(inst.epoch)) return;
  if (m.phase == VotePhase::Prepare && !vs.prepare_cert_sent) {
    vs.prepare_cert_sent = true;
    CertMsg cert;
    cert.shard = shard_;
    cert.seq = inst.seq;
    cert.view = m.view;
    cert.phase = m.phase;
    cert.digest = m.digest;
    cert.bit = m.bit;
    cert.voters.assign(backers.begin(), backers.end());
    broadcast(cert, inst.epoch, out);
    last_leader_broadcast_ = round;
  } else if (m.phase == VotePhase::Commit && !vs.commit_cert_sent) {
    vs.commit_cert_sent = true;
    CertMsg cert;
    cert.shard = shard_;
    cert.seq = inst.seq;
    cert.view = m.view;
    cert.phase = m.phase;
    cert.digest = m.digest;
    cert.bit = m.bit;
    cert.voters.assign(backers.begin(), backers.end());
    auto known = inst.known_payloads.find(m.digest);
    if (known != inst.known_payloads.end()) cert.payload = known->second;
    broadcast(cert, inst.epoch, out);
    last_leader_broadcast_ = round;
  }
}

void ShardConsensus::handle_cert(Instance& inst, const CertMsg& m, PeerId from,
                                 int round, ConsensusOutput& out) {
  const auto& mem = members(inst.epoch);
  if (leader_for(mem, m.view) != from) {
    out.violations.push_back("certificate from non-leader peer " +
                             std::to_string(from));
    return;
  }
  note_leader_activity(from, m.view, round);
  inst.last_progress = round;
  if (m.payload) inst.known_payloads[m.digest] = *m.payload;
  if (m.phase == VotePhase::Prepare) {
    if (m.view > inst.lock_view) {
      inst.lock_view = m.view;
      inst.lock_digest = m.digest;
      inst.lock_bit = m.bit;
    }
    ViewState& vs = inst.views[m.view];
    if (!vs.commit_voted) {
      vs.commit_voted = true;
      if (std::binary_search(mem.begin(), mem.end(), self_)) {
        send_to(leader_for(mem, m.view),
                VoteMsg{shard_, inst.seq, m.view, VotePhase::Commit, m.digest,
                        m.bit},
                out);
      }
    }
  } else {
    decide(inst, m.digest, m.bit, m.view, out);
  }
}

void ShardConsensus::decide(Instance& inst, Digest digest, bool bit, int view,
                            ConsensusOutput& out) {
  if (inst.decided) return;
  auto known = inst.known_payloads.find(digest);
  if (known == inst.known_payloads.end()) {
    // Certificate outran every copy of the payload; finish once one arrives.
    inst.pending_decide = {{digest, bit}};
    inst.pending_decide_view = view;
    return;
  }
  inst.decided = true;
  out.decisions.push_back({inst.seq, known->second, bit, view});
  inst.views.clear();
  inst.future.clear();
  inst.known_payloads.clear();
  inst.pending_decide.reset();
}

void ShardConsensus::maybe_complete_pending(Instance& inst,
                                            ConsensusOutput& out) {
  if (!inst.pending_decide) return;
  auto [d, b] = *inst.pending_decide;
  if (inst.known_payloads.count(d))
    decide(inst, d, b, inst.pending_decide_view, out);
}

void ShardConsensus::verdict_changed(Digest tx_digest, int round,
                                     ConsensusOutput& out) {
  for (auto& [_, inst] : instances_) {
    if (inst.decided || !inst.is_verdict || inst.hold_since < 0) continue;
    if (inst.verdict_tx.digest() != tx_digest) continue;
    ViewState& vs = inst.views[view_];
    if (!vs.accepted || vs.prepare_voted) continue;
    if (env_->verdict_input(shard_, inst.verdict_tx))
      cast_prepare(inst, view_, *vs.accepted, true, round, out);
  }
}

void ShardConsensus::tick(int round, ConsensusOutput& out) {
  bool want_vc = false;
  for (auto& [_, inst] : instances_) {
    if (inst.decided) continue;
    // Release held verdict votes as false after the grace window.
    if (inst.hold_since >= 0 &&
        round - inst.hold_since >= params_.verdict_grace) {
      ViewState& vs = inst.views[view_];
      if (vs.accepted && !vs.prepare_voted)
        cast_prepare(inst, view_, *vs.accepted, false, round, out);
      else
        inst.hold_since = -1;
    }
    if (round - inst.last_progress >= params_.view_timeout) want_vc = true;
  }
  if ((has_pending_ || open_count() > 0) &&
      round - last_leader_activity_ >= params_.view_timeout && !is_leader())
    want_vc = true;
  if (want_vc) cast_view_change(view_ + 1, round, out);
  if (is_leader() &&
      round - last_leader_broadcast_ >= params_.heartbeat_interval) {
    broadcast(HeartbeatMsg{shard_, view_}, env_->current_epoch(shard_), out);
    last_leader_broadcast_ = round;
  }
}

void ShardConsensus::cast_view_change(int target_view, int round,
                                      ConsensusOutput& out) {
  (void)round;
  if (target_view <= view_ || vc_voted_.count(target_view)) return;
  vc_voted_.insert(target_view);
  ViewChangeMsg vc{shard_, target_view, {}};
  for (auto& [seq, inst] : instances_) {
    if (inst.decided) continue;
    ViewChangeMsg::Lock lock;
    lock.seq = seq;
    lock.epoch = inst.epoch;
    if (inst.lock_view >= 0) {
      lock.lock_view = inst.lock_view;
      lock.digest = inst.lock_digest;
      lock.bit = inst.lock_bit;
      auto it = inst.known_payloads.find(inst.lock_digest);
      if (it != inst.known_payloads.end()) lock.payload = it->second;
    } else {
      // No prepared state; carry the newest accepted payload if any.
      Digest d = 0;
      bool have = false;
      for (auto& [view, vs] : inst.views)
        if (vs.accepted) {
          d = *vs.accepted;
          have = true;
        }
      if (!have) continue;
      lock.lock_view = -1;
      lock.digest = d;
      lock.bit = true;
      auto it = inst.known_payloads.find(d);
      if (it != inst.known_payloads.end()) lock.payload = it->second;
    }
    vc.locks.push_back(std::move(lock));
  }
  broadcast(vc, env_->current_epoch(shard_), out);
}

void ShardConsensus::handle_view_change(const ViewChangeMsg& m, PeerId from,
                                        int round, ConsensusOutput& out) {
  if (m.proposed_view <= view_) return;
  const auto& mem = members(env_->current_epoch(shard_));
  if (!std::binary_search(mem.begin(), mem.end(), from)) return;
  vc_votes_[m.proposed_view][from] = m.locks;
  int64_t f = fault_cap(env_->current_epoch(shard_));
  int64_t have = static_cast<int64_t>(vc_votes_[m.proposed_view].size());
  // Join a view change backed by at least one correct peer.
  if (have >= f + 1) cast_view_change(m.proposed_view, round, out);
  if (have >= 2 * f + 1) adopt_view(m.proposed_view, round, out);
}

void ShardConsensus::adopt_view(int v, int round, ConsensusOutput& out) {
  if (v <= view_) return;
  auto carried = vc_votes_[v];  // copy before pruning
  view_ = v;
  out.view_adopted = true;
  last_leader_activity_ = round;
  for (auto it = vc_votes_.begin(); it != vc_votes_.end();)
    it = it->first <= v ? vc_votes_.erase(it) : ++it;
  for (auto& [_, inst] : instances_) inst.hold_since = -1;

  if (leader_of(v) == self_) {
    // Re-propose every open instance, preferring the highest prepared lock.
    std::map<int64_t, ViewChangeMsg::Lock> best;
    auto offer = [&](const ViewChangeMsg::Lock& cand) {
      auto it = best.find(cand.seq);
      if (it == best.end() || cand.lock_view > it->second.lock_view ||
          (cand.lock_view == it->second.lock_view && !it->second.payload &&
           cand.payload))
        best[cand.seq] = cand;
    };
    for (const auto& [sender, locks] : carried)
      for (const auto& lock : locks) offer(lock);
    for (auto& [seq, inst] : instances_) {
      if (inst.decided) continue;
      ViewChangeMsg::Lock own;
      own.seq = seq;
      own.epoch = inst.epoch;
      if (inst.lock_view >= 0) {
        own.lock_view = inst.lock_view;
        own.digest = inst.lock_digest;
        own.bit = inst.lock_bit;
      } else {
        own.lock_view = -1;
        bool have = false;
        for (auto& [view, vs] : inst.views)
          if (vs.accepted) {
            own.digest = *vs.accepted;
            have = true;
          }
        if (!have) own.digest = 0;
      }
      auto it = inst.known_payloads.find(own.digest);
      if (it != inst.known_payloads.end()) own.payload = it->second;
      if (own.digest != 0 || !inst.known_payloads.empty()) offer(own);
      if (!best.count(seq)) {
        ViewChangeMsg::Lock noop;
        noop.seq = seq;
        noop.epoch = inst.epoch;
        offer(noop);
      }
    }
    for (auto& [seq, lock] : best) {
      // A carried lock can be pinned at a membership epoch this replica has
      // not executed yet; it cannot resolve that member set, so it must not
      // lead the instance. Peers that are at that epoch will change view
      // again and one of them takes over.
      if (lock.epoch > env_->current_epoch(shard_)) continue;
      Instance& inst = instance(seq, lock.epoch);
      if (inst.decided) continue;
      Payload p;
      if (lock.payload) {
        p = *lock.payload;
      } else if (inst.known_payloads.count(lock.digest)) {
        p = inst.known_payloads.at(lock.digest);
      } else {
        p.items.push_back(NoOpItem{});
      }
      inst.known_payloads[p.digest()] = p;
      if (const Transaction* tx = p.verdict_tx()) {
        inst.is_verdict = true;
        inst.verdict_tx = *tx;
      }
      inst.last_progress = round;
      broadcast(PrePrepareMsg{shard_, seq, view_, inst.epoch, p}, inst.epoch,
                out);
    }
    last_leader_broadcast_ = round;
  }

  // Replay buffered traffic that was ahead of our view.
  std::vector<std::pair<PeerId, ConsensusMsg>> replay;
  for (auto& [_, inst] : instances_) {
    if (inst.future.empty()) continue;
    auto pending = std::move(inst.future);
    inst.future.clear();
    for (auto& entry : pending) replay.push_back(std::move(entry));
  }
  for (auto& [from, msg] : replay) handle(msg, from, round, out);
}

void ShardConsensus::note_leader_activity(PeerId from, int view, int round) {
  if (view == view_ && from == leader_of(view_))
    last_leader_activity_ = round;
}

}  // namespace smartshards
