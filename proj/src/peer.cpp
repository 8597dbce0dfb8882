#include <algorithm>
#include <limits>

#include "smartshards/sim.hpp"

namespace smartshards {

namespace {

// Digest corruption used by equivocating voters.
constexpr Digest kVoteFlip = 0x517cc1b727220a95ull;

const std::vector<PeerId> kNoMembers;

}  // namespace

PeerActor::PeerActor(PeerId id, const SimConfig& cfg, uint64_t seed,
                     TraceSink& sink, SimHooks* hooks)
    : id_(id),
      cfg_(cfg),
      rng_(seed, "peer" + std::to_string(id)),
      sink_(sink),
      hooks_(hooks) {
  params_.pipeline_depth = cfg.pipelineDepth;
  params_.view_timeout = cfg.effective_view_timeout();
  params_.verdict_grace = cfg.verdict_grace();
  params_.heartbeat_interval = std::max(2, params_.view_timeout / 4);
}

PeerActor::~PeerActor() = default;

// ---------------------------------------------------------------------------
// wiring

void PeerActor::genesis_context(
    ShardId shard, ShardId other_seat,
    const std::vector<std::pair<PeerId, ShardId>>& members) {
  Ctx& c = ctxs_[shard];
  c.shard = shard;
  c.other_seat = other_seat;
  c.ledger = Ledger(shard);
  c.log.set_genesis(members);
  c.engine =
      std::make_unique<ShardConsensus>(id_, shard, params_, this);
  active_ = true;
}

void PeerActor::adopt_context(ShardId shard, const Ledger& ledger,
                              const MembershipLog& log, int64_t next_seq,
                              int view, int round) {
  Ctx& c = ctxs_[shard];
  c.shard = shard;
  c.ledger = ledger;
  c.log = log;
  c.exec_next = next_seq;
  // When an existing context is force-synced (lifecycle surgery), anything
  // tied to the replaced engine's instances is void. Queued items and
  // transfer receipts survive: they re-propose under the fresh engine.
  c.ready.clear();
  c.draw_inputs.clear();
  c.draw_busy.clear();
  c.proposed_by_me.clear();
  c.proposed_items.clear();
  c.forwarded.clear();
  c.forwarded_view = 0;
  c.join_fence = -1;
  c.engine = std::make_unique<ShardConsensus>(id_, shard, params_, this);
  c.engine->bootstrap(next_seq, view, round);
  for (auto& [s, other] : ctxs_) {
    if (s != shard) {
      other.other_seat = shard;
      c.other_seat = s;
    }
  }
}

void PeerActor::drop_context(ShardId shard) {
  ctxs_.erase(shard);
  for (auto& [s, c] : ctxs_) {
    if (c.other_seat == shard) c.other_seat = -1;
  }
}

void PeerActor::set_plain_members(
    const std::map<ShardId, std::set<PeerId>>& m) {
  plain_members_ = m;
}

std::vector<ShardId> PeerActor::shards() const {
  std::vector<ShardId> out;
  out.reserve(ctxs_.size());
  for (const auto& [s, c] : ctxs_) out.push_back(s);
  return out;
}

bool PeerActor::in_shard(ShardId s) const { return ctxs_.count(s) != 0; }

PeerActor::Ctx* PeerActor::ctx(ShardId shard) {
  auto it = ctxs_.find(shard);
  return it == ctxs_.end() ? nullptr : &it->second;
}

const PeerActor::Ctx* PeerActor::ctx(ShardId shard) const {
  auto it = ctxs_.find(shard);
  return it == ctxs_.end() ? nullptr : &it->second;
}

const Ledger* PeerActor::ledger(ShardId s) const {
  const Ctx* c = ctx(s);
  return c ? &c->ledger : nullptr;
}

const MembershipLog* PeerActor::memlog(ShardId s) const {
  const Ctx* c = ctx(s);
  return c ? &c->log : nullptr;
}

Ledger* PeerActor::mutable_ledger(ShardId s) {
  Ctx* c = ctx(s);
  return c ? &c->ledger : nullptr;
}

MembershipLog* PeerActor::mutable_memlog(ShardId s) {
  Ctx* c = ctx(s);
  return c ? &c->log : nullptr;
}

const ShardConsensus* PeerActor::engine(ShardId s) const {
  const Ctx* c = ctx(s);
  return c ? c->engine.get() : nullptr;
}

PeerId PeerActor::current_leader(ShardId s) const {
  const Ctx* c = ctx(s);
  return c ? c->engine->leader() : -1;
}

int64_t PeerActor::exec_next(ShardId s) const {
  const Ctx* c = ctx(s);
  return c ? c->exec_next : -1;
}

void PeerActor::surgery_sync(ShardId shard, const Ledger& ledger,
                             const MembershipLog& log) {
  Ctx* c = ctx(shard);
  if (!c) return;
  c->ledger = ledger;
  c->log = log;
}

void PeerActor::surgery_forget_shard_refs(ShardId destroyed) {
  for (auto& [s, c] : ctxs_) {
    for (auto it = c.receipts.begin(); it != c.receipts.end();) {
      if (it->second.first.source_shard == destroyed) {
        it = c.receipts.erase(it);
      } else {
        ++it;
      }
    }
    if (c.other_seat == destroyed) c.other_seat = -1;
  }
  plain_members_.erase(destroyed);
}

void PeerActor::surgery_clear_join_buckets(ShardId shard) {
  auto it = join_state_.find(shard);
  if (it == join_state_.end() || it->second.adopted) return;
  it->second.buckets.clear();
  // Force a fresh introduction so current members send new receipts.
  it->second.item_sent = false;
}

void PeerActor::surgery_reset_join() {
  if (!joining_) return;
  join_shards_.clear();
  join_state_.clear();
  join_buffer_.clear();
  ctxs_.clear();
  last_join_send_ = -1000000;  // re-request on the next tick
}

void PeerActor::surgery_replace_join_slot(ShardId from, ShardId to, int round,
                                          Network& net) {
  if (!joining_) return;
  join_state_.erase(from);
  join_buffer_.erase(from);
  JoinShardState st;
  st.adopted = true;
  st.have_reply = true;
  join_state_[to] = std::move(st);
  for (ShardId& s : join_shards_) {
    if (s == from) s = to;
  }
  check_join_complete(round, net);
}

void PeerActor::surgery_expel(ShardId shard, int round) {
  if (!in_shard(shard) || departed_) return;
  drop_context(shard);
  bool pending = false;
  for (const auto& [s, c] : ctxs_) {
    if (!c.leave_requested || !c.leave_done) pending = true;
  }
  if (ctxs_.empty() || (leaving_ && !pending)) {
    departed_ = true;
    active_ = false;
    leaving_ = false;
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::LeaveDone;
    e.actor = id_;
    sink_.event(e);
  }
}

// ---------------------------------------------------------------------------
// ConsensusEnv

const std::vector<PeerId>& PeerActor::members_at(ShardId shard, int epoch) {
  Ctx* c = ctx(shard);
  if (!c) return kNoMembers;
  return c->log.members_at(epoch);
}

int PeerActor::current_epoch(ShardId shard) {
  Ctx* c = ctx(shard);
  return c ? c->log.current_epoch() : 0;
}

bool PeerActor::verdict_input(ShardId shard, const Transaction& tx) {
  Digest d = tx.digest();
  if (behavior_ == FaultBehavior::ForgeTransfer && forged_.count(d)) {
    return true;
  }
  Ctx* c = ctx(shard);
  if (!c) return false;
  if (c->ledger.contains_tx(d)) return true;
  auto it = c->receipts.find(d);
  if (it == c->receipts.end()) return false;
  return static_cast<int64_t>(it->second.second.size()) >=
         transfer_threshold(*c, tx);
}

int64_t PeerActor::transfer_threshold(const Ctx& c,
                                      const Transaction& tx) const {
  if (cfg_.mode == Mode::Plain) {
    auto it = plain_members_.find(tx.source_shard);
    if (it == plain_members_.end() || it->second.empty()) {
      return std::numeric_limits<int64_t>::max();
    }
    return static_cast<int64_t>(it->second.size()) / 2 + 1;
  }
  int64_t overlap = 0;
  for (PeerId q : c.log.members()) {
    if (c.log.counter_shard(q) == tx.source_shard) ++overlap;
  }
  if (overlap == 0) return std::numeric_limits<int64_t>::max();
  if (cfg_.quorumRule == QuorumRule::StrictMajority) return overlap / 2 + 1;
  return (overlap + 1) / 2;  // ceil(overlap / 2)
}

// ---------------------------------------------------------------------------
// join / leave handshakes

void PeerActor::start_join(int round, Network& net) {
  joining_ = true;
  send_join_request(round, net);
}

void PeerActor::restart_as_joiner(int round, Network& net) {
  ctxs_.clear();
  plain_members_.clear();
  active_ = false;
  departed_ = false;
  leaving_ = false;
  join_attempts_ = 0;
  join_shards_.clear();
  join_state_.clear();
  join_buffer_.clear();
  forged_.clear();
  start_join(round, net);
}

void PeerActor::send_join_request(int round, Network& net) {
  ++join_attempts_;
  last_join_send_ = round;
  net.send(id_, kActorSms, JoinRequest{id_, join_attempts_}, round);
  TraceEvent e;
  e.round = round;
  e.kind = EventKind::JoinRequest;
  e.actor = id_;
  e.f0 = join_attempts_;
  sink_.event(e);
}

void PeerActor::start_leave(int round, Network& net) {
  if (leaving_ || departed_ || !active_) return;
  leaving_ = true;
  TraceEvent e;
  e.round = round;
  e.kind = EventKind::LeaveRequest;
  e.actor = id_;
  auto ids = shards();
  e.f0 = ids.empty() ? -1 : ids[0];
  e.f1 = ids.size() > 1 ? ids[1] : -1;
  sink_.event(e);
  for (auto& [s, c] : ctxs_) {
    c.leave_requested = true;
    c.leave_f = (static_cast<int64_t>(c.log.members().size()) - 1) / 3;
  }
  send_leave_requests(round, net);
}

void PeerActor::send_leave_requests(int round, Network& net) {
  for (auto& [s, c] : ctxs_) {
    if (!c.leave_requested || c.leave_done) continue;
    c.last_leave_send = round;
    LeaveItem item{id_, s};
    enqueue_item(c, item);
    int64_t want = c.leave_f + 1;
    int64_t sent = 0;
    for (PeerId q : c.log.members()) {
      if (q == id_) continue;
      net.send(id_, q, ProposalForward{s, PayloadItem{item}}, round);
      if (++sent >= want) break;
    }
  }
}

void PeerActor::maybe_adopt(ShardId shard, int round, Network& net) {
  auto it = join_state_.find(shard);
  if (it == join_state_.end() || it->second.adopted) return;
  JoinShardState& js = it->second;
  for (auto& [key, bucket] : js.buckets) {
    if (static_cast<int64_t>(bucket.senders.size()) < js.f + 1) continue;
    const JoinReceipt& r = bucket.sample;
    adopt_context(shard, *r.ledger, *r.log, key.next_seq, bucket.max_view,
                  round);
    js.adopted = true;

    TraceEvent e;
    e.round = round;
    e.kind = EventKind::JoinAdopt;
    e.actor = id_;
    e.digest = key.ledger_digest;
    e.f0 = shard;
    e.f1 = static_cast<int64_t>(bucket.senders.size());
    sink_.event(e);

    auto buf = join_buffer_.find(shard);
    if (buf != join_buffer_.end()) {
      auto queued = std::move(buf->second);
      join_buffer_.erase(buf);
      for (auto& [from, msg] : queued) {
        handle_active(from, msg, round, net);
      }
    }
    check_join_complete(round, net);
    return;
  }
}

void PeerActor::check_join_complete(int round, Network& net) {
  (void)net;
  if (!joining_) return;
  size_t want = cfg_.mode == Mode::Plain ? 1 : 2;
  if (join_state_.size() < want) return;
  for (const auto& [s, js] : join_state_) {
    if (!js.adopted) return;
  }
  joining_ = false;
  active_ = true;
  // Record each context's counter seat.
  std::vector<ShardId> seats = shards();
  if (seats.size() == 2) {
    ctxs_[seats[0]].other_seat = seats[1];
    ctxs_[seats[1]].other_seat = seats[0];
  }
  if (cfg_.mode == Mode::Plain && sms_view_) {
    plain_members_ = sms_view_->members();
  }
  TraceEvent e;
  e.round = round;
  e.kind = EventKind::JoinActive;
  e.actor = id_;
  e.f0 = seats.empty() ? -1 : seats[0];
  e.f1 = seats.size() > 1 ? seats[1] : -1;
  sink_.event(e);
}

void PeerActor::handle_joining(int32_t from, const Message& m, int round,
                               Network& net) {
  if (const auto* reply = std::get_if<MembershipReply>(&m)) {
    if (reply->tx_digest != 0) return;
    JoinShardState& js = join_state_[reply->shard];
    js.expected = reply->members;
    js.f = reply->f;
    js.have_reply = true;
    if (std::find(join_shards_.begin(), join_shards_.end(), reply->shard) ==
        join_shards_.end()) {
      join_shards_.push_back(reply->shard);
    }
    size_t want = cfg_.mode == Mode::Plain ? 1 : 2;
    if (join_shards_.size() < want) return;
    // (Re)introduce ourselves to f+1 members of each assigned shard.
    for (ShardId s : join_shards_) {
      JoinShardState& st = join_state_[s];
      if (st.adopted || !st.have_reply) continue;
      if (st.item_sent && round - st.last_item_send < cfg_.resendPeriod) {
        continue;
      }
      ShardId other = -1;
      for (ShardId o : join_shards_) {
        if (o != s) other = o;
      }
      JoinItem item{id_, s, other};
      int64_t want_n = st.f + 1;
      int64_t sent = 0;
      for (PeerId q : st.expected) {
        net.send(id_, q, ProposalForward{s, PayloadItem{item}}, round);
        if (++sent >= want_n) break;
      }
      st.item_sent = true;
      st.last_item_send = round;
    }
    return;
  }

  if (const auto* receipt = std::get_if<JoinReceipt>(&m)) {
    auto it = join_state_.find(receipt->shard);
    if (it == join_state_.end() || it->second.adopted) return;
    JoinShardState& js = it->second;
    if (std::find(js.expected.begin(), js.expected.end(),
                  static_cast<PeerId>(from)) == js.expected.end()) {
      return;  // receipt from outside the advertised member set
    }
    if (!receipt->ledger || !receipt->log) return;
    JoinShardState::ReceiptKey key{receipt->ledger->digest(),
                                   receipt->log->digest(), receipt->next_seq};
    auto& bucket = js.buckets[key];
    bucket.senders.insert(static_cast<PeerId>(from));
    bucket.max_view = std::max(bucket.max_view, receipt->view);
    bucket.sample = *receipt;
    maybe_adopt(receipt->shard, round, net);
    return;
  }

  // Traffic addressed to us as a future member: buffer per shard until the
  // matching snapshot is adopted.
  ShardId s = -1;
  if (const auto* cm = std::get_if<ConsensusMsg>(&m)) {
    s = consensus_shard(*cm);
  } else if (const auto* tr = std::get_if<TransferMsg>(&m)) {
    s = tr->tx.target_shard;
  } else if (const auto* fwd = std::get_if<ProposalForward>(&m)) {
    s = fwd->shard;
  } else if (const auto* route = std::get_if<TxRoute>(&m)) {
    s = route->tx.source_shard;
  } else {
    return;
  }
  if (ctxs_.count(s)) {
    handle_active(from, m, round, net);
    return;
  }
  if (join_state_.count(s)) {
    join_buffer_[s].push_back({static_cast<PeerId>(from), m});
  }
}

// ---------------------------------------------------------------------------
// message handling

void PeerActor::handle(int32_t from, const Message& m, int round,
                       Network& net) {
  if (departed_) return;
  if (behavior_ == FaultBehavior::CrashSilent) return;
  if (joining_) {
    handle_joining(from, m, round, net);
    return;
  }
  handle_active(from, m, round, net);
}

void PeerActor::handle_active(int32_t from, const Message& m, int round,
                              Network& net) {
  if (const auto* cm = std::get_if<ConsensusMsg>(&m)) {
    Ctx* c = ctx(consensus_shard(*cm));
    if (!c) return;
    ConsensusOutput out;
    c->engine->handle(*cm, static_cast<PeerId>(from), round, out);
    run_output(*c, out, round, net);
    return;
  }

  if (const auto* route = std::get_if<TxRoute>(&m)) {
    const Transaction& tx = route->tx;
    Ctx* c = ctx(tx.source_shard);
    if (!c) return;
    Digest d = tx.digest();
    if (c->ledger.contains_tx(d)) {
      // Resubmission of an already appended transaction: repeat the
      // confirmation instead of opening a new instance.
      UtxoId out = 0;
      for (auto it = c->ledger.records().rbegin();
           it != c->ledger.records().rend(); ++it) {
        if (it->tx.digest() == d) {
          out = it->output_utxo;
          break;
        }
      }
      confirm_to_client(tx, out, c->shard, round, net);
      return;
    }
    if (!c->ledger.valid_for(tx)) {
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Reject;
      e.actor = id_;
      e.digest = d;
      e.f0 = c->shard;
      e.f1 = 1;  // invalid at admission
      sink_.event(e);
      return;
    }
    enqueue_item(*c, PayloadItem{tx});
    return;
  }

  if (const auto* tr = std::get_if<TransferMsg>(&m)) {
    Ctx* c = ctx(tr->tx.target_shard);
    if (!c) return;
    on_transfer(*c, tr->tx, static_cast<PeerId>(from), round, net);
    return;
  }

  if (const auto* fwd = std::get_if<ProposalForward>(&m)) {
    Ctx* c = ctx(fwd->shard);
    if (!c) return;
    const PayloadItem& item = fwd->item;
    if (const auto* tx = std::get_if<Transaction>(&item)) {
      Digest d = tx->digest();
      if (c->ledger.contains_tx(d)) {
        UtxoId out = 0;
        for (auto it = c->ledger.records().rbegin();
             it != c->ledger.records().rend(); ++it) {
          if (it->tx.digest() == d) {
            out = it->output_utxo;
            break;
          }
        }
        confirm_to_client(*tx, out, c->shard, round, net);
        return;
      }
      if (!c->ledger.valid_for(*tx)) return;
      enqueue_item(*c, item);
      return;
    }
    if (std::get_if<VerdictItem>(&item)) {
      // Verdict instances are opened by the target-shard leader from its own
      // receipt state; forwarded verdicts would let one faulty peer burn the
      // single instance a transfer is entitled to.
      return;
    }
    if (const auto* j = std::get_if<JoinItem>(&item)) {
      if (j->shard != c->shard || c->log.is_member(j->peer)) return;
      enqueue_item(*c, item);
      return;
    }
    if (const auto* l = std::get_if<LeaveItem>(&item)) {
      if (l->shard != c->shard || !c->log.is_member(l->peer)) return;
      enqueue_item(*c, item);
      return;
    }
    if (const auto* ms = std::get_if<MultiSpendItem>(&item)) {
      if (c->multis_done.count(ms->multi_id)) return;
      // Final validation happens at execution; admission is permissive so a
      // replica that lags on consolidation does not drop the batch.
      enqueue_item(*c, item);
      return;
    }
    return;
  }

  if (const auto* receipt = std::get_if<LeaveReceipt>(&m)) {
    Ctx* c = ctx(receipt->shard);
    if (!c || !c->leave_requested || c->leave_done) return;
    c->leave_receipt_senders.insert(static_cast<PeerId>(from));
    if (static_cast<int64_t>(c->leave_receipt_senders.size()) >=
        c->leave_f + 1) {
      c->leave_done = true;
      bool all = true;
      for (const auto& [s, cc] : ctxs_) {
        if (!cc.leave_done) all = false;
      }
      if (all) {
        departed_ = true;
        active_ = false;
        leaving_ = false;
        TraceEvent e;
        e.round = round;
        e.kind = EventKind::LeaveDone;
        e.actor = id_;
        sink_.event(e);
      }
    }
    return;
  }

  if (const auto* pm = std::get_if<PlainMembership>(&m)) {
    if (cfg_.mode != Mode::Plain) return;
    if (pm->join) {
      plain_members_[pm->shard].insert(pm->peer);
    } else {
      auto it = plain_members_.find(pm->shard);
      if (it != plain_members_.end()) it->second.erase(pm->peer);
    }
    return;
  }

  // Late join receipts after activation, client-only traffic, etc.
}

// ---------------------------------------------------------------------------
// transfers

void PeerActor::on_transfer(Ctx& c, const Transaction& tx, PeerId from,
                            int round, Network& net) {
  if (tx.target_shard != c.shard) return;
  Digest d = tx.digest();
  if (c.ledger.contains_tx(d)) return;
  // Only overlap members of the source shard may vouch for a transfer;
  // in plain mode, only current members of the source committee.
  if (cfg_.mode == Mode::Plain) {
    auto it = plain_members_.find(tx.source_shard);
    if (it == plain_members_.end() || !it->second.count(from)) return;
  } else {
    if (!c.log.is_member(from)) return;
    if (c.log.counter_shard(from) != tx.source_shard) return;
  }
  auto& slot = c.receipts[d];
  slot.first = tx;
  bool added = slot.second.insert(from).second;
  if (!added) return;
  if (static_cast<int64_t>(slot.second.size()) >=
      transfer_threshold(c, tx)) {
    ConsensusOutput out;
    c.engine->verdict_changed(d, round, out);
    run_output(c, out, round, net);
  }
}

void PeerActor::confirm_to_client(const Transaction& tx, UtxoId output,
                                  ShardId shard, int round, Network& net) {
  if (tx.client == kNoClient) return;
  net.send(id_, client_actor(tx.client), TxConfirm{tx, output, shard}, round);
}

// ---------------------------------------------------------------------------
// queueing and leader work

void PeerActor::enqueue_item(Ctx& c, const PayloadItem& item) {
  Digest d = item_digest(item);
  if (c.queue.count(d)) return;
  c.queue.emplace(d, item);
  c.queue_order.push_back(d);
}

void PeerActor::forward_queue(Ctx& c, int round, Network& net) {
  int view = c.engine->view();
  if (view != c.forwarded_view) {
    c.forwarded.clear();
    c.forwarded_view = view;
  }
  PeerId leader = c.engine->leader();
  if (leader == id_ || leader < 0) return;
  for (const auto& [d, item] : c.queue) {
    if (c.forwarded.count(d)) continue;
    net.send(id_, leader, ProposalForward{c.shard, item}, round);
    c.forwarded.insert(d);
  }
}

std::vector<UtxoId> PeerActor::draw_candidates(const Ctx& c) const {
  std::vector<UtxoId> out;
  for (WalletId w : c.ledger.wallets()) {
    for (UtxoId u : c.ledger.unspent_in(w)) {
      if (c.draw_busy.count(u)) continue;
      const Utxo* utxo = c.ledger.find(u);
      if (!utxo || utxo->owner != kNoClient) continue;
      out.push_back(u);
      if (out.size() >= 64) return out;
    }
  }
  return out;
}

void PeerActor::leader_duties(Ctx& c, int round, Network& net) {
  // Prune digests whose queue entry is gone (decided or rejected).
  while (!c.queue_order.empty() && !c.queue.count(c.queue_order.front())) {
    c.queue_order.pop_front();
  }

  // A proposed join serializes the pipeline until its slot executes.
  if (c.join_fence >= 0) {
    if (c.exec_next <= c.join_fence) return;
    c.join_fence = -1;
  }

  // 1. Verdict instances for quorum-backed transfers, one per transfer ever.
  //    Candidates are snapshotted: executing a decision inside run_output may
  //    mutate the receipt map.
  std::vector<Digest> verdict_ready;
  for (const auto& [d, slot] : c.receipts) {
    if (c.verdict_closed.count(d)) continue;
    if (c.engine->verdict_open(d)) continue;
    if (c.ledger.contains_tx(d)) continue;
    if (static_cast<int64_t>(slot.second.size()) <
        transfer_threshold(c, slot.first)) {
      continue;
    }
    verdict_ready.push_back(d);
  }
  for (Digest d : verdict_ready) {
    if (!c.engine->has_free_slot()) break;
    auto it = c.receipts.find(d);
    if (it == c.receipts.end() || c.verdict_closed.count(d)) continue;
    Payload p;
    p.items.push_back(VerdictItem{it->second.first});
    ConsensusOutput out;
    int64_t seq = c.engine->propose(p, round, out);
    if (seq >= 0) {
      c.verdict_closed.insert(d);
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Propose;
      e.actor = id_;
      e.digest = p.digest();
      e.f0 = c.shard;
      e.f1 = c.engine->view();
      e.f2 = 1;
      e.f3 = seq;
      sink_.event(e);
    }
    run_output(c, out, round, net);
  }

  // 2. Queued client and membership items.
  while (c.engine->has_free_slot()) {
    Payload p;
    std::vector<Digest> taken;
    size_t scan = 0;
    while (scan < c.queue_order.size()) {
      Digest d = c.queue_order[scan];
      auto it = c.queue.find(d);
      if (it == c.queue.end() || c.proposed_by_me.count(d) ||
          std::find(taken.begin(), taken.end(), d) != taken.end()) {
        ++scan;
        continue;
      }
      bool is_tx = std::holds_alternative<Transaction>(it->second);
      if (!is_tx && !p.items.empty()) break;  // membership items travel alone
      p.items.push_back(it->second);
      taken.push_back(d);
      ++scan;
      if (!is_tx) break;
      if (static_cast<int>(p.items.size()) >= cfg_.blockSize) break;
    }
    if (p.items.empty()) break;
    ConsensusOutput out;
    int64_t seq = c.engine->propose(p, round, out);
    if (seq < 0) break;
    for (Digest d : taken) c.proposed_by_me.insert(d);
    c.proposed_items[seq] = taken;
    bool fenced = p.items.size() == 1 &&
                  std::holds_alternative<JoinItem>(p.items.front());
    if (fenced) c.join_fence = seq;
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::Propose;
    e.actor = id_;
    e.digest = p.digest();
    e.f0 = c.shard;
    e.f1 = c.engine->view();
    e.f2 = static_cast<int64_t>(p.items.size());
    e.f3 = seq;
    sink_.event(e);
    run_output(c, out, round, net);
    if (fenced && c.exec_next <= c.join_fence) return;
  }

  // 3. Self-drawn load.
  bool load_on = cfg_.loadMode == LoadMode::LeaderDraw &&
                 round <= cfg_.rounds &&
                 (cfg_.loadStopRound == 0 || round <= cfg_.loadStopRound);
  if (!load_on || !sms_view_ || sms_view_->wallet_list().empty()) return;
  while (c.engine->has_free_slot()) {
    std::vector<UtxoId> cand = draw_candidates(c);
    if (cand.empty()) break;
    Payload p;
    std::vector<UtxoId> used;
    for (int k = 0; k < cfg_.blockSize && !cand.empty(); ++k) {
      size_t idx = static_cast<size_t>(rng_.below(cand.size()));
      UtxoId input = cand[idx];
      cand.erase(cand.begin() + static_cast<long>(idx));
      const Utxo* u = c.ledger.find(input);
      const auto& wallets = sms_view_->wallet_list();
      WalletId tw = wallets[rng_.below(wallets.size())];
      ShardId ts = sms_view_->wallet_home(tw);
      if (!u || ts < 0) continue;
      Transaction tx;
      tx.client = kNoClient;
      tx.input_utxo = input;
      tx.source_shard = c.shard;
      tx.source_wallet = u->wallet;
      tx.target_shard = ts;
      tx.target_wallet = tw;
      p.items.push_back(tx);
      used.push_back(input);

      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Submit;
      e.actor = id_;
      e.digest = tx.digest();
      e.f0 = tx.source_shard;
      e.f1 = tx.target_shard;
      e.f2 = 5;  // leader-drawn
      e.f3 = input;
      sink_.event(e);
    }
    if (p.items.empty()) break;
    ConsensusOutput out;
    int64_t seq = c.engine->propose(p, round, out);
    if (seq < 0) break;
    for (UtxoId u : used) c.draw_busy.insert(u);
    c.draw_inputs[seq] = used;
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::Propose;
    e.actor = id_;
    e.digest = p.digest();
    e.f0 = c.shard;
    e.f1 = c.engine->view();
    e.f2 = static_cast<int64_t>(p.items.size());
    e.f3 = seq;
    sink_.event(e);
    run_output(c, out, round, net);
  }
}

void PeerActor::update_pending_flag(Ctx& c) {
  bool pending = !c.queue.empty();
  if (!pending) {
    for (const auto& [d, slot] : c.receipts) {
      if (c.verdict_closed.count(d)) continue;
      if (c.ledger.contains_tx(d)) continue;
      if (static_cast<int64_t>(slot.second.size()) >=
          transfer_threshold(c, slot.first)) {
        pending = true;
        break;
      }
    }
  }
  c.engine->set_has_pending(pending);
}

// ---------------------------------------------------------------------------
// consensus output plumbing

void PeerActor::send_consensus(Ctx& c, PeerId to, const ConsensusMsg& m,
                               int round, Network& net) {
  net.send(id_, to, Message{m}, round);
  (void)c;
}

void PeerActor::run_output(Ctx& c, ConsensusOutput& out, int round,
                           Network& net) {
  if (behavior_ == FaultBehavior::CrashSilent) return;

  size_t idx = 0;
  for (auto& s : out.sends) {
    if (behavior_ == FaultBehavior::EquivocateConsensus) {
      if (auto* pp = std::get_if<PrePrepareMsg>(&s.msg)) {
        if (idx % 2 == 1) {
          // Conflicting proposal for half the members.
          PrePrepareMsg alt = *pp;
          alt.payload.items.push_back(NoOpItem{});
          send_consensus(c, s.to, alt, round, net);
          ++idx;
          continue;
        }
      } else if (auto* v = std::get_if<VoteMsg>(&s.msg)) {
        if (rng_.below(2) == 0) {
          VoteMsg alt = *v;
          alt.digest ^= kVoteFlip;
          send_consensus(c, s.to, alt, round, net);
          ++idx;
          continue;
        }
      }
    }
    send_consensus(c, s.to, s.msg, round, net);
    ++idx;
  }

  for (const std::string& v : out.violations) {
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::Violation;
    e.actor = id_;
    e.f0 = c.shard;
    e.note = v;
    sink_.event(e);
  }

  if (out.view_adopted) {
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::View;
    e.actor = id_;
    e.f0 = c.shard;
    e.f1 = c.engine->view();
    sink_.event(e);
  }

  bool executed = false;
  for (auto& d : out.decisions) {
    if (d.seq < c.exec_next) continue;
    if (c.engine->leader_of(d.view) == id_) {
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Decide;
      e.actor = id_;
      e.digest = d.payload.digest();
      e.f0 = c.shard;
      e.f1 = d.view;
      e.f2 = d.bit ? 1 : 0;
      e.f3 = d.seq;
      sink_.event(e);
    }
    c.ready.emplace(d.seq, std::move(d));
    executed = true;
  }
  if (executed) execute_ready(c, round, net);
}

// ---------------------------------------------------------------------------
// execution

void PeerActor::execute_ready(Ctx& c, int round, Network& net) {
  while (true) {
    auto it = c.ready.find(c.exec_next);
    if (it == c.ready.end()) return;
    ConsensusDecision d = std::move(it->second);
    c.ready.erase(it);
    int64_t seq = c.exec_next;
    for (const PayloadItem& item : d.payload.items) {
      execute_item(c, item, d.bit, seq, d.view, round, net);
    }
    // Slot bookkeeping: inputs and queue items tied to this sequence are
    // settled regardless of what was finally decided in the slot.
    auto di = c.draw_inputs.find(seq);
    if (di != c.draw_inputs.end()) {
      for (UtxoId u : di->second) c.draw_busy.erase(u);
      c.draw_inputs.erase(di);
    }
    auto pi = c.proposed_items.find(seq);
    if (pi != c.proposed_items.end()) {
      for (Digest dg : pi->second) c.proposed_by_me.erase(dg);
      c.proposed_items.erase(pi);
    }
    ++c.exec_next;
  }
}

void PeerActor::execute_item(Ctx& c, const PayloadItem& item, bool bit,
                             int64_t seq, int view, int round, Network& net) {
  if (const auto* tx = std::get_if<Transaction>(&item)) {
    c.queue.erase(item_digest(item));
    Digest d = tx->digest();
    if (c.ledger.contains_tx(d)) return;
    if (!c.ledger.valid_for(*tx)) {
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Reject;
      e.actor = id_;
      e.digest = d;
      e.f0 = c.shard;
      e.f1 = 2;  // no longer valid at execution
      e.f2 = seq;
      sink_.event(e);
      return;
    }
    UtxoId out = c.ledger.apply_local(*tx, round);
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::Append;
    e.actor = id_;
    e.digest = d;
    e.f0 = c.shard;
    e.f1 = 1;  // source-side append
    e.f2 = static_cast<int64_t>(c.ledger.size()) - 1;
    e.f3 = out;
    sink_.event(e);

    if (tx->internal()) {
      confirm_to_client(*tx, out, c.shard, round, net);
      return;
    }
    if (cfg_.mode == Mode::Plain) {
      // Every source member both vouches toward the target committee and
      // confirms to the client.
      auto it = plain_members_.find(tx->target_shard);
      if (it != plain_members_.end()) {
        for (PeerId q : it->second) {
          net.send(id_, q, TransferMsg{*tx}, round);
        }
      }
      confirm_to_client(*tx, 0, c.shard, round, net);
      return;
    }
    Ctx* target = ctx(tx->target_shard);
    if (target) {
      // Overlap member: vouch to every current member of the target shard.
      for (PeerId q : target->log.members()) {
        net.send(id_, q, TransferMsg{*tx}, round);
      }
    } else {
      confirm_to_client(*tx, 0, c.shard, round, net);
    }
    return;
  }

  if (const auto* v = std::get_if<VerdictItem>(&item)) {
    Digest d = v->tx.digest();
    c.verdict_closed.insert(d);
    c.receipts.erase(d);
    if (bit && !c.ledger.contains_tx(d)) {
      UtxoId out = c.ledger.apply_inbound(v->tx, round);
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Append;
      e.actor = id_;
      e.digest = d;
      e.f0 = c.shard;
      e.f1 = 2;  // quorum-backed inbound append
      e.f2 = static_cast<int64_t>(c.ledger.size()) - 1;
      e.f3 = out;
      sink_.event(e);
      confirm_to_client(v->tx, out, c.shard, round, net);
    } else if (!bit) {
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Reject;
      e.actor = id_;
      e.digest = d;
      e.f0 = c.shard;
      e.f1 = 3;  // transfer rejected by verdict
      e.f2 = seq;
      sink_.event(e);
    }
    return;
  }

  if (const auto* j = std::get_if<JoinItem>(&item)) {
    Digest d = item_digest(item);
    c.queue.erase(d);
    if (c.log.is_member(j->peer)) return;  // duplicate decision
    MembershipLog::Event ev;
    ev.kind = MembershipLog::Event::Kind::Join;
    ev.peer = j->peer;
    ev.other_shard = j->other_shard;
    c.log.append(ev);
    int epoch = c.log.current_epoch();

    TraceEvent e;
    e.round = round;
    e.kind = EventKind::JoinExec;
    e.actor = id_;
    e.f0 = c.shard;
    e.f1 = j->peer;
    e.f2 = epoch;
    sink_.event(e);

    if (hooks_) hooks_->membership_executed(c.shard, epoch, ev, id_);

    JoinReceipt receipt;
    receipt.shard = c.shard;
    receipt.view = c.engine->view();
    receipt.next_seq = seq + 1;
    receipt.ledger = std::make_shared<const Ledger>(c.ledger);
    receipt.log = std::make_shared<const MembershipLog>(c.log);
    net.send(id_, j->peer, receipt, round);

    if (cfg_.mode == Mode::Plain && c.engine->leader_of(view) == id_) {
      plain_members_[c.shard].insert(j->peer);
      std::set<PeerId> everyone;
      for (const auto& [s, mem] : plain_members_) {
        everyone.insert(mem.begin(), mem.end());
      }
      everyone.insert(j->peer);
      for (PeerId q : everyone) {
        if (q == id_) continue;
        net.send(id_, q, PlainMembership{true, j->peer, c.shard}, round);
      }
    } else if (cfg_.mode == Mode::Plain) {
      plain_members_[c.shard].insert(j->peer);
    }

    ConsensusOutput out;
    c.engine->epoch_advanced(round, out);
    run_output(c, out, round, net);
    return;
  }

  if (const auto* l = std::get_if<LeaveItem>(&item)) {
    Digest d = item_digest(item);
    c.queue.erase(d);
    if (!c.log.is_member(l->peer)) return;  // duplicate decision
    MembershipLog::Event ev;
    ev.kind = MembershipLog::Event::Kind::Leave;
    ev.peer = l->peer;
    c.log.append(ev);
    int epoch = c.log.current_epoch();

    TraceEvent e;
    e.round = round;
    e.kind = EventKind::LeaveExec;
    e.actor = id_;
    e.f0 = c.shard;
    e.f1 = l->peer;
    e.f2 = epoch;
    sink_.event(e);

    if (hooks_) hooks_->membership_executed(c.shard, epoch, ev, id_);

    if (l->peer == id_) {
      // Executing our own leave counts as one receipt.
      c.leave_receipt_senders.insert(id_);
      if (c.leave_requested && !c.leave_done &&
          static_cast<int64_t>(c.leave_receipt_senders.size()) >=
              c.leave_f + 1) {
        c.leave_done = true;
        bool all = true;
        for (const auto& [os, oc] : ctxs_) {
          if (!oc.leave_done) all = false;
        }
        if (all) {
          departed_ = true;
          active_ = false;
          leaving_ = false;
          TraceEvent done;
          done.round = round;
          done.kind = EventKind::LeaveDone;
          done.actor = id_;
          sink_.event(done);
        }
      }
    } else {
      net.send(id_, l->peer, LeaveReceipt{c.shard}, round);
    }

    if (cfg_.mode == Mode::Plain) {
      auto pm = plain_members_.find(c.shard);
      if (pm != plain_members_.end()) pm->second.erase(l->peer);
      if (c.engine->leader_of(view) == id_) {
        std::set<PeerId> everyone;
        for (const auto& [s, mem] : plain_members_) {
          everyone.insert(mem.begin(), mem.end());
        }
        for (PeerId q : everyone) {
          if (q == id_) continue;
          net.send(id_, q, PlainMembership{false, l->peer, c.shard}, round);
        }
      }
    }

    ConsensusOutput out;
    c.engine->epoch_advanced(round, out);
    run_output(c, out, round, net);
    return;
  }

  if (const auto* ms = std::get_if<MultiSpendItem>(&item)) {
    Digest d = item_digest(item);
    c.queue.erase(d);
    if (!c.multis_done.insert(ms->multi_id).second) return;
    bool ok = !ms->inputs.empty();
    for (UtxoId in : ms->inputs) {
      const Utxo* u = c.ledger.find(in);
      if (!u || u->spent || u->owner != ms->client) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::Reject;
      e.actor = id_;
      e.digest = d;
      e.f0 = c.shard;
      e.f1 = 4;  // batch spend invalidated by a rival
      e.f2 = seq;
      sink_.event(e);
      return;
    }
    // Atomic: consume every input, mint every output into the lowest local
    // wallet (deterministic across replicas), parked for distribution.
    std::vector<WalletId> wallets = c.ledger.wallets();
    WalletId park = wallets.empty() ? 0 : wallets.front();
    for (UtxoId in : ms->inputs) c.ledger.spend(in);
    std::vector<UtxoId> minted;
    std::string note = "in=";
    for (size_t i = 0; i < ms->inputs.size(); ++i) {
      if (i) note += ':';
      note += std::to_string(ms->inputs[i]);
    }
    note += ";out=";
    for (size_t i = 0; i < ms->outputs.size(); ++i) {
      UtxoId out = c.ledger.mint(ms->outputs[i].recipient, park);
      minted.push_back(out);
      if (i) note += ':';
      note += std::to_string(out);
    }
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::Append;
    e.actor = id_;
    e.digest = d;
    e.f0 = c.shard;
    e.f1 = 3;  // batch spend
    e.f2 = static_cast<int64_t>(ms->inputs.size());
    e.f3 = static_cast<int64_t>(minted.size());
    e.note = note;
    sink_.event(e);
    if (hooks_) {
      hooks_->multi_executed(ms->multi_id, minted, park, c.shard, id_);
    }
    return;
  }

  // NoOpItem: nothing to do.
}

// ---------------------------------------------------------------------------
// per-round work

void PeerActor::tick(int round, Network& net) {
  if (departed_) return;
  if (behavior_ == FaultBehavior::CrashSilent) return;

  if (joining_) {
    if (round - last_join_send_ >= cfg_.resendPeriod) {
      send_join_request(round, net);
    }
    return;
  }

  if (leaving_) {
    bool stale = false;
    for (const auto& [s, c] : ctxs_) {
      if (c.leave_requested && !c.leave_done &&
          round - c.last_leave_send >= cfg_.resendPeriod) {
        stale = true;
      }
    }
    if (stale) send_leave_requests(round, net);
  }

  for (auto& [s, c] : ctxs_) {
    update_pending_flag(c);
    ConsensusOutput out;
    c.engine->tick(round, out);
    run_output(c, out, round, net);
    if (c.engine->is_leader()) {
      leader_duties(c, round, net);
    } else {
      forward_queue(c, round, net);
    }
  }

  if (behavior_ == FaultBehavior::SpamInvalid && round <= cfg_.rounds) {
    for (auto& [s, c] : ctxs_) {
      PeerId leader = c.engine->leader();
      if (leader < 0) continue;
      Transaction junk;
      junk.client = kNoClient;
      // Reuse an already spent input when one exists, otherwise a bogus id.
      if (!c.ledger.records().empty()) {
        junk.input_utxo = c.ledger.records().front().tx.input_utxo;
      } else {
        junk.input_utxo = make_utxo_id(c.shard, (1ll << 32) + round);
      }
      junk.source_shard = c.shard;
      junk.target_shard = c.shard;
      junk.source_wallet = 0;
      junk.target_wallet = 0;
      net.send(id_, leader, TxRoute{junk}, round);
    }
  }
}

void PeerActor::forge_claim(const Transaction& tx, int round, Network& net) {
  if (departed_ || behavior_ != FaultBehavior::ForgeTransfer) return;
  Digest d = tx.digest();
  forged_.insert(d);
  Ctx* target = ctx(tx.target_shard);
  if (!target) return;
  for (PeerId q : target->log.members()) {
    net.send(id_, q, TransferMsg{tx}, round);
  }
}

}  // namespace smartshards
