#include "smartshards/sim.hpp"

#include <algorithm>
#include <stdexcept>

namespace smartshards {

namespace {

Digest member_set_digest(const std::vector<PeerId>& members) {
  Digest h = fnv1a("members");
  for (PeerId p : members) h = hash_combine(h, static_cast<uint64_t>(p));
  return h;
}

std::string member_note(const std::vector<PeerId>& members) {
  std::string note = "m=";
  for (size_t i = 0; i < members.size(); ++i) {
    if (i) note += ':';
    note += std::to_string(members[i]);
  }
  return note;
}

}  // namespace

SmsOracle::SmsOracle(const SimConfig& cfg, TraceSink& sink)
    : cfg_(cfg), sink_(sink), place_rng_(cfg.seed, "join.place") {}

void SmsOracle::genesis_shard(ShardId shard, const std::set<PeerId>& members) {
  members_[shard] = members;
  applied_epoch_[shard] = 0;
}

void SmsOracle::genesis_wallet(WalletId wallet, ShardId home) {
  wallet_home_[wallet] = home;
  wallet_list_.push_back(wallet);
}

const std::set<PeerId>& SmsOracle::members_of(ShardId shard) const {
  static const std::set<PeerId> kEmpty;
  auto it = members_.find(shard);
  return it == members_.end() ? kEmpty : it->second;
}

ShardId SmsOracle::wallet_home(WalletId w) const {
  auto it = wallet_home_.find(w);
  return it == wallet_home_.end() ? -1 : it->second;
}

int64_t SmsOracle::live_peer_count() const {
  std::set<PeerId> distinct;
  for (const auto& [shard, mem] : members_) {
    distinct.insert(mem.begin(), mem.end());
  }
  return static_cast<int64_t>(distinct.size());
}

double SmsOracle::mean_overlap() const {
  int s = shard_count();
  if (s < 2) return 0.0;
  int64_t seats = 0;
  for (const auto& [shard, mem] : members_) {
    seats += static_cast<int64_t>(mem.size());
  }
  return static_cast<double>(seats) / (static_cast<double>(s) * (s - 1));
}

int64_t SmsOracle::f_of(ShardId shard) const {
  int64_t n = static_cast<int64_t>(members_of(shard).size());
  return n == 0 ? 0 : (n - 1) / 3;
}

const std::vector<ShardId>* SmsOracle::assignment_of(PeerId p) const {
  auto it = assignment_.find(p);
  return it == assignment_.end() ? nullptr : &it->second;
}

std::vector<ShardId> SmsOracle::place_join(PeerId p) {
  std::vector<ShardId> ids;
  ids.reserve(members_.size());
  for (const auto& [shard, mem] : members_) ids.push_back(shard);

  if (cfg_.mode == Mode::Plain) {
    ShardId best = ids.front();
    if (cfg_.joinRandom || cfg_.cuckoo) {
      best = ids[place_rng_.below(ids.size())];
    } else {
      size_t best_size = members_of(best).size();
      for (ShardId s : ids) {
        size_t sz = members_of(s).size();
        if (sz < best_size) {
          best = s;
          best_size = sz;
        }
      }
    }
    return {best};
  }

  std::vector<std::pair<ShardId, ShardId>> pairs;
  for (size_t i = 0; i < ids.size(); ++i) {
    for (size_t j = i + 1; j < ids.size(); ++j) {
      pairs.emplace_back(ids[i], ids[j]);
    }
  }
  if (cfg_.joinRandom || cfg_.cuckoo) {
    auto [a, b] = pairs[place_rng_.below(pairs.size())];
    return {a, b};
  }
  // Balanced placement: the pair with the smallest current overlap.
  std::pair<ShardId, ShardId> best = pairs.front();
  int64_t best_overlap = -1;
  for (const auto& [a, b] : pairs) {
    const auto& ma = members_of(a);
    const auto& mb = members_of(b);
    int64_t overlap = 0;
    for (PeerId q : ma) {
      if (mb.count(q)) ++overlap;
    }
    if (best_overlap < 0 || overlap < best_overlap) {
      best = {a, b};
      best_overlap = overlap;
    }
  }
  (void)p;
  return {best.first, best.second};
}

void SmsOracle::handle(int32_t from, const Message& m, int round,
                       Network& net) {
  if (const auto* sub = std::get_if<TxSubmit>(&m)) {
    const Transaction& tx = sub->tx;
    Digest d = tx.digest();
    ShardId src = wallet_home(tx.source_wallet);
    ShardId tgt = wallet_home(tx.target_wallet);
    if (src < 0 || tgt < 0 || src != tx.source_shard ||
        tgt != tx.target_shard) {
      net.send(kActorSms, from, SmsReject{"stale wallet routing", d}, round);
      return;
    }
    const auto& mem = members_of(src);
    std::vector<PeerId> sorted(mem.begin(), mem.end());
    int64_t f = f_of(src);

    MembershipReply reply;
    reply.shard = src;
    reply.members = sorted;
    reply.f = f;
    reply.tx_digest = d;
    net.send(kActorSms, from, reply, round);

    TraceEvent e;
    e.round = round;
    e.kind = EventKind::SmsReply;
    e.actor = kActorSms;
    e.digest = member_set_digest(sorted);
    e.f0 = src;
    e.f1 = static_cast<int64_t>(sorted.size());
    e.f2 = from;
    e.f3 = f;
    e.note = member_note(sorted);
    sink_.event(e);

    for (PeerId p : sorted) {
      net.send(kActorSms, p, TxRoute{tx}, round);
    }
    return;
  }

  if (const auto* jr = std::get_if<JoinRequest>(&m)) {
    PeerId p = jr->peer;
    auto it = assignment_.find(p);
    if (it == assignment_.end()) {
      std::vector<ShardId> placed = place_join(p);
      it = assignment_.emplace(p, placed).first;
      TraceEvent e;
      e.round = round;
      e.kind = EventKind::JoinAssign;
      e.actor = kActorSms;
      e.f0 = p;
      e.f1 = placed[0];
      e.f2 = placed.size() > 1 ? placed[1] : -1;
      sink_.event(e);
    }
    for (ShardId s : it->second) {
      const auto& mem = members_of(s);
      std::vector<PeerId> sorted(mem.begin(), mem.end());
      MembershipReply reply;
      reply.shard = s;
      reply.members = sorted;
      reply.f = f_of(s);
      reply.tx_digest = 0;
      net.send(kActorSms, from, reply, round);

      TraceEvent e;
      e.round = round;
      e.kind = EventKind::SmsReply;
      e.actor = kActorSms;
      e.digest = member_set_digest(sorted);
      e.f0 = s;
      e.f1 = static_cast<int64_t>(sorted.size());
      e.f2 = from;
      e.f3 = reply.f;
      e.note = member_note(sorted);
      sink_.event(e);
    }
    return;
  }

  if (const auto* fwd = std::get_if<ProposalForward>(&m)) {
    // Batch-spend submission from a client: fan out to the shard members.
    for (PeerId p : members_of(fwd->shard)) {
      net.send(kActorSms, p, *fwd, round);
    }
    return;
  }
}

bool SmsOracle::membership_executed(ShardId shard, int epoch,
                                    const MembershipLog::Event& ev,
                                    int round) {
  auto it = applied_epoch_.find(shard);
  if (it == applied_epoch_.end()) return false;  // shard destroyed meanwhile
  if (epoch != it->second + 1) return false;     // duplicate or stale replica
  it->second = epoch;

  using Kind = MembershipLog::Event::Kind;
  if (ev.kind == Kind::Update) return true;

  auto& mem = members_[shard];
  if (ev.kind == Kind::Join) {
    mem.insert(ev.peer);
  } else {
    mem.erase(ev.peer);
  }
  TraceEvent e;
  e.round = round;
  e.kind = EventKind::SmsMembers;
  e.actor = kActorSms;
  e.digest = member_set_digest({mem.begin(), mem.end()});
  e.f0 = shard;
  e.f1 = static_cast<int64_t>(mem.size());
  e.f2 = ev.peer;
  e.f3 = ev.kind == Kind::Join ? 1 : -1;
  sink_.event(e);
  return true;
}

void SmsOracle::surgery_add_shard(ShardId shard,
                                  const std::set<PeerId>& members) {
  members_[shard] = members;
  applied_epoch_[shard] = 0;
}

void SmsOracle::surgery_remove_shard(ShardId shard) {
  members_.erase(shard);
  applied_epoch_.erase(shard);
}

void SmsOracle::surgery_move_peer(PeerId p, ShardId from, ShardId to) {
  auto f = members_.find(from);
  if (f != members_.end()) f->second.erase(p);
  if (to >= 0) members_[to].insert(p);
}

void SmsOracle::surgery_move_wallet(WalletId w, ShardId to) {
  wallet_home_[w] = to;
}

void SmsOracle::surgery_add_wallet(WalletId w, ShardId home) {
  genesis_wallet(w, home);
}

void SmsOracle::surgery_set_epoch(ShardId shard, int epoch) {
  applied_epoch_[shard] = epoch;
}

void SmsOracle::surgery_update_assignment(PeerId p,
                                          const std::vector<ShardId>& shards) {
  assignment_[p] = shards;
}

void SmsOracle::forget_assignment(PeerId p) { assignment_.erase(p); }

}  // namespace smartshards
