#include "smartshards/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>
#include <utility>

namespace smartshards {

namespace {

Digest id_set_digest(const std::set<PeerId>& ids) {
  Digest h = kFnvOffset;
  for (PeerId p : ids) h = hash_combine(h, static_cast<uint64_t>(p));
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// CountFilter

void Simulation::CountFilter::header(const std::string& key,
                                     const std::string& value) {
  sim->sink_.header(key, value);
}

void Simulation::CountFilter::event(const TraceEvent& e) {
  if (e.kind == EventKind::Violation) ++sim->violations_;
  if (e.kind == EventKind::Append && e.f1 == 2 &&
      sim->forged_digests_.count(e.digest))
    ++sim->forged_confirmations_;
  sim->sink_.event(e);
}

// ---------------------------------------------------------------------------
// Construction

Simulation::Simulation(const SimConfig& cfg, TraceSink& sink, bool trace_wire)
    : cfg_(cfg),
      sink_(sink),
      net_(cfg.seed, cfg.maxDelay, filter_, trace_wire),
      sms_(cfg_, filter_),
      churn_rng_(cfg.seed, "churn"),
      lifecycle_rng_(cfg.seed, "lifecycle"),
      load_rng_(cfg.seed, "load"),
      multi_rng_(cfg.seed, "multi"),
      trace_wire_(trace_wire) {
  filter_.sim = this;
  cfg_.validate();
  net_.set_alive_probe([this](int32_t a) { return peer_alive(a); });
  setup();
}

Simulation::~Simulation() = default;

void Simulation::setup() {
  if (cfg_.loadMode == LoadMode::ClientDriven) {
    for (ClientId c = 0; c < cfg_.clientCount; ++c)
      clients_.emplace(c,
                       std::make_unique<ClientActor>(c, cfg_, cfg_.seed, filter_));
  }
  if (cfg_.mode == Mode::Smart)
    setup_smart();
  else
    setup_plain();
  apply_fault_plan();
  emit_headers();
}

void Simulation::setup_smart() {
  InitialTopology topo = build_topology(cfg_.s, cfg_.x);
  next_peer_id_ = static_cast<PeerId>(topo.peer_count);
  next_shard_id_ = cfg_.s;
  std::map<ShardId, std::vector<std::pair<PeerId, ShardId>>> mems;
  for (PeerId p = 0; p < static_cast<PeerId>(topo.peer_count); ++p) {
    auto [a, b] = topo.peer_shards[p];
    mems[a].push_back({p, b});
    mems[b].push_back({p, a});
  }
  for (PeerId p = 0; p < static_cast<PeerId>(topo.peer_count); ++p) {
    auto up = std::make_unique<PeerActor>(p, cfg_, cfg_.seed, filter_, this);
    up->set_sms_view(&sms_);
    peers_.emplace(p, std::move(up));
  }
  for (auto& [shard, m] : mems) {
    std::set<PeerId> ids;
    for (auto& [p, o] : m) ids.insert(p);
    sms_.genesis_shard(shard, ids);
    for (auto& [p, o] : m) peers_[p]->genesis_context(shard, o, m);
    std::vector<PeerId> ordered(ids.begin(), ids.end());
    seed_wallets(shard, ordered);
  }
}

void Simulation::setup_plain() {
  int64_t n = network_size(cfg_.s, cfg_.x);
  int64_t per = n / cfg_.s;
  next_peer_id_ = static_cast<PeerId>(n);
  next_shard_id_ = cfg_.s;
  std::map<ShardId, std::set<PeerId>> all;
  for (ShardId k = 0; k < cfg_.s; ++k)
    for (int64_t i = 0; i < per; ++i)
      all[k].insert(static_cast<PeerId>(k * per + i));
  for (PeerId p = 0; p < static_cast<PeerId>(n); ++p) {
    auto up = std::make_unique<PeerActor>(p, cfg_, cfg_.seed, filter_, this);
    up->set_sms_view(&sms_);
    peers_.emplace(p, std::move(up));
  }
  for (auto& [shard, ids] : all) {
    sms_.genesis_shard(shard, ids);
    std::vector<std::pair<PeerId, ShardId>> m;
    for (PeerId p : ids) m.push_back({p, -1});
    for (PeerId p : ids) peers_[p]->genesis_context(shard, -1, m);
    std::vector<PeerId> ordered(ids.begin(), ids.end());
    seed_wallets(shard, ordered);
  }
  for (auto& [id, p] : peers_) p->set_plain_members(all);
}

void Simulation::seed_wallets(ShardId shard, const std::vector<PeerId>& members) {
  for (int wi = 0; wi < cfg_.walletsPerShard; ++wi) {
    WalletId w = next_wallet_id_++;
    sms_.genesis_wallet(w, shard);
    for (int k = 0; k < cfg_.genesisPerWallet; ++k) {
      Utxo u;
      u.id = make_utxo_id(shard, wi * cfg_.genesisPerWallet + k);
      u.wallet = w;
      u.owner = kNoClient;
      if (!clients_.empty())
        u.owner =
            static_cast<ClientId>(genesis_outputs_ %
                                  static_cast<int64_t>(clients_.size()));
      for (PeerId p : members) peers_[p]->mutable_ledger(shard)->add_genesis(u);
      if (u.owner != kNoClient) clients_[u.owner]->grant(u.id, shard, w);
      ++genesis_outputs_;
    }
  }
}

void Simulation::apply_fault_plan() {
  for (const FaultSpec& fs : cfg_.faultPlan) {
    auto it = peers_.find(fs.peer);
    if (it != peers_.end()) it->second->set_behavior(fs.behavior);
  }
  if (cfg_.forgeOverlapCount > 0 && cfg_.mode == Mode::Smart &&
      sms_.members().count(0) && sms_.members().count(1)) {
    std::vector<PeerId> overlap;
    const auto& s1 = sms_.members_of(1);
    for (PeerId p : sms_.members_of(0))
      if (s1.count(p)) overlap.push_back(p);
    int k = std::min<int>(cfg_.forgeOverlapCount,
                          static_cast<int>(overlap.size()));
    for (int i = 0; i < k; ++i)
      peers_[overlap[overlap.size() - 1 - i]]->set_behavior(
          FaultBehavior::ForgeTransfer);
  }
  if (cfg_.crashLeaderShard >= 0 && sms_.members().count(cfg_.crashLeaderShard)) {
    const auto& mem = sms_.members_of(cfg_.crashLeaderShard);
    if (!mem.empty())
      peers_[*mem.begin()]->set_behavior(FaultBehavior::CrashSilent);
  }
}

void Simulation::emit_headers() {
  filter_.header("format", "smartshards-trace-1");
  for (const auto& [k, v] : cfg_.to_pairs()) filter_.header(k, v);
  filter_.header("n", std::to_string(network_size(cfg_.s, cfg_.x)));
  int64_t committee = cfg_.mode == Mode::Smart
                          ? shard_size(cfg_.s, cfg_.x)
                          : network_size(cfg_.s, cfg_.x) / cfg_.s;
  filter_.header("z", std::to_string(committee));
  filter_.header("f_estimate",
                 std::to_string(fault_estimate(cfg_.s, cfg_.x)));
  filter_.header("overlap_bound",
                 std::to_string(overlap_fault_bound(cfg_.x)));
  filter_.header("genesis_outputs", std::to_string(genesis_outputs_));
  filter_.header("trace_wire", trace_wire_ ? "1" : "0");
}

// ---------------------------------------------------------------------------
// Round loop

int Simulation::horizon() const { return cfg_.rounds + cfg_.effective_drain(); }

Simulation::Result Simulation::run() {
  Result r;
  try {
    while (step()) {
    }
    r.completed = true;
  } catch (const std::exception& e) {
    r.completed = false;
    r.abort_reason = e.what();
  }
  r.rounds_run = round_;
  r.total_sends = net_.total_sends();
  r.violations = violations_;
  r.creates = creates_;
  r.destroys = destroys_;
  r.forged_confirmations = forged_confirmations_;
  return r;
}

bool Simulation::step() {
  if (round_ >= horizon()) return false;
  ++round_;
  for (const auto& d : net_.take(round_)) dispatch(d);
  churn_tick();
  lifecycle_tick();
  fault_tick();
  double_spend_tick();
  multi_tick();
  for (auto& [id, p] : peers_) p->tick(round_, net_);
  bool allow_new = cfg_.loadMode == LoadMode::ClientDriven &&
                   round_ <= cfg_.rounds &&
                   (cfg_.loadStopRound == 0 || round_ <= cfg_.loadStopRound);
  bool allow_resend = round_ <= cfg_.rounds;
  for (auto& [id, c] : clients_)
    c->tick(round_, allow_new, allow_resend, net_, sms_);
  for (auto& [id, p] : peers_)
    if (p->active() && sms_.assignment_of(id)) sms_.forget_assignment(id);
  for (auto it = evict_rejoin_.begin(); it != evict_rejoin_.end();) {
    auto pit = peers_.find(*it);
    if (pit != peers_.end() && pit->second->departed()) {
      pit->second->restart_as_joiner(round_, net_);
      it = evict_rejoin_.erase(it);
    } else {
      ++it;
    }
  }
  roundstat();
  return true;
}

void Simulation::dispatch(const Network::Delivery& d) {
  if (d.to == kActorSms) {
    sms_.handle(d.from, d.msg, round_, net_);
    return;
  }
  if (is_client_actor(d.to)) {
    auto it = clients_.find(client_of_actor(d.to));
    if (it != clients_.end()) it->second->handle(d.from, d.msg, round_, net_);
    return;
  }
  auto it = peers_.find(d.to);
  if (it != peers_.end()) it->second->handle(d.from, d.msg, round_, net_);
}

void Simulation::roundstat() {
  int64_t confirms = 0;
  for (auto& [id, c] : clients_) confirms += c->confirmed_count();
  TraceEvent e;
  e.round = round_;
  e.kind = EventKind::RoundStat;
  e.actor = kActorSms;
  e.f0 = sms_.live_peer_count();
  e.f1 = sms_.shard_count();
  e.f2 = confirms;
  e.f3 = net_.total_sends();
  filter_.event(e);
}

bool Simulation::peer_alive(int32_t actor) const {
  if (actor == kActorSms) return true;
  if (is_client_actor(actor))
    return clients_.count(client_of_actor(actor)) != 0;
  auto it = peers_.find(actor);
  return it != peers_.end() && !it->second->departed();
}

PeerId Simulation::fresh_peer_id() { return next_peer_id_++; }

ClientActor* Simulation::owner_client(ClientId c) {
  auto it = clients_.find(c);
  return it == clients_.end() ? nullptr : it->second.get();
}

// ---------------------------------------------------------------------------
// Churn

void Simulation::churn_tick() {
  if (cfg_.churnRate <= 0 || round_ > cfg_.rounds) return;
  if (cfg_.churnStopRound > 0 && round_ > cfg_.churnStopRound) return;
  bool joins = true;
  bool leaves = true;
  if (cfg_.fig3Churn) {
    joins = round_ <= cfg_.rounds / 2;
    leaves = !joins;
  }
  if (joins)
    for (int i = 0; i < cfg_.churnRate; ++i) spawn_joiner();
  if (leaves)
    for (int i = 0; i < cfg_.churnRate; ++i) initiate_leave();
}

void Simulation::spawn_joiner() {
  PeerId p = fresh_peer_id();
  auto up = std::make_unique<PeerActor>(p, cfg_, cfg_.seed, filter_, this);
  up->set_sms_view(&sms_);
  PeerActor* raw = up.get();
  peers_.emplace(p, std::move(up));
  raw->start_join(round_, net_);
}

void Simulation::initiate_leave() {
  std::vector<PeerId> cand;
  for (auto& [id, p] : peers_) {
    if (!p->active() || p->joining() || p->leaving() || p->departed()) continue;
    if (p->behavior() != FaultBehavior::Correct) continue;
    bool ok = true;
    for (ShardId s : p->shards()) {
      if (p->current_leader(s) == id) ok = false;
      if (sms_.members().count(s) && sms_.members_of(s).size() <= 2) ok = false;
    }
    if (ok) cand.push_back(id);
  }
  if (cand.empty()) return;
  PeerId victim = cand[churn_rng_.below(cand.size())];
  peers_[victim]->start_leave(round_, net_);
}

// ---------------------------------------------------------------------------
// Lifecycle reshaping

void Simulation::lifecycle_tick() {
  if (cfg_.mode != Mode::Smart || cfg_.churnRate <= 0) return;
  if (round_ > cfg_.rounds) return;
  double xbar = sms_.mean_overlap();
  if (xbar >= cfg_.creationThreshold && sms_.shard_count() >= 2)
    lifecycle_create();
  else if (xbar < cfg_.deletionThreshold && sms_.shard_count() >= 3)
    lifecycle_destroy();
}

PeerId Simulation::reference_member(ShardId shard) const {
  PeerId best = -1;
  int64_t best_exec = -1;
  for (PeerId m : sms_.members_of(shard)) {
    auto it = peers_.find(m);
    if (it == peers_.end()) continue;
    const PeerActor* p = it->second.get();
    if (p->departed() || p->behavior() != FaultBehavior::Correct) continue;
    if (!p->in_shard(shard)) continue;
    int64_t e = p->exec_next(shard);
    if (e > best_exec) {
      best_exec = e;
      best = m;
    }
  }
  return best;
}

std::map<ShardId, Simulation::Canonical> Simulation::capture_canonicals() {
  std::map<ShardId, Canonical> out;
  for (const auto& [shard, mem] : sms_.members()) {
    PeerId ref = reference_member(shard);
    if (ref < 0) return {};
    const PeerActor* p = peers_.at(ref).get();
    Canonical c;
    c.ledger = *p->ledger(shard);
    c.log = *p->memlog(shard);
    c.next_seq = p->exec_next(shard);
    out.emplace(shard, std::move(c));
  }
  return out;
}

void Simulation::force_sync(ShardId shard, const Canonical& canon) {
  const std::vector<PeerId>& mem = canon.log.members();
  for (PeerId m : mem) {
    auto it = peers_.find(m);
    if (it == peers_.end()) continue;
    PeerActor* p = it->second.get();
    if (p->departed()) continue;
    // A joiner that has not adopted this shard yet keeps its handshake; the
    // receipt snapshots it may have buffered are invalidated below.
    if (p->joining() && !p->in_shard(shard)) continue;
    p->adopt_context(shard, canon.ledger, canon.log, canon.next_seq, 0, round_);
  }
  // Anyone still holding a context for this shard without being in the
  // canonical membership had its leave executed in the adopted history; the
  // synced replicas will never re-send receipts for it.
  for (auto& [id, p] : peers_) {
    if (p->departed() || p->joining()) continue;
    if (!p->in_shard(shard)) continue;
    if (std::binary_search(mem.begin(), mem.end(), id)) continue;
    p->surgery_expel(shard, round_);
  }
  for (auto& [id, p] : peers_)
    if (p->joining()) p->surgery_clear_join_buckets(shard);
}

void Simulation::lifecycle_create() {
  auto canon = capture_canonicals();
  if (canon.empty()) return;
  int64_t n_live = sms_.live_peer_count();
  int64_t target = (2 * n_live) / (sms_.shard_count() + 1);
  if (target < 2) return;

  std::vector<ShardId> order;
  for (const auto& [s, c] : canon) order.push_back(s);
  std::sort(order.begin(), order.end(), [&](ShardId a, ShardId b) {
    size_t sa = sms_.members_of(a).size();
    size_t sb = sms_.members_of(b).size();
    if (sa != sb) return sa > sb;
    return a < b;
  });

  // Round-robin one donor at a time from the largest shards; the donor keeps
  // its other seat and swaps this one into the new shard.
  std::vector<std::tuple<PeerId, ShardId, ShardId>> donors;  // (peer, from, other)
  std::set<PeerId> picked;
  std::map<ShardId, int64_t> donated;
  bool progress = true;
  while (static_cast<int64_t>(donors.size()) < target && progress) {
    progress = false;
    for (ShardId d : order) {
      if (static_cast<int64_t>(donors.size()) >= target) break;
      if (static_cast<int64_t>(sms_.members_of(d).size()) - donated[d] <= 2)
        continue;
      for (PeerId p : sms_.members_of(d)) {
        if (picked.count(p)) continue;
        auto pit = peers_.find(p);
        if (pit == peers_.end()) continue;
        PeerActor* pa = pit->second.get();
        if (!pa->active() || pa->joining() || pa->leaving() || pa->departed())
          continue;
        if (pa->behavior() != FaultBehavior::Correct) continue;
        if (!pa->in_shard(d)) continue;
        auto seats = pa->shards();
        if (seats.size() != 2) continue;
        ShardId other = seats[0] == d ? seats[1] : seats[0];
        if (!canon.count(other)) continue;
        donors.emplace_back(p, d, other);
        picked.insert(p);
        ++donated[d];
        progress = true;
        break;
      }
    }
  }
  if (static_cast<int64_t>(donors.size()) < 2) return;

  ShardId ns = next_shard_id_++;
  for (auto& [p, d, o] : donors) {
    MembershipLog::Event lv;
    lv.kind = MembershipLog::Event::Kind::Leave;
    lv.peer = p;
    canon[d].log.append(lv);
    MembershipLog::Event up;
    up.kind = MembershipLog::Event::Kind::Update;
    up.peer = p;
    up.other_shard = ns;
    canon[o].log.append(up);
  }

  Canonical fresh;
  fresh.ledger = Ledger(ns);
  std::vector<std::pair<PeerId, ShardId>> gen;
  for (auto& [p, d, o] : donors) gen.push_back({p, o});
  std::sort(gen.begin(), gen.end());
  fresh.log.set_genesis(gen);
  fresh.next_seq = 0;

  // Snapshots already on the wire no longer match any replica.
  net_.purge(round_, [](int32_t, int32_t, const Message& m) {
    return std::holds_alternative<JoinReceipt>(m);
  });

  std::set<PeerId> donor_set;
  for (auto& [p, d, o] : donors) {
    sms_.surgery_move_peer(p, d, -1);
    donor_set.insert(p);
  }
  sms_.surgery_add_shard(ns, donor_set);
  for (int wi = 0; wi < cfg_.walletsPerShard; ++wi)
    sms_.surgery_add_wallet(next_wallet_id_++, ns);

  for (auto& [p, d, o] : donors) {
    peers_[p]->drop_context(d);
    TraceEvent e;
    e.round = round_;
    e.kind = EventKind::Reseat;
    e.actor = p;
    e.f0 = d;
    e.f1 = ns;
    filter_.event(e);
  }
  for (const auto& [s, c] : canon) {
    sms_.surgery_set_epoch(s, c.log.current_epoch());
    force_sync(s, c);
  }
  for (auto& [p, d, o] : donors)
    peers_[p]->adopt_context(ns, fresh.ledger, fresh.log, 0, 0, round_);
  sms_.surgery_set_epoch(ns, 0);

  ++creates_;
  TraceEvent e;
  e.round = round_;
  e.kind = EventKind::Create;
  e.actor = kActorSms;
  e.digest = id_set_digest(donor_set);
  e.f0 = ns;
  e.f1 = std::llround(sms_.mean_overlap() * 1000.0);
  e.f2 = static_cast<int64_t>(donors.size());
  filter_.event(e);
}

void Simulation::lifecycle_destroy() {
  if (sms_.shard_count() < 3) return;
  auto canon = capture_canonicals();
  if (canon.empty()) return;
  std::vector<ShardId> ids;
  for (const auto& [s, c] : canon) ids.push_back(s);
  ShardId victim = ids[lifecycle_rng_.below(ids.size())];
  std::vector<ShardId> survivors;
  for (ShardId s : ids)
    if (s != victim) survivors.push_back(s);

  Canonical vc = std::move(canon[victim]);
  canon.erase(victim);
  int64_t unspent_before = vc.ledger.unspent_count();
  Digest snapshot = hash_combine(vc.ledger.digest(), vc.log.digest());

  // Victim wallets move onto the survivors round-robin, carrying their
  // unspent outputs (original ids kept).
  std::vector<WalletId> vw;
  for (const auto& [w, home] : sms_.wallet_map())
    if (home == victim) vw.push_back(w);
  int64_t moved = 0;
  for (size_t i = 0; i < vw.size(); ++i) {
    WalletId w = vw[i];
    ShardId t = survivors[i % survivors.size()];
    for (const Utxo& u : vc.ledger.extract_wallet(w)) {
      canon[t].ledger.adopt(u);
      ++moved;
    }
    sms_.surgery_move_wallet(w, t);
  }

  // Classify everyone touching the victim. Members (including joiners whose
  // join already executed there) get a replacement seat; joiners assigned to
  // the victim but absent from both directories restart placement.
  struct ReseatPlan {
    PeerId p = -1;
    ShardId other = -1;
    ShardId to = -1;
    bool midjoin = false;
  };
  std::vector<ReseatPlan> reseats;
  std::vector<PeerId> resets;
  std::set<PeerId> vmembers = sms_.members_of(victim);
  for (PeerId p : vmembers) {
    auto it = peers_.find(p);
    if (it == peers_.end()) continue;
    PeerActor* pa = it->second.get();
    if (pa->departed()) continue;
    ShardId other = -1;
    for (ShardId s : pa->shards())
      if (s != victim) other = s;
    if (other < 0) {
      const auto* asg = sms_.assignment_of(p);
      if (asg)
        for (ShardId s : *asg)
          if (s != victim) other = s;
    }
    std::vector<ShardId> pool;
    for (ShardId s : survivors)
      if (s != other) pool.push_back(s);
    ShardId to = pool.empty() ? survivors[0]
                              : pool[lifecycle_rng_.below(pool.size())];
    reseats.push_back({p, other, to, pa->joining()});
  }
  for (auto& [id, pa] : peers_) {
    if (!pa->joining() || pa->departed() || vmembers.count(id)) continue;
    const auto* asg = sms_.assignment_of(id);
    if (!asg || std::find(asg->begin(), asg->end(), victim) == asg->end())
      continue;
    ShardId other = -1;
    for (ShardId s : *asg)
      if (s != victim) other = s;
    bool member_other =
        other >= 0 && canon.count(other) && canon[other].log.is_member(id);
    if (member_other) {
      std::vector<ShardId> pool;
      for (ShardId s : survivors)
        if (s != other) pool.push_back(s);
      ShardId to = pool.empty() ? survivors[0]
                                : pool[lifecycle_rng_.below(pool.size())];
      reseats.push_back({id, other, to, true});
    } else {
      resets.push_back(id);
    }
  }

  for (const auto& r : reseats) {
    MembershipLog::Event jn;
    jn.kind = MembershipLog::Event::Kind::Join;
    jn.peer = r.p;
    jn.other_shard = r.other;
    canon[r.to].log.append(jn);
    if (r.other >= 0 && canon.count(r.other) &&
        canon[r.other].log.is_member(r.p)) {
      MembershipLog::Event up;
      up.kind = MembershipLog::Event::Kind::Update;
      up.peer = r.p;
      up.other_shard = r.to;
      canon[r.other].log.append(up);
    }
  }

  net_.purge(round_, [](int32_t, int32_t, const Message& m) {
    return std::holds_alternative<JoinReceipt>(m);
  });

  for (const auto& r : reseats) sms_.surgery_move_peer(r.p, victim, r.to);
  for (PeerId p : resets) {
    sms_.forget_assignment(p);
    peers_[p]->surgery_reset_join();
  }
  sms_.surgery_remove_shard(victim);
  for (const auto& r : reseats)
    if (r.midjoin && r.other >= 0)
      sms_.surgery_update_assignment(r.p, {r.other, r.to});

  for (const auto& r : reseats) {
    PeerActor* pa = peers_[r.p].get();
    if (pa->in_shard(victim)) pa->drop_context(victim);
  }
  for (auto& [id, pa] : peers_) pa->surgery_forget_shard_refs(victim);

  for (const auto& [s, c] : canon) {
    sms_.surgery_set_epoch(s, c.log.current_epoch());
    force_sync(s, c);
  }
  // Mid-join reseats are skipped by force_sync (no context yet): seat them
  // explicitly and swap the dead assignment slot.
  for (const auto& r : reseats) {
    PeerActor* pa = peers_[r.p].get();
    if (r.midjoin) {
      const Canonical& c = canon[r.to];
      pa->adopt_context(r.to, c.ledger, c.log, c.next_seq, 0, round_);
      pa->surgery_replace_join_slot(victim, r.to, round_, net_);
    }
    TraceEvent e;
    e.round = round_;
    e.kind = EventKind::Reseat;
    e.actor = r.p;
    e.f0 = victim;
    e.f1 = r.to;
    filter_.event(e);
  }

  ++destroys_;
  TraceEvent e;
  e.round = round_;
  e.kind = EventKind::Destroy;
  e.actor = kActorSms;
  e.digest = snapshot;
  e.f0 = victim;
  e.f1 = static_cast<int64_t>(survivors.size());
  e.f2 = unspent_before;
  e.f3 = moved;
  filter_.event(e);
}

// ---------------------------------------------------------------------------
// Fault and conflict drivers

void Simulation::fault_tick() {
  if (cfg_.mode != Mode::Smart || cfg_.forgeEvery <= 0) return;
  if (round_ > cfg_.rounds || round_ % cfg_.forgeEvery != 0) return;
  if (!sms_.members().count(0) || !sms_.members().count(1)) return;
  std::vector<PeerActor*> forgers;
  for (auto& [id, p] : peers_)
    if (p->behavior() == FaultBehavior::ForgeTransfer && !p->departed())
      forgers.push_back(p.get());
  if (forgers.empty()) return;
  ++forge_wave_;
  Transaction tx;
  tx.client = kNoClient;
  tx.input_utxo = make_utxo_id(0, (1ll << 36) + forge_wave_);
  tx.source_shard = 0;
  tx.target_shard = 1;
  tx.source_wallet = 0;
  tx.target_wallet = cfg_.walletsPerShard;  // first wallet seeded in shard 1
  forged_digests_.insert(tx.digest());
  for (PeerActor* f : forgers) f->forge_claim(tx, round_, net_);
}

void Simulation::double_spend_tick() {
  if (cfg_.doubleSpendEvery <= 0 || clients_.empty()) return;
  if (round_ > cfg_.rounds || round_ % cfg_.doubleSpendEvery != 0) return;
  const auto& wl = sms_.wallet_list();
  if (wl.size() < 2) return;
  std::vector<ClientId> ids;
  for (auto& [c, cl] : clients_) ids.push_back(c);
  for (size_t k = 0; k < ids.size(); ++k) {
    ClientId c = ids[(ds_counter_ + k) % ids.size()];
    ClientActor* cl = clients_[c].get();
    auto avail = cl->spendable();
    if (avail.empty()) continue;
    UtxoId input = avail[load_rng_.below(avail.size())];
    auto loc = cl->owned().at(input);
    ShardId src = sms_.wallet_home(loc.second);
    if (src < 0) src = loc.first;
    WalletId w1 = wl[load_rng_.below(wl.size())];
    size_t i2 = load_rng_.below(wl.size());
    if (wl[i2] == w1) i2 = (i2 + 1) % wl.size();
    WalletId w2 = wl[i2];
    Transaction t1;
    t1.client = c;
    t1.input_utxo = input;
    t1.source_shard = src;
    t1.target_shard = sms_.wallet_home(w1);
    t1.source_wallet = loc.second;
    t1.target_wallet = w1;
    Transaction t2 = t1;
    t2.target_shard = sms_.wallet_home(w2);
    t2.target_wallet = w2;
    cl->submit_specific(t1, 1, round_, net_);
    cl->submit_specific(t2, 2, round_, net_);
    ++ds_counter_;
    return;
  }
}

// ---------------------------------------------------------------------------
// Multi-transaction driver

void Simulation::multi_tick() {
  if (cfg_.multiDemo <= 0 || clients_.empty()) return;
  MultiJob* active = nullptr;
  for (auto& j : multi_jobs_)
    if (j.phase != MultiJob::Phase::Done && j.phase != MultiJob::Phase::Aborted)
      active = &j;
  if (!active) {
    if (multi_started_ >= cfg_.multiDemo || round_ > cfg_.rounds) return;
    if (round_ < 5) return;
    MultiJob job;
    job.id = static_cast<uint64_t>(multi_started_ + 1);
    start_multi_job(job);
    if (job.phase != MultiJob::Phase::Consolidating) return;
    ++multi_started_;
    multi_jobs_.push_back(std::move(job));
    return;
  }

  MultiJob& j = *active;
  ClientActor* cl = owner_client(j.client);
  if (!cl) return;
  auto emit = [&](int64_t aux) {
    TraceEvent e;
    e.round = round_;
    e.kind = EventKind::Multi;
    e.actor = client_actor(j.client);
    e.digest = j.id;
    e.f0 = static_cast<int64_t>(j.phase);
    e.f1 = aux;
    filter_.event(e);
  };

  switch (j.phase) {
    case MultiJob::Phase::Consolidating: {
      if (j.rival_digest) {
        const auto* rp = cl->find_pending(j.rival_digest);
        if (rp && rp->confirmed) {
          for (auto& [in, dig] : j.cons_txs)
            if (dig == 0) cl->release(in);
          j.phase = MultiJob::Phase::Aborted;
          emit(static_cast<int64_t>(round_ - j.started_round));
          return;
        }
      }
      j.spend_inputs.clear();
      for (UtxoId in : j.picked_inputs) {
        auto it = j.cons_txs.find(in);
        if (it == j.cons_txs.end() || it->second == 0) {
          j.spend_inputs.push_back(in);
          continue;
        }
        const auto* p = cl->find_pending(it->second);
        if (!p || !p->confirmed || p->confirmed_output == 0) return;
        j.spend_inputs.push_back(p->confirmed_output);
      }
      j.item.client = j.client;
      j.item.multi_id = j.id;
      j.item.inputs = j.spend_inputs;
      j.item.outputs.clear();
      const auto& wl = sms_.wallet_list();
      std::vector<ClientId> cids;
      for (auto& [c, cc] : clients_) cids.push_back(c);
      for (int i = 0; i < cfg_.multiOutputs; ++i) {
        MultiSpendItem::Out o;
        o.recipient = cids[i % cids.size()];
        o.wallet = wl[multi_rng_.below(wl.size())];
        o.shard = sms_.wallet_home(o.wallet);
        j.item.outputs.push_back(o);
      }
      j.item_dig = item_digest(PayloadItem{j.item});
      for (UtxoId u : j.spend_inputs) cl->reserve(u);
      net_.send(client_actor(j.client), kActorSms,
                ProposalForward{j.cons_shard, PayloadItem{j.item}}, round_);
      j.last_submit = round_;
      j.phase = MultiJob::Phase::Executing;
      emit(static_cast<int64_t>(j.spend_inputs.size()));
      return;
    }
    case MultiJob::Phase::Executing: {
      // The rival spend can still win the race after the item was submitted;
      // the batch then fails validation at execution and no outputs are ever
      // parked. Unlock the inputs and give up.
      if (j.parked.empty() && j.rival_digest) {
        const auto* rp = cl->find_pending(j.rival_digest);
        if (rp && rp->confirmed) {
          for (UtxoId u : j.spend_inputs) cl->release(u);
          j.phase = MultiJob::Phase::Aborted;
          emit(static_cast<int64_t>(round_ - j.started_round));
          return;
        }
      }
      if (!j.parked.empty()) {
        j.dist_txs.clear();
        for (size_t i = 0; i < j.parked.size() && i < j.item.outputs.size();
             ++i) {
          const auto& o = j.item.outputs[i];
          ClientActor* rc = owner_client(o.recipient);
          if (!rc) continue;
          auto loc = rc->owned().at(j.parked[i]);
          Transaction tx;
          tx.client = o.recipient;
          tx.input_utxo = j.parked[i];
          tx.source_shard = loc.first;
          tx.source_wallet = loc.second;
          tx.target_shard = o.shard;
          tx.target_wallet = o.wallet;
          Digest d = rc->submit_specific(tx, 4, round_, net_);
          j.dist_txs[d] = o.recipient;
        }
        j.phase = MultiJob::Phase::Distributing;
        emit(static_cast<int64_t>(j.dist_txs.size()));
        return;
      }
      if (round_ - j.last_submit >= cfg_.resendPeriod) {
        net_.send(client_actor(j.client), kActorSms,
                  ProposalForward{j.cons_shard, PayloadItem{j.item}}, round_);
        j.last_submit = round_;
      }
      return;
    }
    case MultiJob::Phase::Distributing: {
      for (const auto& [d, rc] : j.dist_txs) {
        ClientActor* r = owner_client(rc);
        const auto* p = r ? r->find_pending(d) : nullptr;
        if (!p || !p->confirmed) return;
      }
      j.phase = MultiJob::Phase::Done;
      emit(static_cast<int64_t>(round_ - j.started_round));
      return;
    }
    default:
      return;
  }
}

void Simulation::start_multi_job(MultiJob& job) {
  for (auto& [c, cl] : clients_) {
    auto avail = cl->spendable();
    if (static_cast<int>(avail.size()) < cfg_.multiInputs) continue;
    job.client = c;
    job.picked_inputs.assign(avail.begin(), avail.begin() + cfg_.multiInputs);
    break;
  }
  if (job.client == kNoClient) return;
  ClientActor* cl = owner_client(job.client);

  std::map<ShardId, int> cnt;
  for (UtxoId u : job.picked_inputs) {
    auto loc = cl->owned().at(u);
    ShardId home = sms_.wallet_home(loc.second);
    ++cnt[home >= 0 ? home : loc.first];
  }
  ShardId best = cnt.begin()->first;
  int bestn = cnt.begin()->second;
  for (const auto& [s, n] : cnt)
    if (n > bestn) {
      best = s;
      bestn = n;
    }
  job.cons_shard = best;
  WalletId cw = -1;
  for (const auto& [w, home] : sms_.wallet_map())
    if (home == best) {
      cw = w;
      break;
    }
  if (cw < 0) return;
  job.cons_wallet = cw;
  job.started_round = round_;

  // The rival goes on the wire first: per-channel FIFO means the leader sees
  // it before the consolidation transfer for the same input, so the abort
  // path is taken deterministically.
  if (cfg_.multiAbort) {
    UtxoId in0 = job.picked_inputs[0];
    auto loc = cl->owned().at(in0);
    ShardId src = sms_.wallet_home(loc.second);
    if (src < 0) src = loc.first;
    const auto& wl = sms_.wallet_list();
    if (wl.size() >= 2) {
      WalletId rw = wl[0] == job.cons_wallet ? wl[1] : wl[0];
      Transaction rtx;
      rtx.client = job.client;
      rtx.input_utxo = in0;
      rtx.source_shard = src;
      rtx.source_wallet = loc.second;
      rtx.target_shard = sms_.wallet_home(rw);
      rtx.target_wallet = rw;
      job.rival_digest = cl->submit_specific(rtx, 2, round_, net_);
      job.abort_injected = true;
    }
  }

  for (UtxoId in : job.picked_inputs) {
    auto loc = cl->owned().at(in);
    ShardId src = sms_.wallet_home(loc.second);
    if (src < 0) src = loc.first;
    if (src == job.cons_shard) {
      job.cons_txs[in] = 0;
      cl->reserve(in);
      continue;
    }
    Transaction tx;
    tx.client = job.client;
    tx.input_utxo = in;
    tx.source_shard = src;
    tx.source_wallet = loc.second;
    tx.target_shard = job.cons_shard;
    tx.target_wallet = job.cons_wallet;
    job.cons_txs[in] = cl->submit_specific(tx, 3, round_, net_);
  }
  job.phase = MultiJob::Phase::Consolidating;
  TraceEvent e;
  e.round = round_;
  e.kind = EventKind::Multi;
  e.actor = client_actor(job.client);
  e.digest = job.id;
  e.f0 = static_cast<int64_t>(job.phase);
  e.f1 = static_cast<int64_t>(job.picked_inputs.size());
  filter_.event(e);
}

// ---------------------------------------------------------------------------
// Hooks

void Simulation::membership_executed(ShardId shard, int epoch,
                                     const MembershipLog::Event& ev,
                                     PeerId executor) {
  (void)executor;
  bool applied = sms_.membership_executed(shard, epoch, ev, round_);
  if (!applied) return;
  if (!cfg_.cuckoo || cfg_.mode != Mode::Smart) return;
  if (ev.kind != MembershipLog::Event::Kind::Join) return;
  if (round_ > cfg_.rounds) return;
  std::vector<PeerId> cand;
  for (PeerId q : sms_.members_of(shard)) {
    if (q == ev.peer) continue;
    auto it = peers_.find(q);
    if (it == peers_.end()) continue;
    PeerActor* pa = it->second.get();
    if (!pa->active() || pa->joining() || pa->leaving() || pa->departed())
      continue;
    if (pa->behavior() != FaultBehavior::Correct) continue;
    bool leads = false;
    for (ShardId s : pa->shards())
      if (pa->current_leader(s) == q) leads = true;
    if (leads) continue;
    cand.push_back(q);
  }
  if (cand.empty()) return;
  PeerId evictee = cand[churn_rng_.below(cand.size())];
  auto seats = peers_[evictee]->shards();
  TraceEvent e;
  e.round = round_;
  e.kind = EventKind::Evict;
  e.actor = kActorSms;
  e.f0 = evictee;
  e.f1 = seats.empty() ? -1 : seats[0];
  e.f2 = seats.size() > 1 ? seats[1] : -1;
  filter_.event(e);
  // The evictee leaves both shards and rejoins at a fresh random placement
  // once its departure completes.
  peers_[evictee]->start_leave(round_, net_);
  evict_rejoin_.insert(evictee);
}

void Simulation::multi_executed(uint64_t multi_id,
                                const std::vector<UtxoId>& outputs,
                                WalletId wallet, ShardId shard,
                                PeerId executor) {
  (void)executor;
  for (auto& j : multi_jobs_) {
    if (j.id != multi_id) continue;
    if (!j.parked.empty()) return;  // first executor already reported
    j.parked = outputs;
    j.parked_wallet = wallet;
    multi_delta_ += static_cast<int64_t>(outputs.size()) -
                    static_cast<int64_t>(j.item.inputs.size());
    for (size_t i = 0; i < outputs.size() && i < j.item.outputs.size(); ++i) {
      ClientActor* rc = owner_client(j.item.outputs[i].recipient);
      if (rc) rc->grant(outputs[i], shard, wallet);
    }
    ClientActor* cl = owner_client(j.client);
    if (cl)
      for (UtxoId u : j.item.inputs) cl->forget(u);
    return;
  }
}

// ---------------------------------------------------------------------------
// Oracle access

PeerActor* Simulation::peer(PeerId p) {
  auto it = peers_.find(p);
  return it == peers_.end() ? nullptr : it->second.get();
}

const PeerActor* Simulation::peer(PeerId p) const {
  auto it = peers_.find(p);
  return it == peers_.end() ? nullptr : it->second.get();
}

ClientActor* Simulation::client(ClientId c) {
  auto it = clients_.find(c);
  return it == clients_.end() ? nullptr : it->second.get();
}

const ClientActor* Simulation::client(ClientId c) const {
  auto it = clients_.find(c);
  return it == clients_.end() ? nullptr : it->second.get();
}

std::vector<PeerId> Simulation::all_peer_ids() const {
  std::vector<PeerId> out;
  for (const auto& [id, p] : peers_) out.push_back(id);
  return out;
}

std::vector<ClientId> Simulation::all_client_ids() const {
  std::vector<ClientId> out;
  for (const auto& [id, c] : clients_) out.push_back(id);
  return out;
}

std::vector<ShardId> Simulation::shard_ids() const {
  std::vector<ShardId> out;
  for (const auto& [s, m] : sms_.members()) out.push_back(s);
  return out;
}

std::vector<PeerId> Simulation::correct_members(ShardId shard) const {
  std::vector<PeerId> out;
  if (!sms_.members().count(shard)) return out;
  for (PeerId p : sms_.members_of(shard)) {
    auto it = peers_.find(p);
    if (it == peers_.end()) continue;
    const PeerActor* pa = it->second.get();
    if (!pa->active() || pa->departed()) continue;
    if (pa->behavior() != FaultBehavior::Correct) continue;
    if (!pa->in_shard(shard)) continue;
    out.push_back(p);
  }
  return out;
}

}  // namespace smartshards
