#include "smartshards/sim.hpp"

#include <algorithm>

namespace smartshards {

ClientActor::ClientActor(ClientId id, const SimConfig& cfg, uint64_t seed,
                         TraceSink& sink)
    : id_(id),
      cfg_(cfg),
      rng_(seed, "client" + std::to_string(id)),
      sink_(sink) {}

void ClientActor::grant(UtxoId utxo, ShardId shard, WalletId wallet) {
  owned_[utxo] = {shard, wallet};
}

const ClientActor::PendingTx* ClientActor::find_pending(Digest d) const {
  auto it = pending_.find(d);
  return it == pending_.end() ? nullptr : &it->second;
}

std::vector<UtxoId> ClientActor::spendable() const {
  std::vector<UtxoId> out;
  for (const auto& [id, loc] : owned_) {
    if (!committed_.count(id)) out.push_back(id);
  }
  return out;
}

Digest ClientActor::submit_specific(const Transaction& tx, int flavor,
                                    int round, Network& net) {
  Digest d = tx.digest();
  if (pending_.count(d)) return d;
  committed_.insert(tx.input_utxo);
  PendingTx p;
  p.tx = tx;
  p.submit_round = round;
  p.flavor = flavor;
  auto [it, ok] = pending_.emplace(d, std::move(p));

  TraceEvent e;
  e.round = round;
  e.kind = EventKind::Submit;
  e.actor = client_actor(id_);
  e.digest = d;
  e.f0 = tx.source_shard;
  e.f1 = tx.target_shard;
  e.f2 = flavor;
  e.f3 = tx.input_utxo;
  sink_.event(e);

  send_submit(it->second, d, round, net, false);
  return d;
}

void ClientActor::send_submit(PendingTx& p, Digest d, int round, Network& net,
                              bool resend) {
  (void)d;
  p.last_send = round;
  ++p.attempts;
  net.send(client_actor(id_), kActorSms, TxSubmit{p.tx, resend}, round);
}

void ClientActor::tick(int round, bool allow_new, bool allow_resend,
                       Network& net, const SmsOracle& sms) {
  if (allow_new) {
    int open_self = 0;
    for (const auto& [d, p] : pending_) {
      if (p.flavor == 0 && !p.confirmed && !p.rejected) ++open_self;
    }
    if (open_self == 0) {
      std::vector<UtxoId> avail = spendable();
      if (!avail.empty() && !sms.wallet_list().empty()) {
        UtxoId input = avail[rng_.below(avail.size())];
        WalletId tw = sms.wallet_list()[rng_.below(sms.wallet_list().size())];
        ShardId ts = sms.wallet_home(tw);
        auto [ss, sw] = owned_.at(input);
        // The source wallet may have been rehomed since the grant.
        ShardId ss_now = sms.wallet_home(sw);
        if (ss_now >= 0 && ss_now != ss) {
          ss = ss_now;
          owned_[input] = {ss, sw};
        }
        if (ts >= 0) {
          Transaction tx;
          tx.client = id_;
          tx.input_utxo = input;
          tx.source_shard = ss;
          tx.source_wallet = sw;
          tx.target_shard = ts;
          tx.target_wallet = tw;
          submit_specific(tx, 0, round, net);
        }
      }
    }
  }

  if (!allow_resend) return;
  for (auto& [d, p] : pending_) {
    if (p.confirmed || p.rejected) continue;
    if (round - p.last_send < cfg_.resendPeriod) continue;
    send_submit(p, d, round, net, true);
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::Resend;
    e.actor = client_actor(id_);
    e.digest = d;
    e.f0 = p.tx.source_shard;
    e.f1 = p.attempts;
    sink_.event(e);
  }
}

void ClientActor::try_confirm(PendingTx& p, Digest d, int round) {
  if (!p.confirmed) {
    for (const auto& set : p.sets) {
      int64_t matches = 0;
      for (PeerId q : set.members) {
        if (p.confirms.count(q)) ++matches;
      }
      if (matches > set.f) {
        p.confirmed = true;
        p.confirm_round = round;
        ++confirmed_count_;
        owned_.erase(p.tx.input_utxo);
        committed_.erase(p.tx.input_utxo);

        TraceEvent e;
        e.round = round;
        e.kind = EventKind::Confirm;
        e.actor = client_actor(id_);
        e.digest = d;
        e.f0 = set.members.empty() ? -1 : p.tx.source_shard;
        e.f1 = matches;
        e.f2 = set.f;
        e.f3 = p.submit_round;
        sink_.event(e);
        break;
      }
    }
  }
  // The minted output id may only arrive with later target-side
  // confirmations; the grant stays open until one carries it.
  if (p.confirmed && p.confirmed_output == 0) {
    // Adopt the minted output id once a quorum-side confirmation carried it.
    UtxoId best = 0;
    int best_votes = 0;
    for (const auto& [out, votes] : p.output_votes) {
      if (out != 0 && votes > best_votes) {
        best = out;
        best_votes = votes;
      }
    }
    if (best != 0) {
      p.confirmed_output = best;
      owned_[best] = {p.tx.target_shard, p.tx.target_wallet};
    }
  }
}

void ClientActor::handle(int32_t from, const Message& m, int round,
                         Network& net) {
  (void)net;
  if (const auto* reply = std::get_if<MembershipReply>(&m)) {
    if (reply->tx_digest == 0) return;
    auto it = pending_.find(reply->tx_digest);
    if (it == pending_.end()) return;
    PendingTx& p = it->second;
    bool known = false;
    for (const auto& set : p.sets) {
      if (set.members == reply->members && set.f == reply->f) {
        known = true;
        break;
      }
    }
    if (!known) {
      p.sets.push_back(SetInfo{reply->members, reply->f});
      try_confirm(p, it->first, round);
    }
    return;
  }

  if (const auto* conf = std::get_if<TxConfirm>(&m)) {
    Digest d = conf->tx.digest();
    auto it = pending_.find(d);
    if (it == pending_.end()) return;
    PendingTx& p = it->second;
    if (from >= 0) p.confirms.insert(static_cast<PeerId>(from));
    if (conf->output != 0) ++p.output_votes[conf->output];
    try_confirm(p, d, round);
    return;
  }

  if (const auto* rej = std::get_if<SmsReject>(&m)) {
    auto it = pending_.find(rej->tx_digest);
    if (it == pending_.end()) return;
    PendingTx& p = it->second;
    if (p.confirmed || p.rejected) return;
    p.rejected = true;
    committed_.erase(p.tx.input_utxo);
    TraceEvent e;
    e.round = round;
    e.kind = EventKind::Reject;
    e.actor = client_actor(id_);
    e.digest = it->first;
    e.f0 = p.tx.source_shard;
    e.f1 = 5;  // routing rejection
    sink_.event(e);
    return;
  }
}

}  // namespace smartshards
