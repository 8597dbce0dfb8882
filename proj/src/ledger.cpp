#include "smartshards/ledger.hpp"

#include <stdexcept>
#include <string>

namespace smartshards {

const char* to_string(Validity v) {
  switch (v) {
    case Validity::Valid: return "valid";
    case Validity::Invalid: return "invalid";
    case Validity::Undetermined: return "undetermined";
  }
  return "?";
}

Digest Transaction::digest() const {
  Digest h = kFnvOffset;
  h = hash_combine(h, static_cast<uint64_t>(client));
  h = hash_combine(h, static_cast<uint64_t>(input_utxo));
  h = hash_combine(h, static_cast<uint64_t>(source_shard));
  h = hash_combine(h, static_cast<uint64_t>(target_shard));
  h = hash_combine(h, static_cast<uint64_t>(source_wallet));
  h = hash_combine(h, static_cast<uint64_t>(target_wallet));
  return h;
}

Digest LedgerRecord::digest() const {
  return hash_combine(tx.digest(), static_cast<uint64_t>(output_utxo));
}

bool transition_allowed(ValidityState from, ValidityState to) {
  if (from == to) return true;
  // Only a determined transaction can be confirmed.
  if (to.confirmed && to.v == Validity::Undetermined) return false;
  // A determined state never returns to undetermined.
  if (from.v != Validity::Undetermined && to.v == Validity::Undetermined)
    return false;
  // Invalid never becomes valid.
  if (from.v == Validity::Invalid && to.v == Validity::Valid) return false;
  // A confirmed valid transaction is never invalidated.
  if (from.v == Validity::Valid && from.confirmed &&
      to.v == Validity::Invalid)
    return false;
  // Confirmation is irreversible.
  if (from.confirmed && !to.confirmed) return false;
  return true;
}

void Ledger::add_genesis(const Utxo& u) {
  insert_output(u);
  if (utxo_home_shard(u.id) == home_) {
    int64_t ordinal = u.id & ((1ll << 40) - 1);
    if (ordinal >= next_ordinal_) next_ordinal_ = ordinal + 1;
  }
}

void Ledger::adopt(const Utxo& u) {
  insert_output(u);
  chain_ = hash_combine(chain_, hash_combine(fnv1a("adopt"), u.id));
}

void Ledger::insert_output(const Utxo& u) {
  if (outputs_.count(u.id))
    throw std::invalid_argument("duplicate output id " + std::to_string(u.id));
  outputs_[u.id] = u;
  if (!u.spent) {
    unspent_by_wallet_[u.wallet].insert(u.id);
    ++unspent_count_;
  }
}

Validity Ledger::classify(const Transaction& t) const {
  auto it = outputs_.find(t.input_utxo);
  if (it == outputs_.end()) return Validity::Undetermined;
  return it->second.spent ? Validity::Invalid : Validity::Valid;
}

bool Ledger::valid_for(const Transaction& t) const {
  auto it = outputs_.find(t.input_utxo);
  if (it == outputs_.end() || it->second.spent) return false;
  return it->second.owner == t.client && it->second.wallet == t.source_wallet;
}

bool Ledger::contains_tx(Digest tx_digest) const {
  return appended_.count(tx_digest) != 0;
}

UtxoId Ledger::next_output_id() { return make_utxo_id(home_, next_ordinal_++); }

UtxoId Ledger::apply_local(const Transaction& t, int round) {
  if (!valid_for(t))
    throw std::logic_error("apply_local on a non-valid transaction");
  spend_impl(t.input_utxo);
  UtxoId out = 0;
  if (t.internal()) {
    out = next_output_id();
    insert_output(Utxo{out, t.client, t.target_wallet, false});
  }
  push_record(LedgerRecord{t, out, round});
  return out;
}

UtxoId Ledger::apply_inbound(const Transaction& t, int round) {
  if (contains_tx(t.digest()))
    throw std::logic_error("apply_inbound of an already confirmed transaction");
  UtxoId out = next_output_id();
  insert_output(Utxo{out, t.client, t.target_wallet, false});
  push_record(LedgerRecord{t, out, round});
  return out;
}

void Ledger::push_record(const LedgerRecord& r) {
  records_.push_back(r);
  appended_.insert(r.tx.digest());
  chain_ = hash_combine(chain_, r.digest());
}

UtxoId Ledger::mint(ClientId owner, WalletId wallet) {
  UtxoId out = next_output_id();
  insert_output(Utxo{out, owner, wallet, false});
  chain_ = hash_combine(chain_, hash_combine(fnv1a("mint"), out));
  return out;
}

void Ledger::spend(UtxoId id) {
  spend_impl(id);
  chain_ = hash_combine(chain_, hash_combine(fnv1a("spend"), id));
}

void Ledger::spend_impl(UtxoId id) {
  auto it = outputs_.find(id);
  if (it == outputs_.end() || it->second.spent)
    throw std::logic_error("spend of unknown or spent output " +
                           std::to_string(id));
  it->second.spent = true;
  unspent_by_wallet_[it->second.wallet].erase(id);
  if (unspent_by_wallet_[it->second.wallet].empty())
    unspent_by_wallet_.erase(it->second.wallet);
  --unspent_count_;
}

const Utxo* Ledger::find(UtxoId id) const {
  auto it = outputs_.find(id);
  return it == outputs_.end() ? nullptr : &it->second;
}

std::vector<UtxoId> Ledger::unspent_in(WalletId w) const {
  auto it = unspent_by_wallet_.find(w);
  if (it == unspent_by_wallet_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

std::vector<WalletId> Ledger::wallets() const {
  std::vector<WalletId> out;
  for (const auto& [w, ids] : unspent_by_wallet_)
    if (!ids.empty()) out.push_back(w);
  return out;
}

std::vector<Utxo> Ledger::extract_wallet(WalletId w) {
  std::vector<Utxo> moved;
  auto it = unspent_by_wallet_.find(w);
  if (it == unspent_by_wallet_.end()) return moved;
  std::vector<UtxoId> ids(it->second.begin(), it->second.end());
  for (UtxoId id : ids) {
    moved.push_back(outputs_.at(id));
    outputs_.erase(id);
    --unspent_count_;
  }
  unspent_by_wallet_.erase(w);
  chain_ = hash_combine(chain_, hash_combine(fnv1a("extract"), w));
  return moved;
}

}  // namespace smartshards
