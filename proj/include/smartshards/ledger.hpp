#pragma once

#include <map>
#include <set>
#include <vector>

#include "smartshards/ids.hpp"

namespace smartshards {

enum class Validity { Valid, Invalid, Undetermined };

const char* to_string(Validity v);

// Unit-value unspent output. Ownership lives on the output; wallets are
// routing addresses that pin an output to a shard.
struct Utxo {
  UtxoId id = 0;
  ClientId owner = kNoClient;
  WalletId wallet = -1;
  bool spent = false;
};

// One-input one-output unit transfer.
struct Transaction {
  ClientId client = kNoClient;
  UtxoId input_utxo = 0;
  ShardId source_shard = -1;
  ShardId target_shard = -1;
  WalletId source_wallet = -1;
  WalletId target_wallet = -1;

  bool internal() const { return source_shard == target_shard; }
  bool cross_shard() const { return !internal(); }
  Digest digest() const;
  bool operator==(const Transaction&) const = default;
};

// Confirmed entry. `round` is when the local replica executed the append; it
// is bookkeeping only and excluded from digests and equality checks, since
// replicas execute the same sequence at different rounds.
struct LedgerRecord {
  Transaction tx;
  UtxoId output_utxo = 0;
  int round = 0;

  Digest digest() const;
};

// Validity lifecycle of a transaction as observed by a replica. Legal moves:
// Undetermined may settle to Valid or Invalid, an unconfirmed Valid may be
// invalidated by a rival spend, confirmation is irreversible, and neither a
// determined state may return to Undetermined nor Invalid ever become Valid.
struct ValidityState {
  Validity v = Validity::Undetermined;
  bool confirmed = false;

  bool operator==(const ValidityState&) const = default;
};

bool transition_allowed(ValidityState from, ValidityState to);

// Append-only record sequence plus the unspent-output view of one shard's
// wallets. Inputs of inbound cross-shard records belong to the source shard
// and are vouched for by the transfer quorum, so they are not looked up here.
class Ledger {
 public:
  Ledger() = default;
  explicit Ledger(ShardId home) : home_(home) {}

  ShardId home() const { return home_; }

  void add_genesis(const Utxo& u);
  // Adopts an output during a lifecycle wallet remap, keeping its id.
  void adopt(const Utxo& u);

  // Valid: input known and unspent. Invalid: known and spent.
  // Undetermined: not in this shard's output view.
  Validity classify(const Transaction& t) const;
  // classify() == Valid plus ownership and source-wallet agreement.
  bool valid_for(const Transaction& t) const;

  bool contains_tx(Digest tx_digest) const;

  // Source-side append. Requires valid_for(). Spends the input; an internal
  // transaction also mints the output locally. Returns the minted output id
  // or 0 when the output belongs to the target shard.
  UtxoId apply_local(const Transaction& t, int round);

  // Target-side append of a quorum-backed inbound transfer. Mints the output.
  UtxoId apply_inbound(const Transaction& t, int round);

  // Parked multi-transaction output minted by an executed batch spend.
  UtxoId mint(ClientId owner, WalletId wallet);
  // Spends a local output directly (multi-transaction execution).
  void spend(UtxoId id);

  const std::vector<LedgerRecord>& records() const { return records_; }
  size_t size() const { return records_.size(); }
  Digest digest() const { return chain_; }

  int64_t unspent_count() const { return unspent_count_; }
  const Utxo* find(UtxoId id) const;
  // Unspent output ids of one wallet, ascending.
  std::vector<UtxoId> unspent_in(WalletId w) const;
  std::vector<WalletId> wallets() const;
  // Removes a wallet's unspent outputs (lifecycle remap source side).
  std::vector<Utxo> extract_wallet(WalletId w);

 private:
  UtxoId next_output_id();
  void insert_output(const Utxo& u);
  void spend_impl(UtxoId id);
  void push_record(const LedgerRecord& r);

  ShardId home_ = -1;
  std::vector<LedgerRecord> records_;
  std::map<UtxoId, Utxo> outputs_;
  std::map<WalletId, std::set<UtxoId>> unspent_by_wallet_;
  std::set<Digest> appended_;
  Digest chain_ = kFnvOffset;
  int64_t next_ordinal_ = 0;
  int64_t unspent_count_ = 0;
};

}  // namespace smartshards
