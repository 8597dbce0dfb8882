#include <doctest.h>

#include <array>
#include <stdexcept>

#include "smartshards/ledger.hpp"

using namespace smartshards;

namespace {

Utxo genesis(ShardId shard, int64_t ordinal, ClientId owner, WalletId wallet) {
  return Utxo{make_utxo_id(shard, ordinal), owner, wallet, false};
}

}  // namespace

TEST_CASE("internal append spends the input and mints locally") {
  Ledger led(0);
  led.add_genesis(genesis(0, 0, 7, 100));
  Transaction t{7, make_utxo_id(0, 0), 0, 0, 100, 101};

  CHECK(led.classify(t) == Validity::Valid);
  CHECK(led.valid_for(t));
  UtxoId out = led.apply_local(t, 3);
  CHECK(out != 0);
  CHECK(utxo_home_shard(out) == 0);
  CHECK(led.size() == 1);
  CHECK(led.contains_tx(t.digest()));
  CHECK(led.unspent_count() == 1);
  const Utxo* m = led.find(out);
  REQUIRE(m != nullptr);
  CHECK(m->owner == 7);
  CHECK(m->wallet == 101);

  // The input is now spent; the same transaction is invalid.
  CHECK(led.classify(t) == Validity::Invalid);
  CHECK_FALSE(led.valid_for(t));
  CHECK_THROWS_AS(led.apply_local(t, 4), std::logic_error);
}

TEST_CASE("cross-shard: source spends, target mints") {
  Ledger src(0);
  Ledger tgt(1);
  src.add_genesis(genesis(0, 0, 7, 100));
  Transaction t{7, make_utxo_id(0, 0), 0, 1, 100, 200};

  UtxoId at_source = src.apply_local(t, 2);
  CHECK(at_source == 0);  // output belongs to the target shard
  CHECK(src.unspent_count() == 0);

  CHECK(tgt.classify(t) == Validity::Undetermined);  // input is foreign
  UtxoId out = tgt.apply_inbound(t, 5);
  CHECK(utxo_home_shard(out) == 1);
  CHECK(tgt.unspent_count() == 1);
  const Utxo* m = tgt.find(out);
  REQUIRE(m != nullptr);
  CHECK(m->wallet == 200);
  CHECK(m->owner == 7);
}

TEST_CASE("double spend: second spend of the same output is invalid") {
  Ledger led(0);
  led.add_genesis(genesis(0, 0, 7, 100));
  Transaction a{7, make_utxo_id(0, 0), 0, 0, 100, 101};
  Transaction b{7, make_utxo_id(0, 0), 0, 0, 100, 102};
  led.apply_local(a, 1);
  CHECK(led.classify(b) == Validity::Invalid);
  CHECK_FALSE(led.valid_for(b));
}

TEST_CASE("ownership and wallet agreement are enforced") {
  Ledger led(0);
  led.add_genesis(genesis(0, 0, 7, 100));
  Transaction wrong_owner{8, make_utxo_id(0, 0), 0, 0, 100, 101};
  Transaction wrong_wallet{7, make_utxo_id(0, 0), 0, 0, 99, 101};
  CHECK(led.classify(wrong_owner) == Validity::Valid);  // output exists
  CHECK_FALSE(led.valid_for(wrong_owner));
  CHECK_FALSE(led.valid_for(wrong_wallet));
}

TEST_CASE("replicas executing the same sequence agree byte for byte") {
  Ledger a(0);
  Ledger b(0);
  for (int i = 0; i < 4; ++i) {
    a.add_genesis(genesis(0, i, i, 100 + i));
    b.add_genesis(genesis(0, i, i, 100 + i));
  }
  std::array<Transaction, 3> txs = {
      Transaction{0, make_utxo_id(0, 0), 0, 0, 100, 101},
      Transaction{1, make_utxo_id(0, 1), 0, 2, 101, 250},
      Transaction{2, make_utxo_id(0, 2), 0, 0, 102, 100},
  };
  // Same order, different execution rounds: digests must still match.
  int round_a = 1, round_b = 50;
  for (const auto& t : txs) {
    a.apply_local(t, round_a++);
    b.apply_local(t, round_b += 3);
  }
  CHECK(a.digest() == b.digest());
  CHECK(a.size() == b.size());

  // Divergent history changes the digest.
  Transaction extra{3, make_utxo_id(0, 3), 0, 0, 103, 100};
  a.apply_local(extra, 9);
  CHECK(a.digest() != b.digest());
}

TEST_CASE("digest covers non-record mutations") {
  Ledger a(0);
  Ledger b(0);
  a.add_genesis(genesis(0, 0, 1, 100));
  b.add_genesis(genesis(0, 0, 1, 100));
  CHECK(a.digest() == b.digest());
  b.mint(2, 100);
  CHECK(a.digest() != b.digest());

  Ledger c(0);
  Ledger d(0);
  c.add_genesis(genesis(0, 0, 1, 100));
  d.add_genesis(genesis(0, 0, 1, 100));
  d.extract_wallet(100);
  CHECK(c.digest() != d.digest());
}

TEST_CASE("wallet extraction removes unspent outputs") {
  Ledger led(0);
  led.add_genesis(genesis(0, 0, 1, 100));
  led.add_genesis(genesis(0, 1, 2, 100));
  led.add_genesis(genesis(0, 2, 3, 101));
  auto moved = led.extract_wallet(100);
  CHECK(moved.size() == 2);
  CHECK(led.unspent_count() == 1);
  CHECK(led.unspent_in(100).empty());
  CHECK(led.unspent_in(101).size() == 1);
}

TEST_CASE("validity lifecycle transitions") {
  ValidityState und{Validity::Undetermined, false};
  ValidityState val{Validity::Valid, false};
  ValidityState inv{Validity::Invalid, false};
  ValidityState val_c{Validity::Valid, true};
  ValidityState inv_c{Validity::Invalid, true};
  ValidityState und_c{Validity::Undetermined, true};

  // Settling and confirming.
  CHECK(transition_allowed(und, val));
  CHECK(transition_allowed(und, inv));
  CHECK(transition_allowed(val, val_c));
  CHECK(transition_allowed(inv, inv_c));
  CHECK(transition_allowed(val, inv));  // rival spend invalidates
  CHECK(transition_allowed(und, und)); // staying put is always fine
  CHECK(transition_allowed(val, val));

  // Forbidden moves.
  CHECK_FALSE(transition_allowed(val, und));
  CHECK_FALSE(transition_allowed(inv, und));
  CHECK_FALSE(transition_allowed(inv, val));
  CHECK_FALSE(transition_allowed(inv_c, val_c));
  CHECK_FALSE(transition_allowed(val_c, inv_c));  // confirmed is irreversible
  CHECK_FALSE(transition_allowed(val_c, val));    // cannot unconfirm
  CHECK_FALSE(transition_allowed(inv_c, inv));
  CHECK_FALSE(transition_allowed(und, und_c));    // undetermined cannot confirm
}

TEST_CASE("duplicate append is rejected") {
  Ledger led(0);
  led.add_genesis(genesis(0, 0, 7, 100));
  Transaction t{7, make_utxo_id(0, 0), 0, 1, 100, 200};
  led.apply_local(t, 1);
  CHECK(led.contains_tx(t.digest()));
  CHECK_THROWS_AS(led.apply_local(t, 2), std::logic_error);

  Ledger tgt(1);
  tgt.apply_inbound(t, 3);
  CHECK_THROWS_AS(tgt.apply_inbound(t, 4), std::logic_error);
}
