#include <doctest.h>

#include <deque>
#include <map>
#include <memory>
#include <set>
#include <tuple>
#include <vector>

#include "smartshards/consensus.hpp"

using namespace smartshards;

namespace {

// Four-member single-shard harness with synchronous delivery.
struct Cluster {
  struct Env final : ConsensusEnv {
    Cluster* c = nullptr;
    PeerId self = -1;
    const std::vector<PeerId>& members_at(ShardId, int) override {
      return c->member_ids;
    }
    int current_epoch(ShardId) override { return 0; }
    bool verdict_input(ShardId, const Transaction& tx) override {
      auto it = c->verdict.find({self, tx.digest()});
      return it != c->verdict.end() && it->second;
    }
  };

  std::vector<PeerId> member_ids{0, 1, 2, 3};
  std::map<std::pair<PeerId, Digest>, bool> verdict;
  std::vector<std::unique_ptr<Env>> envs;
  std::vector<std::unique_ptr<ShardConsensus>> engines;
  std::deque<std::tuple<PeerId, PeerId, ConsensusMsg>> wire;
  std::set<PeerId> crashed;
  std::map<PeerId, std::vector<ConsensusDecision>> decided;
  std::vector<std::string> violations;
  int64_t messages_moved = 0;

  explicit Cluster(ConsensusParams params = test_params()) {
    for (PeerId p : member_ids) {
      auto env = std::make_unique<Env>();
      env->c = this;
      env->self = p;
      engines.push_back(
          std::make_unique<ShardConsensus>(p, 0, params, env.get()));
      envs.push_back(std::move(env));
    }
  }

  static ConsensusParams test_params() {
    ConsensusParams p;
    p.pipeline_depth = 4;
    p.view_timeout = 5;
    p.verdict_grace = 3;
    p.heartbeat_interval = 2;
    return p;
  }

  ShardConsensus& eng(PeerId p) { return *engines[static_cast<size_t>(p)]; }

  void absorb(PeerId self, ConsensusOutput& out) {
    if (!crashed.count(self)) {
      for (auto& s : out.sends) wire.emplace_back(self, s.to, s.msg);
    }
    for (auto& d : out.decisions) decided[self].push_back(d);
    for (auto& v : out.violations) violations.push_back(v);
  }

  void pump(int round) {
    while (!wire.empty()) {
      auto [from, to, msg] = wire.front();
      wire.pop_front();
      if (crashed.count(to)) continue;
      ++messages_moved;
      ConsensusOutput out;
      eng(to).handle(msg, from, round, out);
      absorb(to, out);
    }
  }

  void tick_all(int round) {
    for (PeerId p : member_ids) {
      if (crashed.count(p)) continue;
      ConsensusOutput out;
      eng(p).tick(round, out);
      absorb(p, out);
    }
  }

  int64_t propose(PeerId leader, const Payload& pl, int round) {
    ConsensusOutput out;
    int64_t seq = eng(leader).propose(pl, round, out);
    absorb(leader, out);
    return seq;
  }
};

Payload tx_payload(int tag) {
  Transaction t{tag, make_utxo_id(0, tag), 0, 0, 1, 2};
  return Payload{{t}};
}

Payload verdict_payload(const Transaction& tx) {
  return Payload{{VerdictItem{tx}}};
}

}  // namespace

TEST_CASE("happy path: proposal decides on every member") {
  Cluster c;
  Payload pl = tx_payload(1);
  REQUIRE(c.eng(0).is_leader());
  int64_t seq = c.propose(0, pl, 1);
  CHECK(seq == 0);
  c.pump(1);
  for (PeerId p : c.member_ids) {
    REQUIRE(c.decided[p].size() == 1);
    CHECK(c.decided[p][0].seq == 0);
    CHECK(c.decided[p][0].payload == pl);
    CHECK(c.decided[p][0].bit);
  }
  CHECK(c.violations.empty());
  // Leader aggregation: linear message complexity, far below all-to-all.
  CHECK(c.messages_moved <= 6 * 4);
}

TEST_CASE("pipelined proposals decide in order") {
  Cluster c;
  c.propose(0, tx_payload(1), 1);
  c.propose(0, tx_payload(2), 1);
  c.propose(0, tx_payload(3), 1);
  c.pump(1);
  for (PeerId p : c.member_ids) {
    REQUIRE(c.decided[p].size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(c.decided[p][static_cast<size_t>(i)].seq == i);
      CHECK(c.decided[p][static_cast<size_t>(i)].payload == tx_payload(i + 1));
    }
  }
}

TEST_CASE("non-leader proposal is flagged, not executed") {
  Cluster c;
  ConsensusOutput out;
  int64_t seq = c.eng(1).propose(tx_payload(1), 1, out);
  CHECK(seq == -1);
  CHECK(out.sends.empty());
  CHECK_FALSE(out.violations.empty());
}

TEST_CASE("equivocating votes count once per voter") {
  Cluster c;
  Payload pl = tx_payload(1);
  Digest d = pl.digest();
  ConsensusOutput out;
  c.eng(0).propose(pl, 1, out);
  // Deliver the pre-prepare only to the leader itself; members stay silent.
  for (auto& s : out.sends) {
    if (s.to == 0) {
      ConsensusOutput o2;
      c.eng(0).handle(s.msg, 0, 1, o2);
      // Leader's own prepare vote loops back.
      for (auto& s2 : o2.sends) {
        if (s2.to == 0) {
          ConsensusOutput o3;
          c.eng(0).handle(s2.msg, 0, 1, o3);
          CHECK(o3.sends.empty());  // one vote is no quorum
        }
      }
    }
  }
  auto vote = [&](PeerId from, Digest digest) {
    VoteMsg v;
    v.shard = 0;
    v.seq = 0;
    v.view = 0;
    v.phase = VotePhase::Prepare;
    v.digest = digest;
    v.bit = true;
    ConsensusOutput o;
    c.eng(0).handle(ConsensusMsg{v}, from, 1, o);
    return o;
  };
  // Peer 3 equivocates: a bogus digest, then the real one. Only its first
  // vote counts, so with the leader and peer 1 the real digest still has
  // two voters and no certificate goes out.
  auto o1 = vote(3, 0xdeadbeef);
  CHECK(o1.sends.empty());
  auto o2 = vote(3, d);
  CHECK(o2.sends.empty());
  auto o3 = vote(1, d);
  CHECK(o3.sends.empty());
  // A third distinct honest voter completes the quorum.
  auto o4 = vote(2, d);
  REQUIRE_FALSE(o4.sends.empty());
  bool saw_cert = false;
  for (auto& s : o4.sends) {
    if (auto* cert = std::get_if<CertMsg>(&s.msg)) {
      saw_cert = true;
      CHECK(cert->phase == VotePhase::Prepare);
      CHECK(cert->digest == d);
      // The equivocator is not among the listed voters.
      CHECK(cert->voters == std::vector<PeerId>{0, 1, 2});
    }
  }
  CHECK(saw_cert);
}

TEST_CASE("silent leader with pending work is replaced") {
  Cluster c;
  c.crashed.insert(0);
  for (PeerId p : {1, 2, 3}) c.eng(p).set_has_pending(true);
  int round = 1;
  for (; round < 20 && c.eng(1).view() == 0; ++round) {
    c.tick_all(round);
    c.pump(round);
  }
  for (PeerId p : {1, 2, 3}) {
    CHECK(c.eng(p).view() == 1);
    CHECK(c.eng(p).leader() == 1);
  }
  // The new leader can decide proposals without the crashed peer.
  Payload pl = tx_payload(9);
  c.propose(1, pl, round);
  c.pump(round);
  for (PeerId p : {1, 2, 3}) {
    REQUIRE(c.decided[p].size() == 1);
    CHECK(c.decided[p][0].payload == pl);
  }
}

TEST_CASE("view change preserves a prepared value") {
  Cluster c;
  Payload pl = tx_payload(5);
  Digest d = pl.digest();
  ConsensusOutput out;
  c.eng(0).propose(pl, 1, out);
  c.absorb(0, out);
  // Let pre-prepares and prepare votes flow, then capture the prepare
  // certificate and deliver it to members 1 and 2 only, so they lock.
  std::vector<std::tuple<PeerId, PeerId, ConsensusMsg>> stash;
  while (!c.wire.empty()) {
    auto [from, to, msg] = c.wire.front();
    c.wire.pop_front();
    bool is_cert = std::holds_alternative<CertMsg>(msg);
    bool is_commit_vote =
        std::holds_alternative<VoteMsg>(msg) &&
        std::get<VoteMsg>(msg).phase == VotePhase::Commit;
    if (is_commit_vote) continue;  // never let commits reach the leader
    if (is_cert && to == 3) continue;
    ConsensusOutput o;
    c.eng(to).handle(msg, from, 1, o);
    c.absorb(to, o);
  }
  for (PeerId p : c.member_ids) CHECK(c.decided[p].empty());

  // Leader crashes; the rest time out and move to view 1.
  c.crashed.insert(0);
  c.wire.clear();
  int round = 2;
  for (; round < 20 && c.eng(2).view() == 0; ++round) {
    c.tick_all(round);
    c.pump(round);
  }
  REQUIRE(c.eng(1).view() == 1);
  c.pump(round);
  // The locked value was re-proposed by the new leader and decides.
  for (PeerId p : {1, 2, 3}) {
    REQUIRE(c.decided[p].size() == 1);
    CHECK(c.decided[p][0].payload.digest() == d);
    CHECK(c.decided[p][0].seq == 0);
    CHECK(c.decided[p][0].view == 1);
  }
}

TEST_CASE("verdict decides true once a quorum holds receipts") {
  Cluster c;
  Transaction tx{9, make_utxo_id(2, 4), 2, 0, 50, 60};
  Digest txd = tx.digest();
  for (PeerId p : {0, 1, 2}) c.verdict[{p, txd}] = true;
  // Peer 3 has no receipts and holds its vote; quorum forms without it.
  c.propose(0, verdict_payload(tx), 1);
  c.pump(1);
  for (PeerId p : c.member_ids) {
    REQUIRE(c.decided[p].size() == 1);
    CHECK(c.decided[p][0].bit);
  }
  CHECK_FALSE(c.eng(0).verdict_open(txd));
}

TEST_CASE("verdict without receipts decides false after the grace period") {
  Cluster c;
  Transaction tx{9, make_utxo_id(2, 4), 2, 0, 50, 60};
  c.propose(0, verdict_payload(tx), 1);
  c.pump(1);
  for (PeerId p : c.member_ids) CHECK(c.decided[p].empty());
  CHECK(c.eng(1).verdict_open(tx.digest()));
  for (int round = 2; round < 10; ++round) {
    c.tick_all(round);
    c.pump(round);
  }
  for (PeerId p : c.member_ids) {
    REQUIRE(c.decided[p].size() == 1);
    CHECK_FALSE(c.decided[p][0].bit);
    CHECK(c.decided[p][0].payload == verdict_payload(tx));
  }
}

TEST_CASE("late receipts release a held verdict vote") {
  Cluster c;
  Transaction tx{9, make_utxo_id(2, 4), 2, 0, 50, 60};
  Digest txd = tx.digest();
  for (PeerId p : {0, 1}) c.verdict[{p, txd}] = true;
  c.propose(0, verdict_payload(tx), 1);
  c.pump(1);
  for (PeerId p : c.member_ids) CHECK(c.decided[p].empty());
  // Receipts reach peer 2 before the grace period expires.
  c.verdict[{2, txd}] = true;
  ConsensusOutput out;
  c.eng(2).verdict_changed(txd, 2, out);
  c.absorb(2, out);
  c.pump(2);
  for (PeerId p : c.member_ids) {
    REQUIRE(c.decided[p].size() == 1);
    CHECK(c.decided[p][0].bit);
  }
}

TEST_CASE("idle leader heartbeats suppress view changes") {
  Cluster c;
  for (PeerId p : c.member_ids) c.eng(p).set_has_pending(true);
  for (int round = 1; round < 30; ++round) {
    c.tick_all(round);
    c.pump(round);
  }
  for (PeerId p : c.member_ids) CHECK(c.eng(p).view() == 0);
}
