#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "smartshards/payload.hpp"

namespace smartshards {

// Leader-aggregated PBFT. The leader broadcasts the proposal, members send
// their phase votes back to it, and the leader broadcasts a certificate
// listing the voters once 2f+1 matching votes arrive. Verdict instances add
// a boolean to every vote so members can endorse or reject an inbound
// transfer based on their own receipt count.

enum class VotePhase : uint8_t { Prepare, Commit };

struct PrePrepareMsg {
  ShardId shard = -1;
  int64_t seq = 0;
  int view = 0;
  int epoch = 0;
  Payload payload;
};

struct VoteMsg {
  ShardId shard = -1;
  int64_t seq = 0;
  int view = 0;
  VotePhase phase = VotePhase::Prepare;
  Digest digest = 0;
  bool bit = true;
};

struct CertMsg {
  ShardId shard = -1;
  int64_t seq = 0;
  int view = 0;
  VotePhase phase = VotePhase::Prepare;
  Digest digest = 0;
  bool bit = true;
  std::vector<PeerId> voters;
  // Commit certificates carry the payload so members that missed the
  // proposal can still decide.
  std::optional<Payload> payload;
};

struct ViewChangeMsg {
  ShardId shard = -1;
  int proposed_view = 0;
  // Prepared state the voter carries into the new view, per open instance.
  struct Lock {
    int64_t seq = 0;
    int epoch = 0;
    int lock_view = -1;  // -1: payload known but never prepared
    Digest digest = 0;
    bool bit = true;
    std::optional<Payload> payload;
  };
  std::vector<Lock> locks;
};

struct HeartbeatMsg {
  ShardId shard = -1;
  int view = 0;
};

using ConsensusMsg =
    std::variant<PrePrepareMsg, VoteMsg, CertMsg, ViewChangeMsg, HeartbeatMsg>;

ShardId consensus_shard(const ConsensusMsg& m);

struct ConsensusParams {
  int pipeline_depth = 2;
  int view_timeout = 10;      // rounds without progress before a view change
  int verdict_grace = 4;      // rounds a verdict vote waits for receipts
  int heartbeat_interval = 4; // idle-leader beacon period
};

struct ConsensusDecision {
  int64_t seq = 0;
  Payload payload;
  bool bit = true;
  int view = 0;
};

struct ConsensusSend {
  PeerId to = -1;
  ConsensusMsg msg;
};

struct ConsensusOutput {
  std::vector<ConsensusSend> sends;
  std::vector<ConsensusDecision> decisions;
  // Protocol violations observed (non-leader proposal, non-member vote).
  std::vector<std::string> violations;
  bool view_adopted = false;
};

// Callbacks into the owning peer.
class ConsensusEnv {
 public:
  virtual ~ConsensusEnv() = default;
  virtual const std::vector<PeerId>& members_at(ShardId shard, int epoch) = 0;
  virtual int current_epoch(ShardId shard) = 0;
  // Current receipt-quorum input for a transfer under decision.
  virtual bool verdict_input(ShardId shard, const Transaction& tx) = 0;
};

class ShardConsensus {
 public:
  ShardConsensus(PeerId self, ShardId shard, const ConsensusParams& params,
                 ConsensusEnv* env);

  ShardId shard() const { return shard_; }
  int view() const { return view_; }
  PeerId leader_of(int view) const;
  PeerId leader() const { return leader_of(view_); }
  bool is_leader() const { return leader() == self_; }
  int open_count() const;
  bool has_free_slot() const { return open_count() < params_.pipeline_depth; }
  // True while an undecided instance deciding this transfer exists.
  bool verdict_open(Digest tx_digest) const;

  int64_t propose(const Payload& p, int round, ConsensusOutput& out);
  void handle(const ConsensusMsg& m, PeerId from, int round,
              ConsensusOutput& out);
  void tick(int round, ConsensusOutput& out);
  // Receipts for this transfer changed; release a held verdict vote.
  void verdict_changed(Digest tx_digest, int round, ConsensusOutput& out);
  // The peer has work queued for the leader; silence then triggers a view
  // change even with no open instance.
  void set_has_pending(bool pending) { has_pending_ = pending; }
  // The peer executed a membership record; replay proposals that arrived
  // stamped with the new epoch.
  void epoch_advanced(int round, ConsensusOutput& out);
  // Joiner initialisation from an adopted state snapshot: start participating
  // at this sequence number and view, treating `round` as fresh progress.
  void bootstrap(int64_t next_seq, int view, int round);

 private:
  struct ViewState {
    std::optional<Digest> accepted;  // pre-prepare accepted in this view
    bool prepare_voted = false;
    bool commit_voted = false;
    bool prepare_cert_sent = false;
    bool commit_cert_sent = false;
    std::map<std::pair<Digest, bool>, std::set<PeerId>> prepares;
    std::map<std::pair<Digest, bool>, std::set<PeerId>> commits;
    std::set<PeerId> prepare_voters;
    std::set<PeerId> commit_voters;
  };
  struct Instance {
    int64_t seq = 0;
    int epoch = 0;
    bool is_verdict = false;
    Transaction verdict_tx;
    std::map<int, ViewState> views;
    std::map<Digest, Payload> known_payloads;
    int lock_view = -1;
    Digest lock_digest = 0;
    bool lock_bit = true;
    bool decided = false;
    int last_progress = 0;
    int hold_since = -1;  // verdict vote waiting for local receipts
    std::optional<std::pair<Digest, bool>> pending_decide;
    int pending_decide_view = 0;
    std::vector<std::pair<PeerId, ConsensusMsg>> future;  // later-view buffer
  };

  const std::vector<PeerId>& members(int epoch);
  int64_t quorum(int epoch);
  int64_t fault_cap(int epoch);
  Instance& instance(int64_t seq, int epoch);
  void broadcast(const ConsensusMsg& m, int epoch, ConsensusOutput& out);
  void send_to(PeerId to, const ConsensusMsg& m, ConsensusOutput& out);
  void accept_preprepare(Instance& inst, const PrePrepareMsg& m, int round,
                         ConsensusOutput& out);
  void maybe_complete_pending(Instance& inst, ConsensusOutput& out);
  void cast_prepare(Instance& inst, int view, Digest digest, bool bit,
                    int round, ConsensusOutput& out);
  void collect_vote(Instance& inst, const VoteMsg& m, PeerId from, int round,
                    ConsensusOutput& out);
  void handle_cert(Instance& inst, const CertMsg& m, PeerId from, int round,
                   ConsensusOutput& out);
  void decide(Instance& inst, Digest digest, bool bit, int view,
              ConsensusOutput& out);
  void handle_view_change(const ViewChangeMsg& m, PeerId from, int round,
                          ConsensusOutput& out);
  void cast_view_change(int target_view, int round, ConsensusOutput& out);
  void adopt_view(int v, int round, ConsensusOutput& out);
  void note_leader_activity(PeerId from, int view, int round);

  PeerId self_;
  ShardId shard_;
  ConsensusParams params_;
  ConsensusEnv* env_;
  int view_ = 0;
  int64_t next_seq_ = 0;
  int64_t bootstrap_floor_ = 0;
  std::map<int64_t, Instance> instances_;
  // view -> sender -> carried locks
  std::map<int, std::map<PeerId, std::vector<ViewChangeMsg::Lock>>> vc_votes_;
  std::set<int> vc_voted_;
  int last_leader_activity_ = 0;
  int last_leader_broadcast_ = -1000;  // as leader, for heartbeat pacing
  bool has_pending_ = false;
  // Messages stamped with a membership epoch we have not executed yet.
  std::vector<std::pair<PeerId, ConsensusMsg>> epoch_buffer_;
};

}  // namespace smartshards
