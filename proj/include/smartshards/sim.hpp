#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "smartshards/config.hpp"
#include "smartshards/consensus.hpp"
#include "smartshards/ledger.hpp"
#include "smartshards/membership.hpp"
#include "smartshards/rng.hpp"
#include "smartshards/topology.hpp"
#include "smartshards/trace.hpp"
#include "smartshards/wire.hpp"

namespace smartshards {

// ---------------------------------------------------------------------------
// Round-synchronous message transport. Per-channel FIFO delivery with a
// uniformly random delay in [1, maxDelay]; the monotone clamp that preserves
// FIFO order never pushes a delivery past sender_round + maxDelay. Messages
// whose sender or receiver has departed are dropped (with a drop event) at
// delivery time.
class Network {
 public:
  Network(uint64_t seed, int max_delay, TraceSink& sink, bool trace_wire);

  void set_alive_probe(std::function<bool(int32_t)> probe) {
    alive_ = std::move(probe);
  }

  void send(int32_t from, int32_t to, Message msg, int round);

  struct Delivery {
    int32_t from = 0;
    int32_t to = 0;
    int send_round = 0;
    int64_t chan_seq = 0;
    Message msg;
  };
  // Removes and returns everything due at `round`, in send order.
  std::vector<Delivery> take(int round);

  int64_t total_sends() const { return total_sends_; }
  bool idle() const { return pending_.empty(); }
  int next_due_round() const;

  // Surgical removal of in-flight messages (lifecycle reshaping invalidates
  // state snapshots already on the wire). Each removal emits a drop event
  // with reason 3. Returns the number purged.
  int64_t purge(int round, const std::function<bool(int32_t, int32_t,
                                                    const Message&)>& pred);

 private:
  struct InFlight {
    int32_t from = 0;
    int32_t to = 0;
    int send_round = 0;
    int64_t chan_seq = 0;
    Message msg;
  };

  RngStream rng_;
  int max_delay_;
  TraceSink& sink_;
  bool trace_wire_;
  std::function<bool(int32_t)> alive_;
  std::map<std::pair<int32_t, int32_t>, int> chan_last_due_;
  std::map<std::pair<int32_t, int32_t>, int64_t> chan_next_seq_;
  std::map<int, std::vector<InFlight>> pending_;  // due round -> deliveries
  int64_t total_sends_ = 0;
};

// ---------------------------------------------------------------------------
// Callbacks from actors into the simulation for instant-oracle bookkeeping.
class SimHooks {
 public:
  virtual ~SimHooks() = default;
  // A replica executed a membership record (first executor updates the
  // directory; later executors are deduplicated by epoch).
  virtual void membership_executed(ShardId shard, int epoch,
                                   const MembershipLog::Event& ev,
                                   PeerId executor) = 0;
  // A replica executed a batch spend; reports the parked output ids and the
  // wallet they were minted into.
  virtual void multi_executed(uint64_t multi_id,
                              const std::vector<UtxoId>& outputs,
                              WalletId wallet, ShardId shard,
                              PeerId executor) = 0;
};

// ---------------------------------------------------------------------------
// Membership directory and router. State updates are instantaneous: the
// moment the first replica executes a membership record the directory
// reflects it. Wallet lookups route client submissions to the wallet's
// home shard.
class SmsOracle {
 public:
  SmsOracle(const SimConfig& cfg, TraceSink& sink);

  void genesis_shard(ShardId shard, const std::set<PeerId>& members);
  void genesis_wallet(WalletId wallet, ShardId home);

  void handle(int32_t from, const Message& m, int round, Network& net);

  // Instant directory update driven by the first replica to execute a
  // membership record; (shard, epoch) pairs already applied are ignored.
  // Returns true when this call advanced the directory.
  bool membership_executed(ShardId shard, int epoch,
                           const MembershipLog::Event& ev, int round);

  // --- directory reads -----------------------------------------------------
  const std::map<ShardId, std::set<PeerId>>& members() const {
    return members_;
  }
  const std::set<PeerId>& members_of(ShardId shard) const;
  bool wallet_known(WalletId w) const { return wallet_home_.count(w) != 0; }
  ShardId wallet_home(WalletId w) const;
  const std::vector<WalletId>& wallet_list() const { return wallet_list_; }
  const std::map<WalletId, ShardId>& wallet_map() const {
    return wallet_home_;
  }
  int64_t live_peer_count() const;
  int shard_count() const { return static_cast<int>(members_.size()); }
  double mean_overlap() const;
  int64_t f_of(ShardId shard) const;
  // Join placement chosen for a peer, if any was assigned yet.
  const std::vector<ShardId>* assignment_of(PeerId p) const;

  // --- lifecycle surgery mutators (driven by the simulation) ---------------
  void surgery_add_shard(ShardId shard, const std::set<PeerId>& members);
  void surgery_remove_shard(ShardId shard);
  void surgery_move_peer(PeerId p, ShardId from, ShardId to);
  void surgery_move_wallet(WalletId w, ShardId to);
  void surgery_add_wallet(WalletId w, ShardId home);
  void surgery_set_epoch(ShardId shard, int epoch);
  void surgery_update_assignment(PeerId p, const std::vector<ShardId>& shards);
  void forget_assignment(PeerId p);

 private:
  std::vector<ShardId> place_join(PeerId p);

  const SimConfig& cfg_;
  TraceSink& sink_;
  RngStream place_rng_;
  std::map<ShardId, std::set<PeerId>> members_;
  std::map<ShardId, int> applied_epoch_;
  std::map<WalletId, ShardId> wallet_home_;
  std::vector<WalletId> wallet_list_;
  std::map<PeerId, std::vector<ShardId>> assignment_;
};

// ---------------------------------------------------------------------------
// External transaction issuer. Tracks owned outputs, keeps at most one
// self-driven transfer in flight, accumulates membership sets and
// confirmations per submission, and accepts a transaction once more than f
// members of a single advertised set confirmed it.
class ClientActor {
 public:
  ClientActor(ClientId id, const SimConfig& cfg, uint64_t seed,
              TraceSink& sink);

  void grant(UtxoId utxo, ShardId shard, WalletId wallet);
  // Driver-side input locking: a reserved output is excluded from
  // self-driven spending until released or forgotten.
  void reserve(UtxoId u) { committed_.insert(u); }
  void release(UtxoId u) { committed_.erase(u); }
  // The output was consumed outside a tracked submission (batch spend).
  void forget(UtxoId u) {
    owned_.erase(u);
    committed_.erase(u);
  }

  void handle(int32_t from, const Message& m, int round, Network& net);
  void tick(int round, bool allow_new, bool allow_resend, Network& net,
            const SmsOracle& sms);

  // Driver entry: submit this exact transaction now. Flavors label trace
  // submit events: 0 self-driven, 1/2 conflicting pair, 3 consolidation,
  // 4 distribution.
  Digest submit_specific(const Transaction& tx, int flavor, int round,
                         Network& net);

  struct SetInfo {
    std::vector<PeerId> members;
    int64_t f = 0;
  };
  struct PendingTx {
    Transaction tx;
    int submit_round = 0;
    int last_send = -1000000;
    int attempts = 0;
    int flavor = 0;
    bool confirmed = false;
    bool rejected = false;
    int confirm_round = -1;
    UtxoId confirmed_output = 0;
    std::vector<SetInfo> sets;
    std::set<PeerId> confirms;
    std::map<UtxoId, int> output_votes;
  };

  ClientId id() const { return id_; }
  const std::map<Digest, PendingTx>& pending() const { return pending_; }
  const PendingTx* find_pending(Digest d) const;
  const std::map<UtxoId, std::pair<ShardId, WalletId>>& owned() const {
    return owned_;
  }
  // Owned outputs not yet committed to an in-flight submission.
  std::vector<UtxoId> spendable() const;
  int64_t confirmed_count() const { return confirmed_count_; }

 private:
  void send_submit(PendingTx& p, Digest d, int round, Network& net,
                   bool resend);
  void try_confirm(PendingTx& p, Digest d, int round);

  ClientId id_;
  const SimConfig& cfg_;
  RngStream rng_;
  TraceSink& sink_;
  std::map<UtxoId, std::pair<ShardId, WalletId>> owned_;
  std::set<UtxoId> committed_;
  std::map<Digest, PendingTx> pending_;
  int64_t confirmed_count_ = 0;
};

// ---------------------------------------------------------------------------
// A peer replica. In sharded mode it holds two shard contexts (ledger,
// membership log, consensus engine); in plain mode a single committee
// context plus a network-wide membership map. Also implements the joiner
// and leaver handshakes.
class PeerActor : public ConsensusEnv {
 public:
  PeerActor(PeerId id, const SimConfig& cfg, uint64_t seed, TraceSink& sink,
            SimHooks* hooks);
  ~PeerActor() override;

  // --- genesis / lifecycle wiring ------------------------------------------
  // Creates a context seeded with this genesis membership.
  void genesis_context(ShardId shard, ShardId other_seat,
                       const std::vector<std::pair<PeerId, ShardId>>& members);
  // Creates a context from an oracle-copied snapshot (lifecycle reseat).
  void adopt_context(ShardId shard, const Ledger& ledger,
                     const MembershipLog& log, int64_t next_seq, int view,
                     int round);
  void drop_context(ShardId shard);
  void set_behavior(FaultBehavior b) { behavior_ = b; }
  FaultBehavior behavior() const { return behavior_; }
  void set_plain_members(const std::map<ShardId, std::set<PeerId>>& m);

  void start_join(int round, Network& net);
  void start_leave(int round, Network& net);
  // A previously departed peer re-enters as a fresh joiner (eviction rejoin).
  void restart_as_joiner(int round, Network& net);

  void handle(int32_t from, const Message& m, int round, Network& net);
  void tick(int round, Network& net);

  // Coordinated forged-transfer wave: claim this never-executed transfer
  // toward every member of its target shard.
  void forge_claim(const Transaction& tx, int round, Network& net);

  // --- state probes ---------------------------------------------------------
  PeerId id() const { return id_; }
  bool active() const { return active_; }
  bool departed() const { return departed_; }
  bool joining() const { return joining_; }
  bool leaving() const { return leaving_; }
  std::vector<ShardId> shards() const;
  bool in_shard(ShardId s) const;
  const Ledger* ledger(ShardId s) const;
  const MembershipLog* memlog(ShardId s) const;
  Ledger* mutable_ledger(ShardId s);
  MembershipLog* mutable_memlog(ShardId s);
  const ShardConsensus* engine(ShardId s) const;
  // Leader of the current view of a context, or -1.
  PeerId current_leader(ShardId s) const;
  int64_t exec_next(ShardId s) const;
  // Force-sync during lifecycle surgery: replaces ledger + log content.
  void surgery_sync(ShardId shard, const Ledger& ledger,
                    const MembershipLog& log);
  // Surgery dropped receipts/verdicts that reference a destroyed shard.
  void surgery_forget_shard_refs(ShardId destroyed);
  // A shard this joiner was adopting into was reshaped; its receipt
  // snapshots no longer match any live replica.
  void surgery_clear_join_buckets(ShardId shard);
  // The join assignment itself died (assigned shard destroyed): drop all
  // join progress and re-request placement on the next resend.
  void surgery_reset_join();
  // Mid-join slot swap: assignment slot `from` was destroyed and the joiner
  // was seated into `to` by surgery (adopt_context for `to` runs first).
  void surgery_replace_join_slot(ShardId from, ShardId to, int round,
                                 Network& net);
  // The canonical membership produced by surgery no longer lists this peer
  // in `shard` (its leave already executed there): drop the seat and, if no
  // other seat is pending, finish the departure.
  void surgery_expel(ShardId shard, int round);

  // ConsensusEnv
  const std::vector<PeerId>& members_at(ShardId shard, int epoch) override;
  int current_epoch(ShardId shard) override;
  bool verdict_input(ShardId shard, const Transaction& tx) override;

 private:
  struct Ctx {
    ShardId shard = -1;
    ShardId other_seat = -1;
    Ledger ledger;
    MembershipLog log;
    std::unique_ptr<ShardConsensus> engine;
    std::map<int64_t, ConsensusDecision> ready;
    int64_t exec_next = 0;
    // tx digest -> (transfer, distinct vouching senders)
    std::map<Digest, std::pair<Transaction, std::set<PeerId>>> receipts;
    // transfers whose single verdict instance was opened or decided here
    std::set<Digest> verdict_closed;
    // client/membership items awaiting a decision, FIFO
    std::map<Digest, PayloadItem> queue;
    std::deque<Digest> queue_order;
    std::set<Digest> proposed_by_me;
    // seq -> digests batched into that slot, released when it executes
    std::map<int64_t, std::vector<Digest>> proposed_items;
    std::set<Digest> forwarded;
    int forwarded_view = 0;
    // Seq of a join this leader proposed and has not executed yet. While it
    // is pending, no further slots are opened: a slot proposed concurrently
    // would be pinned to the pre-join epoch and its broadcasts would never
    // reach the joiner, leaving a permanent hole in its execution order.
    int64_t join_fence = -1;
    std::map<int64_t, std::vector<UtxoId>> draw_inputs;
    std::set<UtxoId> draw_busy;
    // batch spends already executed here (admission dedup)
    std::set<uint64_t> multis_done;
    std::set<PeerId> leave_receipt_senders;
    int64_t leave_f = 0;
    bool leave_requested = false;
    bool leave_done = false;
    int last_leave_send = -1000000;
  };

  struct JoinShardState {
    std::vector<PeerId> expected;  // member set advertised by the directory
    int64_t f = 0;
    bool have_reply = false;
    bool item_sent = false;
    int last_item_send = -1000000;
    struct ReceiptKey {
      Digest ledger_digest = 0;
      Digest log_digest = 0;
      int64_t next_seq = 0;
      auto operator<=>(const ReceiptKey&) const = default;
    };
    struct ReceiptBucket {
      std::set<PeerId> senders;
      int max_view = 0;
      JoinReceipt sample;
    };
    std::map<ReceiptKey, ReceiptBucket> buckets;
    bool adopted = false;
  };

  Ctx* ctx(ShardId shard);
  const Ctx* ctx(ShardId shard) const;
  void handle_active(int32_t from, const Message& m, int round, Network& net);
  void handle_joining(int32_t from, const Message& m, int round, Network& net);
  void run_output(Ctx& c, ConsensusOutput& out, int round, Network& net);
  void send_consensus(Ctx& c, PeerId to, const ConsensusMsg& m, int round,
                      Network& net);
  void execute_ready(Ctx& c, int round, Network& net);
  void execute_item(Ctx& c, const PayloadItem& item, bool bit, int64_t seq,
                    int view, int round, Network& net);
  void enqueue_item(Ctx& c, const PayloadItem& item);
  void leader_duties(Ctx& c, int round, Network& net);
  void forward_queue(Ctx& c, int round, Network& net);
  void on_transfer(Ctx& c, const Transaction& tx, PeerId from, int round,
                   Network& net);
  int64_t transfer_threshold(const Ctx& c, const Transaction& tx) const;
  void confirm_to_client(const Transaction& tx, UtxoId output, ShardId shard,
                         int round, Network& net);
  void maybe_adopt(ShardId shard, int round, Network& net);
  void check_join_complete(int round, Network& net);
  void send_join_request(int round, Network& net);
  void send_leave_requests(int round, Network& net);
  void update_pending_flag(Ctx& c);
  std::vector<UtxoId> draw_candidates(const Ctx& c) const;

  PeerId id_;
  const SimConfig& cfg_;
  RngStream rng_;
  TraceSink& sink_;
  SimHooks* hooks_;
  FaultBehavior behavior_ = FaultBehavior::Correct;
  ConsensusParams params_;

  std::map<ShardId, Ctx> ctxs_;
  // plain mode: committee membership of the whole network
  std::map<ShardId, std::set<PeerId>> plain_members_;

  bool active_ = false;
  bool joining_ = false;
  bool leaving_ = false;
  bool departed_ = false;
  int join_attempts_ = 0;
  int last_join_send_ = -1000000;
  std::vector<ShardId> join_shards_;  // assignment learned from replies
  std::map<ShardId, JoinShardState> join_state_;
  std::map<ShardId, std::vector<std::pair<PeerId, Message>>> join_buffer_;
  // transfers I personally forged (votes on them are forced true)
  std::set<Digest> forged_;
  // directory wallet list snapshot for leader draws (owned by simulation)
  const SmsOracle* sms_view_ = nullptr;

 public:
  void set_sms_view(const SmsOracle* sms) { sms_view_ = sms; }
};

// ---------------------------------------------------------------------------
// Multi-transaction driver job (consolidate -> execute -> distribute).
struct MultiJob {
  enum class Phase {
    Setup,
    Consolidating,
    Executing,
    Distributing,
    Done,
    Aborted
  };
  uint64_t id = 0;
  ClientId client = kNoClient;
  Phase phase = Phase::Setup;
  std::vector<UtxoId> picked_inputs;
  ShardId cons_shard = -1;
  WalletId cons_wallet = -1;
  // input -> consolidation transfer digest (inputs already home map to 0)
  std::map<UtxoId, Digest> cons_txs;
  std::vector<UtxoId> spend_inputs;  // ids actually consumed by the batch
  MultiSpendItem item;
  Digest item_dig = 0;
  std::vector<UtxoId> parked;
  WalletId parked_wallet = -1;
  std::map<Digest, ClientId> dist_txs;
  Digest rival_digest = 0;
  bool abort_injected = false;
  int last_submit = -1000000;
  int started_round = 0;
};

// ---------------------------------------------------------------------------
// Whole-network round loop: transport, directory, peers, clients, churn,
// lifecycle reshaping, fault drivers, workload drivers, and drain.
class Simulation : public SimHooks {
 public:
  // `trace_wire` turns per-message send/deliver events on; sweeps run with
  // it off since wire events dominate trace volume.
  Simulation(const SimConfig& cfg, TraceSink& sink, bool trace_wire = true);
  ~Simulation() override;

  struct Result {
    bool completed = false;
    std::string abort_reason;
    int rounds_run = 0;
    int64_t total_sends = 0;
    int64_t violations = 0;
    int creates = 0;
    int destroys = 0;
    int forged_confirmations = 0;
  };

  Result run();
  // Single-step API used by tests.
  bool step();  // returns false once the horizon (incl. drain) is done
  int round() const { return round_; }
  int horizon() const;

  // --- oracle access for tests and checkers --------------------------------
  const SimConfig& config() const { return cfg_; }
  const SmsOracle& sms() const { return sms_; }
  Network& net() { return net_; }
  PeerActor* peer(PeerId p);
  const PeerActor* peer(PeerId p) const;
  ClientActor* client(ClientId c);
  const ClientActor* client(ClientId c) const;
  std::vector<PeerId> all_peer_ids() const;
  std::vector<ClientId> all_client_ids() const;
  std::vector<ShardId> shard_ids() const;
  // Active, non-faulty members of a shard.
  std::vector<PeerId> correct_members(ShardId shard) const;
  const std::vector<MultiJob>& multi_jobs() const { return multi_jobs_; }
  const std::set<Digest>& forged_digests() const { return forged_digests_; }
  int64_t genesis_outputs() const { return genesis_outputs_; }
  // Net outputs minted minus inputs consumed by executed batch spends.
  int64_t multi_delta() const { return multi_delta_; }

  // SimHooks
  void membership_executed(ShardId shard, int epoch,
                           const MembershipLog::Event& ev,
                           PeerId executor) override;
  void multi_executed(uint64_t multi_id, const std::vector<UtxoId>& outputs,
                      WalletId wallet, ShardId shard, PeerId executor) override;

 private:
  void setup();
  void setup_smart();
  void setup_plain();
  void seed_wallets(ShardId shard, const std::vector<PeerId>& members);
  void apply_fault_plan();
  void emit_headers();
  void dispatch(const Network::Delivery& d);
  void churn_tick();
  void spawn_joiner();
  void initiate_leave();
  void lifecycle_tick();
  void lifecycle_create();
  void lifecycle_destroy();
  struct Canonical {
    Ledger ledger;
    MembershipLog log;
    int64_t next_seq = 0;
  };
  // Longest correct replica state per live shard; empty when some shard has
  // no usable reference (surgery is skipped that round).
  std::map<ShardId, Canonical> capture_canonicals();
  // Pushes a canonical state onto every member replica of the shard and
  // invalidates mid-join receipt snapshots for it.
  void force_sync(ShardId shard, const Canonical& canon);
  void fault_tick();
  void double_spend_tick();
  void multi_tick();
  void start_multi_job(MultiJob& job);
  void roundstat();
  bool peer_alive(int32_t actor) const;
  PeerId fresh_peer_id();
  ClientActor* owner_client(ClientId c);
  // Longest-state correct member used as surgery reference, or -1.
  PeerId reference_member(ShardId shard) const;

  SimConfig cfg_;
  TraceSink& sink_;
  // Sits between the actors and the downstream sink to keep the running
  // violation and forged-confirmation counts without storing the stream.
  struct CountFilter final : public TraceSink {
    Simulation* sim = nullptr;
    void header(const std::string& key, const std::string& value) override;
    void event(const TraceEvent& e) override;
  } filter_;
  Network net_;
  SmsOracle sms_;
  std::map<PeerId, std::unique_ptr<PeerActor>> peers_;
  std::map<ClientId, std::unique_ptr<ClientActor>> clients_;
  RngStream churn_rng_;
  RngStream lifecycle_rng_;
  RngStream load_rng_;
  RngStream multi_rng_;
  bool trace_wire_ = true;
  int round_ = 0;
  PeerId next_peer_id_ = 0;
  WalletId next_wallet_id_ = 0;
  ShardId next_shard_id_ = 0;
  int64_t genesis_outputs_ = 0;
  int64_t multi_delta_ = 0;
  int64_t violations_ = 0;
  int creates_ = 0;
  int destroys_ = 0;
  int forged_confirmations_ = 0;
  std::vector<MultiJob> multi_jobs_;
  int multi_started_ = 0;
  std::set<Digest> forged_digests_;
  int forge_wave_ = 0;
  std::set<PeerId> evict_rejoin_;
  uint64_t ds_counter_ = 0;
};

}  // namespace smartshards
