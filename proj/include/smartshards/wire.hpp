#pragma once

#include <memory>
#include <string>

#include "smartshards/consensus.hpp"
#include "smartshards/ledger.hpp"
#include "smartshards/membership.hpp"
#include "smartshards/payload.hpp"

namespace smartshards {

// Client submission. Shard fields may be unset; the membership service fills
// them from its wallet map while routing.
struct TxSubmit {
  Transaction tx;
  bool resend = false;
};

// Routed submission, membership service to source-shard member.
struct TxRoute {
  Transaction tx;
};

// Membership service answer to a submission or join: the queried shard's
// member set and the tolerance threshold it advertises for that set.
struct MembershipReply {
  ShardId shard = -1;
  std::vector<PeerId> members;
  int64_t f = 0;
  // Transaction this reply routes, or 0 for join-assignment replies.
  Digest tx_digest = 0;
};

// Peer tells the client its transaction was appended.
struct TxConfirm {
  Transaction tx;
  UtxoId output = 0;
  ShardId shard = -1;
};

// Member hands a payload item to the shard leader for proposal.
struct ProposalForward {
  ShardId shard = -1;
  PayloadItem item;
};

// Overlap peer notifies a target-shard member of a source-side confirmation.
struct TransferMsg {
  Transaction tx;
};

// Joiner to membership service; resent until the join completes.
struct JoinRequest {
  PeerId peer = -1;
  int attempt = 0;
};

// Member to joiner after executing the join: full replica state.
struct JoinReceipt {
  ShardId shard = -1;
  int view = 0;
  // First consensus sequence number the joiner must participate in.
  int64_t next_seq = 0;
  std::shared_ptr<const Ledger> ledger;
  std::shared_ptr<const MembershipLog> log;
};

// Member to leaver after executing the leave.
struct LeaveReceipt {
  ShardId shard = -1;
};

// Plain mode: shard leader announces a confirmed membership event to every
// peer in the network.
struct PlainMembership {
  bool join = true;
  PeerId peer = -1;
  ShardId shard = -1;
};

// Membership service routing failure.
struct SmsReject {
  std::string reason;
  Digest tx_digest = 0;
};

using Message =
    std::variant<ConsensusMsg, TxSubmit, TxRoute, MembershipReply, TxConfirm,
                 ProposalForward, TransferMsg, JoinRequest, JoinReceipt,
                 LeaveReceipt, PlainMembership, SmsReject>;

// Compact kind tag used in trace events.
int message_kind(const Message& m);
const char* message_kind_name(int kind);
// Digest recorded on send/deliver events, when cheaply derivable.
Digest message_digest(const Message& m);

}  // namespace smartshards
