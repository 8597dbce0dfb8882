#include "smartshards/wire.hpp"

namespace smartshards {

namespace {

// Kind tags: consensus sub-kinds 0..4, application kinds from 5.
struct KindVisitor {
  int operator()(const ConsensusMsg& m) const {
    return static_cast<int>(m.index());
  }
  int operator()(const TxSubmit&) const { return 5; }
  int operator()(const TxRoute&) const { return 6; }
  int operator()(const MembershipReply&) const { return 7; }
  int operator()(const TxConfirm&) const { return 8; }
  int operator()(const ProposalForward&) const { return 9; }
  int operator()(const TransferMsg&) const { return 10; }
  int operator()(const JoinRequest&) const { return 11; }
  int operator()(const JoinReceipt&) const { return 12; }
  int operator()(const LeaveReceipt&) const { return 13; }
  int operator()(const PlainMembership&) const { return 14; }
  int operator()(const SmsReject&) const { return 15; }
};

struct DigestVisitor {
  Digest operator()(const ConsensusMsg& m) const {
    return std::visit(
        [](const auto& c) -> Digest {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, PrePrepareMsg>) {
            return c.payload.digest();
          } else if constexpr (std::is_same_v<T, VoteMsg>) {
            return c.digest;
          } else if constexpr (std::is_same_v<T, CertMsg>) {
            return c.digest;
          } else {
            return 0;
          }
        },
        m);
  }
  Digest operator()(const TxSubmit& m) const { return m.tx.digest(); }
  Digest operator()(const TxRoute& m) const { return m.tx.digest(); }
  Digest operator()(const MembershipReply& m) const { return m.tx_digest; }
  Digest operator()(const TxConfirm& m) const { return m.tx.digest(); }
  Digest operator()(const ProposalForward& m) const {
    return item_digest(m.item);
  }
  Digest operator()(const TransferMsg& m) const { return m.tx.digest(); }
  Digest operator()(const JoinRequest&) const { return 0; }
  Digest operator()(const JoinReceipt& m) const {
    return m.ledger ? m.ledger->digest() : 0;
  }
  Digest operator()(const LeaveReceipt&) const { return 0; }
  Digest operator()(const PlainMembership&) const { return 0; }
  Digest operator()(const SmsReject& m) const { return m.tx_digest; }
};

}  // namespace

int message_kind(const Message& m) { return std::visit(KindVisitor{}, m); }

const char* message_kind_name(int kind) {
  switch (kind) {
    case 0: return "preprepare";
    case 1: return "vote";
    case 2: return "cert";
    case 3: return "viewchange";
    case 4: return "heartbeat";
    case 5: return "tx_submit";
    case 6: return "tx_route";
    case 7: return "members";
    case 8: return "tx_confirm";
    case 9: return "forward";
    case 10: return "transfer";
    case 11: return "join_request";
    case 12: return "join_receipt";
    case 13: return "leave_receipt";
    case 14: return "plain_membership";
    case 15: return "sms_reject";
    default: return "unknown";
  }
}

Digest message_digest(const Message& m) { return std::visit(DigestVisitor{}, m); }

}  // namespace smartshards
