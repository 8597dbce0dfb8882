#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "smartshards/ledger.hpp"

namespace smartshards {

// Decision in the target shard on whether a cross-shard transfer backed by
// overlap receipts is appended. Members vote with their own receipt quorum.
struct VerdictItem {
  Transaction tx;
  bool operator==(const VerdictItem&) const = default;
};

struct JoinItem {
  PeerId peer = -1;
  ShardId shard = -1;
  // The joiner's second shard; mates record it as the counter shard.
  ShardId other_shard = -1;
  bool operator==(const JoinItem&) const = default;
};

struct LeaveItem {
  PeerId peer = -1;
  ShardId shard = -1;
  bool operator==(const LeaveItem&) const = default;
};

// Atomic multi-input multi-output spend executed in the consolidation shard
// once every input has been moved there.
struct MultiSpendItem {
  ClientId client = kNoClient;
  uint64_t multi_id = 0;
  std::vector<UtxoId> inputs;
  // Recipient client and final (shard, wallet) of each output.
  struct Out {
    ClientId recipient = kNoClient;
    ShardId shard = -1;
    WalletId wallet = -1;
    bool operator==(const Out&) const = default;
  };
  std::vector<Out> outputs;
  bool operator==(const MultiSpendItem&) const = default;
};

// Filler decided for a sequence slot whose original proposal was lost to a
// view change; executes as nothing.
struct NoOpItem {
  bool operator==(const NoOpItem&) const = default;
};

using PayloadItem =
    std::variant<Transaction, VerdictItem, JoinItem, LeaveItem, MultiSpendItem,
                 NoOpItem>;

Digest item_digest(const PayloadItem& item);

// Consensus proposal. Batching may pack several transactions or membership
// items together; verdict and multi-spend items always travel alone.
struct Payload {
  std::vector<PayloadItem> items;

  Digest digest() const;
  // The transfer under decision when this is a verdict proposal.
  const Transaction* verdict_tx() const;
  bool operator==(const Payload&) const = default;
};

}  // namespace smartshards
