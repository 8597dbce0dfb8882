#pragma once

#include <map>
#include <memory>
#include <vector>

#include "smartshards/ids.hpp"

namespace smartshards {

// Per-shard membership history. Epoch e is the state after applying the
// first e events to the genesis set, so the log replayed from a ledger copy
// reconstructs both the member list and every mate's counter shard.
class MembershipLog {
 public:
  struct Event {
    enum class Kind { Join, Leave, Update } kind = Kind::Join;
    PeerId peer = -1;
    // Counter shard carried by joins and by lifecycle reseats.
    ShardId other_shard = -1;
  };

  void set_genesis(const std::vector<std::pair<PeerId, ShardId>>& members);
  void append(const Event& e);

  int current_epoch() const { return static_cast<int>(events_.size()); }
  // Ordered member ids at an epoch. References stay valid until the next
  // append.
  const std::vector<PeerId>& members_at(int epoch) const;
  const std::vector<PeerId>& members() const {
    return members_at(current_epoch());
  }
  bool is_member(PeerId p) const;
  // Counter shard of a current mate, or -1 when unknown.
  ShardId counter_shard(PeerId p) const;
  const std::map<PeerId, ShardId>& counters() const { return counters_; }
  const std::vector<Event>& events() const { return events_; }

  Digest digest() const { return chain_; }

 private:
  std::vector<Event> events_;
  // members_by_epoch_[e] = ordered members at epoch e.
  std::vector<std::vector<PeerId>> members_by_epoch_;
  std::map<PeerId, ShardId> counters_;
  Digest chain_ = kFnvOffset;
};

}  // namespace smartshards
