#include "smartshards/membership.hpp"

#include <algorithm>
#include <stdexcept>

namespace smartshards {

void MembershipLog::set_genesis(
    const std::vector<std::pair<PeerId, ShardId>>& members) {
  if (!events_.empty() || !members_by_epoch_.empty())
    throw std::logic_error("genesis set on a non-empty membership log");
  std::vector<PeerId> ids;
  for (const auto& [p, other] : members) {
    ids.push_back(p);
    counters_[p] = other;
    chain_ = hash_combine(chain_, hash_combine(static_cast<uint64_t>(p),
                                               static_cast<uint64_t>(other)));
  }
  std::sort(ids.begin(), ids.end());
  members_by_epoch_.push_back(std::move(ids));
}

void MembershipLog::append(const Event& e) {
  if (members_by_epoch_.empty())
    throw std::logic_error("membership log used before genesis");
  events_.push_back(e);
  std::vector<PeerId> next = members_by_epoch_.back();
  switch (e.kind) {
    case Event::Kind::Join:
      if (!std::binary_search(next.begin(), next.end(), e.peer)) {
        next.insert(std::upper_bound(next.begin(), next.end(), e.peer),
                    e.peer);
      }
      counters_[e.peer] = e.other_shard;
      break;
    case Event::Kind::Leave: {
      auto it = std::lower_bound(next.begin(), next.end(), e.peer);
      if (it != next.end() && *it == e.peer) next.erase(it);
      counters_.erase(e.peer);
      break;
    }
    case Event::Kind::Update:
      counters_[e.peer] = e.other_shard;
      break;
  }
  members_by_epoch_.push_back(std::move(next));
  Digest h = fnv1a("mev");
  h = hash_combine(h, static_cast<uint64_t>(e.kind));
  h = hash_combine(h, static_cast<uint64_t>(e.peer));
  h = hash_combine(h, static_cast<uint64_t>(e.other_shard));
  chain_ = hash_combine(chain_, h);
}

const std::vector<PeerId>& MembershipLog::members_at(int epoch) const {
  if (epoch < 0 || epoch >= static_cast<int>(members_by_epoch_.size()))
    throw std::out_of_range("membership epoch " + std::to_string(epoch));
  return members_by_epoch_[static_cast<size_t>(epoch)];
}

bool MembershipLog::is_member(PeerId p) const {
  const auto& m = members();
  return std::binary_search(m.begin(), m.end(), p);
}

ShardId MembershipLog::counter_shard(PeerId p) const {
  auto it = counters_.find(p);
  return it == counters_.end() ? -1 : it->second;
}

}  // namespace smartshards
