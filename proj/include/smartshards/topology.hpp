#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "smartshards/ids.hpp"

namespace smartshards {

// Peers per network when every unordered shard pair overlaps in `overlap`
// peers and every peer sits in exactly two shards: s*(s-1)*x/2.
int64_t network_size(int shard_count, int overlap);

// Peers per shard: x*(s-1).
int64_t shard_size(int shard_count, int overlap);

// Largest f tolerated by a shard's consensus: biggest f with 3f < shard size.
int64_t fault_estimate(int shard_count, int overlap);

// Faults tolerated inside one overlap before transfers can be forged:
// floor(x/2 - 1), clamped at zero.
int overlap_fault_bound(int overlap);

// Initial placement: peer ids are dealt in unordered-pair order so each pair
// of shards shares exactly `overlap` peers.
struct InitialTopology {
  int shard_count = 0;
  int overlap = 0;
  int64_t peer_count = 0;
  // peer_shards[p] = the two shards of peer p, lower id first.
  std::vector<std::pair<ShardId, ShardId>> peer_shards;
};

InitialTopology build_topology(int shard_count, int overlap);

}  // namespace smartshards
