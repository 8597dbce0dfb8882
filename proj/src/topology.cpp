#include "smartshards/topology.hpp"

#include <stdexcept>
#include <string>

namespace smartshards {

namespace {
void check_params(int shard_count, int overlap) {
  if (shard_count < 2)
    throw std::invalid_argument("shard count must be at least 2, got " +
                                std::to_string(shard_count));
  if (overlap < 1)
    throw std::invalid_argument("overlap must be at least 1, got " +
                                std::to_string(overlap));
}
}  // namespace

int64_t network_size(int shard_count, int overlap) {
  check_params(shard_count, overlap);
  int64_t s = shard_count;
  return s * (s - 1) * overlap / 2;
}

int64_t shard_size(int shard_count, int overlap) {
  check_params(shard_count, overlap);
  return static_cast<int64_t>(overlap) * (shard_count - 1);
}

int64_t fault_estimate(int shard_count, int overlap) {
  int64_t z = shard_size(shard_count, overlap);
  return (z - 1) / 3;
}

int overlap_fault_bound(int overlap) {
  if (overlap < 1)
    throw std::invalid_argument("overlap must be at least 1, got " +
                                std::to_string(overlap));
  int bound = overlap / 2 - 1;
  return bound < 0 ? 0 : bound;
}

InitialTopology build_topology(int shard_count, int overlap) {
  check_params(shard_count, overlap);
  InitialTopology topo;
  topo.shard_count = shard_count;
  topo.overlap = overlap;
  topo.peer_count = network_size(shard_count, overlap);
  topo.peer_shards.reserve(static_cast<size_t>(topo.peer_count));
  for (ShardId a = 0; a < shard_count; ++a)
    for (ShardId b = a + 1; b < shard_count; ++b)
      for (int k = 0; k < overlap; ++k) topo.peer_shards.emplace_back(a, b);
  return topo;
}

}  // namespace smartshards
