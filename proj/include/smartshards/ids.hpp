#pragma once

#include <cstdint>
#include <string_view>

namespace smartshards {

using PeerId = int32_t;
using ShardId = int32_t;
using WalletId = int32_t;
using ClientId = int32_t;
using UtxoId = int64_t;
using Digest = uint64_t;

// Trace actor ids: peers are >= 0, service actors are negative.
inline constexpr int32_t kActorSms = -1;
inline constexpr ClientId kNoClient = -1;

// Clients appear in traces as -100 - client_id so they never collide with peers.
inline int32_t client_actor(ClientId c) { return -100 - c; }
inline bool is_client_actor(int32_t a) { return a <= -100; }
inline ClientId client_of_actor(int32_t a) { return -100 - a; }

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline uint64_t hash_combine(uint64_t h, uint64_t v) {
  return mix64(h ^ (v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2)));
}

// Output ids pack (shard, ordinal) so shards never mint colliding ids.
inline UtxoId make_utxo_id(ShardId shard, int64_t ordinal) {
  return (static_cast<int64_t>(shard) << 40) | ordinal;
}
inline ShardId utxo_home_shard(UtxoId id) { return static_cast<ShardId>(id >> 40); }

}  // namespace smartshards
