#include <doctest.h>

#include <map>
#include <set>
#include <stdexcept>

#include "smartshards/topology.hpp"

using namespace smartshards;

TEST_CASE("reference sizing: 5 shards, overlap 10") {
  CHECK(network_size(5, 10) == 100);
  CHECK(shard_size(5, 10) == 40);
  CHECK(fault_estimate(5, 10) == 13);
  CHECK(overlap_fault_bound(10) == 4);
}

TEST_CASE("sizing across the sweep grid") {
  // n = s*(s-1)*x/2 and z = x*(s-1), spot-checked by hand.
  CHECK(network_size(2, 1) == 1);
  CHECK(shard_size(2, 1) == 1);
  CHECK(network_size(3, 2) == 6);
  CHECK(shard_size(3, 2) == 4);
  CHECK(network_size(4, 6) == 36);
  CHECK(shard_size(4, 6) == 18);
  CHECK(network_size(10, 4) == 180);
  CHECK(shard_size(10, 4) == 36);
  CHECK(network_size(7, 10) == 210);
  CHECK(shard_size(7, 10) == 60);
}

TEST_CASE("largest tolerated fault count is (z-1)/3") {
  CHECK(fault_estimate(3, 2) == 1);    // z=4
  CHECK(fault_estimate(4, 6) == 5);    // z=18: 3*5=15 < 18, 3*6=18 not < 18
  CHECK(fault_estimate(10, 4) == 11);  // z=36
  CHECK(fault_estimate(2, 1) == 0);    // z=1
  for (int s = 2; s <= 12; ++s) {
    for (int x = 1; x <= 12; ++x) {
      int64_t z = shard_size(s, x);
      int64_t f = fault_estimate(s, x);
      CHECK(3 * f < z);
      CHECK(3 * (f + 1) >= z);
    }
  }
}

TEST_CASE("overlap fault bound") {
  CHECK(overlap_fault_bound(1) == 0);
  CHECK(overlap_fault_bound(2) == 0);
  CHECK(overlap_fault_bound(3) == 0);
  CHECK(overlap_fault_bound(4) == 1);
  CHECK(overlap_fault_bound(9) == 3);
  CHECK(overlap_fault_bound(11) == 4);
}

TEST_CASE("argument validation") {
  CHECK_THROWS_AS(network_size(1, 10), std::invalid_argument);
  CHECK_THROWS_AS(shard_size(5, 0), std::invalid_argument);
  CHECK_THROWS_AS(fault_estimate(0, 0), std::invalid_argument);
  CHECK_THROWS_AS(overlap_fault_bound(0), std::invalid_argument);
}

TEST_CASE("initial seating: every peer in exactly two shards") {
  for (int s : {2, 3, 5, 7}) {
    for (int x : {1, 2, 10}) {
      InitialTopology t = build_topology(s, x);
      REQUIRE(t.peer_count == network_size(s, x));
      REQUIRE(static_cast<int64_t>(t.peer_shards.size()) == t.peer_count);
      std::map<ShardId, std::set<PeerId>> members;
      for (PeerId p = 0; p < t.peer_count; ++p) {
        auto [a, b] = t.peer_shards[static_cast<size_t>(p)];
        CHECK(a < b);  // exactly two distinct shards
        CHECK(a >= 0);
        CHECK(b < s);
        members[a].insert(p);
        members[b].insert(p);
      }
      REQUIRE(static_cast<int>(members.size()) == s);
      for (const auto& [shard, set] : members) {
        CHECK(static_cast<int64_t>(set.size()) == shard_size(s, x));
      }
      // Each unordered shard pair shares exactly x peers.
      for (ShardId a = 0; a < s; ++a) {
        for (ShardId b = a + 1; b < s; ++b) {
          int shared = 0;
          for (PeerId p : members[a]) {
            if (members[b].count(p)) ++shared;
          }
          CHECK(shared == x);
        }
      }
    }
  }
}
