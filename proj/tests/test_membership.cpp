#include <doctest.h>

#include "smartshards/membership.hpp"

using namespace smartshards;

using Event = MembershipLog::Event;

TEST_CASE("epochs snapshot the member set after each event") {
  MembershipLog log;
  log.set_genesis({{3, 1}, {1, 2}, {2, 1}});
  CHECK(log.current_epoch() == 0);
  CHECK(log.members() == std::vector<PeerId>{1, 2, 3});
  CHECK(log.counter_shard(1) == 2);
  CHECK(log.counter_shard(3) == 1);
  CHECK(log.counter_shard(9) == -1);

  log.append({Event::Kind::Join, 9, 4});
  CHECK(log.current_epoch() == 1);
  CHECK(log.members() == std::vector<PeerId>{1, 2, 3, 9});
  CHECK(log.counter_shard(9) == 4);

  log.append({Event::Kind::Leave, 2, -1});
  CHECK(log.current_epoch() == 2);
  CHECK(log.members() == std::vector<PeerId>{1, 3, 9});
  CHECK(log.counter_shard(2) == -1);

  // Old epochs stay queryable.
  CHECK(log.members_at(0) == std::vector<PeerId>{1, 2, 3});
  CHECK(log.members_at(1) == std::vector<PeerId>{1, 2, 3, 9});

  log.append({Event::Kind::Update, 1, 5});
  CHECK(log.members() == std::vector<PeerId>{1, 3, 9});
  CHECK(log.counter_shard(1) == 5);
}

TEST_CASE("identical histories agree on the digest") {
  MembershipLog a;
  MembershipLog b;
  a.set_genesis({{1, 2}, {2, 3}});
  b.set_genesis({{1, 2}, {2, 3}});
  CHECK(a.digest() == b.digest());
  a.append({Event::Kind::Join, 5, 0});
  CHECK(a.digest() != b.digest());
  b.append({Event::Kind::Join, 5, 0});
  CHECK(a.digest() == b.digest());
  a.append({Event::Kind::Leave, 1, -1});
  b.append({Event::Kind::Leave, 2, -1});
  CHECK(a.digest() != b.digest());
}

TEST_CASE("membership checks") {
  MembershipLog log;
  log.set_genesis({{4, 0}});
  CHECK(log.is_member(4));
  CHECK_FALSE(log.is_member(5));
  log.append({Event::Kind::Leave, 4, -1});
  CHECK_FALSE(log.is_member(4));
}
