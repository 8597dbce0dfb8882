#include <doctest.h>

#include <sstream>
#include <stdexcept>

#include "smartshards/config.hpp"
#include "smartshards/trace.hpp"

using namespace smartshards;

TEST_CASE("config text parses and round-trips") {
  std::string text =
      "# comment\n"
      "s = 7\n"
      "x = 4\n"
      "maxDelay = 3\n"
      "rounds = 250\n"
      "churnRate = 2\n"
      "mode = plain\n"
      "quorumRule = strict-majority\n"
      "blockSize = 8\n"
      "seed = 42\n"
      "faultPlan = 3:crash;9:forge\n"
      "cuckoo = true\n";
  SimConfig cfg = parse_config_text(text);
  CHECK(cfg.s == 7);
  CHECK(cfg.x == 4);
  CHECK(cfg.maxDelay == 3);
  CHECK(cfg.rounds == 250);
  CHECK(cfg.churnRate == 2);
  CHECK(cfg.mode == Mode::Plain);
  CHECK(cfg.quorumRule == QuorumRule::StrictMajority);
  CHECK(cfg.blockSize == 8);
  CHECK(cfg.seed == 42);
  CHECK(cfg.cuckoo);
  REQUIRE(cfg.faultPlan.size() == 2);
  CHECK(cfg.faultPlan[0].peer == 3);
  CHECK(cfg.faultPlan[0].behavior == FaultBehavior::CrashSilent);
  CHECK(cfg.faultPlan[1].peer == 9);
  CHECK(cfg.faultPlan[1].behavior == FaultBehavior::ForgeTransfer);

  // Serialize all fields and parse them back.
  std::string all;
  for (auto& [k, v] : cfg.to_pairs()) all += k + "=" + v + "\n";
  SimConfig again = parse_config_text(all);
  CHECK(again.s == cfg.s);
  CHECK(again.mode == cfg.mode);
  CHECK(again.faultPlan == cfg.faultPlan);
  CHECK(again.quorumRule == cfg.quorumRule);
  CHECK(again.seed == cfg.seed);
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_config_text("bogusKey = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("s = banana\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("maxDelay = 0\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("s = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("mode = middling\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("faultPlan = 3-crash\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      parse_config_text("creationThreshold = 5\ndeletionThreshold = 9\n"),
      std::invalid_argument);
}

TEST_CASE("derived timing knobs") {
  SimConfig cfg;
  cfg.maxDelay = 1;
  CHECK(cfg.verdict_grace() == 4);
  CHECK(cfg.effective_view_timeout() == 10);
  cfg.maxDelay = 5;
  CHECK(cfg.verdict_grace() == 12);
  CHECK(cfg.effective_view_timeout() == 18);
  cfg.drainRounds = -1;
  CHECK(cfg.effective_drain() == 80);
  cfg.drainRounds = 7;
  CHECK(cfg.effective_drain() == 7);
}

TEST_CASE("trace events format and parse back") {
  TraceEvent e;
  e.round = 12;
  e.kind = EventKind::Append;
  e.actor = -100;
  e.digest = 0xabcdef0123456789ull;
  e.f0 = 3;
  e.f1 = -1;
  e.f2 = 77;
  e.f3 = make_utxo_id(3, 12);
  std::string line = format_event(e);
  TraceEvent back;
  REQUIRE(parse_event(line, back));
  CHECK(back == e);

  e.note = "leader proposed out of turn";
  e.kind = EventKind::Violation;
  line = format_event(e);
  REQUIRE(parse_event(line, back));
  CHECK(back == e);

  CHECK_FALSE(parse_event("nonsense", back));
  CHECK_FALSE(parse_event("1,unknown_kind,2,0,0,0,0,0", back));
}

TEST_CASE("recorder writes and re-reads a full trace") {
  TraceRecorder rec;
  rec.header("s", "5");
  rec.header("seed", "17");
  for (int i = 0; i < 5; ++i) {
    TraceEvent e;
    e.round = i;
    e.kind = i % 2 ? EventKind::Send : EventKind::Deliver;
    e.actor = i;
    e.digest = static_cast<Digest>(i * 1000);
    e.f0 = i + 1;
    rec.event(e);
  }
  std::string text = rec.to_text();
  std::istringstream is(text);
  TraceRecorder back = TraceRecorder::parse(is);
  CHECK(back.headers() == rec.headers());
  CHECK(back.events() == rec.events());
  CHECK(back.to_text() == text);
}
