#include "smartshards/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

namespace smartshards {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size()) {
    throw std::invalid_argument("config: bad integer for '" + key +
                                "': " + value);
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: bad boolean for '" + key +
                              "': " + value);
}

}  // namespace

int SimConfig::effective_drain() const {
  if (drainRounds >= 0) return drainRounds;
  return 8 * maxDelay + 40;
}

int SimConfig::effective_view_timeout() const {
  return std::max(viewTimeout, 3 * maxDelay + 3);
}

int SimConfig::verdict_grace() const { return 2 * maxDelay + 2; }

void SimConfig::validate() const {
  if (s < 2) throw std::invalid_argument("config: s must be at least 2");
  if (x < 1) throw std::invalid_argument("config: x must be at least 1");
  if (maxDelay < 1) {
    throw std::invalid_argument("config: maxDelay must be at least 1");
  }
  if (rounds < 1) throw std::invalid_argument("config: rounds must be positive");
  if (churnRate < 0) throw std::invalid_argument("config: churnRate negative");
  if (creationThreshold <= deletionThreshold) {
    throw std::invalid_argument(
        "config: creationThreshold must exceed deletionThreshold");
  }
  if (blockSize < 1) throw std::invalid_argument("config: blockSize < 1");
  if (pipelineDepth < 1) throw std::invalid_argument("config: pipelineDepth < 1");
  if (viewTimeout < 1) throw std::invalid_argument("config: viewTimeout < 1");
  if (resendPeriod < 1) throw std::invalid_argument("config: resendPeriod < 1");
  if (clientCount < 0) throw std::invalid_argument("config: clientCount < 0");
  if (walletsPerShard < 1) {
    throw std::invalid_argument("config: walletsPerShard < 1");
  }
  if (genesisPerWallet < 0) {
    throw std::invalid_argument("config: genesisPerWallet < 0");
  }
  if (forgeOverlapCount < 0) {
    throw std::invalid_argument("config: forgeOverlapCount < 0");
  }
  if (forgeEvery < 1) throw std::invalid_argument("config: forgeEvery < 1");
  if (multiDemo < 0) throw std::invalid_argument("config: multiDemo < 0");
  if (multiDemo > 0 && (multiInputs < 2 || multiOutputs < 1)) {
    throw std::invalid_argument("config: multi-transaction shape too small");
  }
  if (mode == Mode::Plain && (x * (s - 1)) % 2 != 0) {
    throw std::invalid_argument(
        "config: plain mode needs x*(s-1) even so committees divide evenly");
  }
  for (const auto& f : faultPlan) {
    if (f.peer < 0) throw std::invalid_argument("config: fault peer < 0");
  }
}

std::vector<std::pair<std::string, std::string>> SimConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  auto add = [&out](const char* k, const std::string& v) {
    out.emplace_back(k, v);
  };
  add("s", std::to_string(s));
  add("x", std::to_string(x));
  add("maxDelay", std::to_string(maxDelay));
  add("rounds", std::to_string(rounds));
  add("churnRate", std::to_string(churnRate));
  add("creationThreshold", std::to_string(creationThreshold));
  add("deletionThreshold", std::to_string(deletionThreshold));
  add("faultPlan", format_fault_plan(faultPlan));
  add("mode", to_string(mode));
  add("blockSize", std::to_string(blockSize));
  add("quorumRule", to_string(quorumRule));
  add("seed", std::to_string(seed));
  add("loadMode", to_string(loadMode));
  add("clientCount", std::to_string(clientCount));
  add("walletsPerShard", std::to_string(walletsPerShard));
  add("genesisPerWallet", std::to_string(genesisPerWallet));
  add("pipelineDepth", std::to_string(pipelineDepth));
  add("viewTimeout", std::to_string(viewTimeout));
  add("resendPeriod", std::to_string(resendPeriod));
  add("loadStopRound", std::to_string(loadStopRound));
  add("churnStopRound", std::to_string(churnStopRound));
  add("fig3Churn", fig3Churn ? "true" : "false");
  add("doubleSpendEvery", std::to_string(doubleSpendEvery));
  add("cuckoo", cuckoo ? "true" : "false");
  add("joinRandom", joinRandom ? "true" : "false");
  add("forgeOverlapCount", std::to_string(forgeOverlapCount));
  add("forgeEvery", std::to_string(forgeEvery));
  add("crashLeaderShard", std::to_string(crashLeaderShard));
  add("drainRounds", std::to_string(drainRounds));
  add("multiDemo", std::to_string(multiDemo));
  add("multiInputs", std::to_string(multiInputs));
  add("multiOutputs", std::to_string(multiOutputs));
  add("multiAbort", multiAbort ? "true" : "false");
  return out;
}

void apply_config_entry(SimConfig& cfg, const std::string& key,
                        const std::string& value) {
  auto as_int = [&](int& field) {
    field = static_cast<int>(parse_int(key, value));
  };
  if (key == "s") as_int(cfg.s);
  else if (key == "x") as_int(cfg.x);
  else if (key == "maxDelay") as_int(cfg.maxDelay);
  else if (key == "rounds") as_int(cfg.rounds);
  else if (key == "churnRate") as_int(cfg.churnRate);
  else if (key == "creationThreshold") as_int(cfg.creationThreshold);
  else if (key == "deletionThreshold") as_int(cfg.deletionThreshold);
  else if (key == "faultPlan") cfg.faultPlan = parse_fault_plan(value);
  else if (key == "mode") {
    if (value == "smart") cfg.mode = Mode::Smart;
    else if (value == "plain") cfg.mode = Mode::Plain;
    else throw std::invalid_argument("config: unknown mode: " + value);
  } else if (key == "blockSize") as_int(cfg.blockSize);
  else if (key == "quorumRule") {
    if (value == "pseudocode") cfg.quorumRule = QuorumRule::Pseudocode;
    else if (value == "strict-majority") {
      cfg.quorumRule = QuorumRule::StrictMajority;
    } else {
      throw std::invalid_argument("config: unknown quorumRule: " + value);
    }
  } else if (key == "seed") {
    cfg.seed = static_cast<uint64_t>(parse_int(key, value));
  } else if (key == "loadMode") {
    if (value == "leader-draw") cfg.loadMode = LoadMode::LeaderDraw;
    else if (value == "client-driven") cfg.loadMode = LoadMode::ClientDriven;
    else throw std::invalid_argument("config: unknown loadMode: " + value);
  } else if (key == "clientCount") as_int(cfg.clientCount);
  else if (key == "walletsPerShard") as_int(cfg.walletsPerShard);
  else if (key == "genesisPerWallet") as_int(cfg.genesisPerWallet);
  else if (key == "pipelineDepth") as_int(cfg.pipelineDepth);
  else if (key == "viewTimeout") as_int(cfg.viewTimeout);
  else if (key == "resendPeriod") as_int(cfg.resendPeriod);
  else if (key == "loadStopRound") as_int(cfg.loadStopRound);
  else if (key == "churnStopRound") as_int(cfg.churnStopRound);
  else if (key == "fig3Churn") cfg.fig3Churn = parse_bool(key, value);
  else if (key == "doubleSpendEvery") as_int(cfg.doubleSpendEvery);
  else if (key == "cuckoo") cfg.cuckoo = parse_bool(key, value);
  else if (key == "joinRandom") cfg.joinRandom = parse_bool(key, value);
  else if (key == "forgeOverlapCount") as_int(cfg.forgeOverlapCount);
  else if (key == "forgeEvery") as_int(cfg.forgeEvery);
  else if (key == "crashLeaderShard") as_int(cfg.crashLeaderShard);
  else if (key == "drainRounds") as_int(cfg.drainRounds);
  else if (key == "multiDemo") as_int(cfg.multiDemo);
  else if (key == "multiInputs") as_int(cfg.multiInputs);
  else if (key == "multiOutputs") as_int(cfg.multiOutputs);
  else if (key == "multiAbort") cfg.multiAbort = parse_bool(key, value);
  else throw std::invalid_argument("config: unknown key: " + key);
}

SimConfig parse_config_text(const std::string& text) {
  SimConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line without '=': " + t);
    }
    apply_config_entry(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

std::string format_fault_plan(const std::vector<FaultSpec>& plan) {
  if (plan.empty()) return "none";
  std::string out;
  for (const auto& f : plan) {
    if (!out.empty()) out += ';';
    out += std::to_string(f.peer);
    out += ':';
    out += to_string(f.behavior);
  }
  return out;
}

std::vector<FaultSpec> parse_fault_plan(const std::string& text) {
  std::vector<FaultSpec> plan;
  if (text.empty() || text == "none") return plan;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, ';')) {
    size_t colon = part.find(':');
    if (colon == std::string::npos) {
      throw std::invalid_argument("config: fault entry without ':': " + part);
    }
    FaultSpec f;
    f.peer = static_cast<PeerId>(parse_int("faultPlan", part.substr(0, colon)));
    std::string b = part.substr(colon + 1);
    if (b == "crash") f.behavior = FaultBehavior::CrashSilent;
    else if (b == "equivocate") f.behavior = FaultBehavior::EquivocateConsensus;
    else if (b == "forge") f.behavior = FaultBehavior::ForgeTransfer;
    else if (b == "spam") f.behavior = FaultBehavior::SpamInvalid;
    else if (b == "correct") f.behavior = FaultBehavior::Correct;
    else throw std::invalid_argument("config: unknown fault behavior: " + b);
    plan.push_back(f);
  }
  return plan;
}

const char* to_string(Mode m) {
  return m == Mode::Smart ? "smart" : "plain";
}

const char* to_string(QuorumRule q) {
  return q == QuorumRule::Pseudocode ? "pseudocode" : "strict-majority";
}

const char* to_string(LoadMode l) {
  return l == LoadMode::LeaderDraw ? "leader-draw" : "client-driven";
}

const char* to_string(FaultBehavior b) {
  switch (b) {
    case FaultBehavior::Correct: return "correct";
    case FaultBehavior::CrashSilent: return "crash";
    case FaultBehavior::EquivocateConsensus: return "equivocate";
    case FaultBehavior::ForgeTransfer: return "forge";
    case FaultBehavior::SpamInvalid: return "spam";
  }
  return "correct";
}

}  // namespace smartshards
