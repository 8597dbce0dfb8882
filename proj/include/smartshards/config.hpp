#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "smartshards/ids.hpp"

namespace smartshards {

enum class Mode { Smart, Plain };
enum class QuorumRule { Pseudocode, StrictMajority };
enum class LoadMode { LeaderDraw, ClientDriven };

enum class FaultBehavior {
  Correct,
  CrashSilent,          // stops sending anything
  EquivocateConsensus,  // sends conflicting consensus votes
  ForgeTransfer,        // claims transfers that never happened
  SpamInvalid,          // floods leaders with invalid submissions
};

struct FaultSpec {
  PeerId peer = -1;
  FaultBehavior behavior = FaultBehavior::Correct;
  bool operator==(const FaultSpec&) const = default;
};

struct SimConfig {
  // Topology: shard count and overlap width. In Plain mode the same pair
  // sizes the flat network: s disjoint committees of x*(s-1) peers each.
  int s = 5;
  int x = 10;
  int maxDelay = 1;   // inclusive upper bound on per-message delay, rounds
  int rounds = 500;
  int churnRate = 0;  // membership events initiated per round
  int creationThreshold = 25;  // mean overlap that triggers a shard split
  int deletionThreshold = 9;   // mean overlap that triggers a shard merge
  std::vector<FaultSpec> faultPlan;
  Mode mode = Mode::Smart;
  int blockSize = 1;  // transactions batched per proposal
  QuorumRule quorumRule = QuorumRule::Pseudocode;
  uint64_t seed = 1;

  // Workload and environment knobs.
  LoadMode loadMode = LoadMode::LeaderDraw;
  int clientCount = 8;        // external clients in ClientDriven mode
  int walletsPerShard = 8;
  int genesisPerWallet = 4;
  int pipelineDepth = 2;      // consensus slots a leader keeps in flight
  int viewTimeout = 10;       // rounds of silence before a view change
  int resendPeriod = 10;      // client retry period
  int loadStopRound = 0;      // stop new load after this round (0 = never)
  int churnStopRound = 0;     // stop churn after this round (0 = never)
  bool fig3Churn = false;     // joins in the first half, leaves in the second
  bool churnLeaveOnly = false;  // churn drives leaves only, no fresh joins
  int doubleSpendEvery = 0;   // inject a conflicting pair every n rounds
  bool cuckoo = false;        // relocate a random peer on every join
  bool joinRandom = false;    // random join placement instead of balancing
  int forgeOverlapCount = 0;  // forgers seated together in one overlap
  int forgeEvery = 40;        // rounds between coordinated forged claims
  int crashLeaderShard = -1;  // initial leader of this shard crash-faults
  int drainRounds = -1;       // extra quiet rounds at the end (-1 = auto)
  int multiDemo = 0;          // multi-transactions driven during the run
  int multiInputs = 3;        // inputs per driven multi-transaction
  int multiOutputs = 2;       // outputs per driven multi-transaction
  bool multiAbort = false;    // rival-spend one input mid-consolidation

  int effective_drain() const;
  int effective_view_timeout() const;
  int verdict_grace() const;

  // Throws std::invalid_argument when any field is out of range.
  void validate() const;

  // Canonically ordered key=value pairs covering every field.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
};

// Parses flat key=value text ('#' comments, blank lines ignored). Unknown
// keys and malformed values throw std::invalid_argument.
SimConfig parse_config_text(const std::string& text);
// Applies one key=value assignment to an existing config.
void apply_config_entry(SimConfig& cfg, const std::string& key,
                        const std::string& value);

std::string format_fault_plan(const std::vector<FaultSpec>& plan);
std::vector<FaultSpec> parse_fault_plan(const std::string& text);

const char* to_string(Mode m);
const char* to_string(QuorumRule q);
const char* to_string(LoadMode l);
const char* to_string(FaultBehavior b);

}  // namespace smartshards
