#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "smartshards/ids.hpp"

namespace smartshards {

// Every observable step of a run is one fixed-shape record. Field use by kind:
//
//   kind          actor      digest          f0          f1          f2           f3
//   send          sender     msg digest      receiver    channel seq msg kind     sched. round
//   deliver       receiver   msg digest      sender      channel seq msg kind     send round
//   drop          receiver   msg digest      sender      channel seq msg kind     reason
//   submit        origin     tx digest       src shard   tgt shard   flavor       input utxo
//   propose       leader     payload digest  shard       view        item count   seq
//   decide        peer       payload digest  shard       view        bit          seq
//   append        peer       tx digest       shard       1 loc/2 in  position     output utxo
//   reject        peer       tx digest       shard       reason      seq          -
//   view          peer       0               shard       new view    -            -
//   violation     peer       0               shard       culprit     -            -      (note)
//   confirm       client     tx digest       shard       matches     -            round submitted
//   resend        client     tx digest       src shard   attempt     -            -
//   join_request  joiner     0               attempt     -           -            -
//   join_assign   service    0               joiner      shard a     shard b      -
//   join_exec     peer       0               shard       joiner      epoch        -
//   join_adopt    joiner     ledger digest   shard       matches     -            -
//   join_active   joiner     0               shard a     shard b     -            -
//   leave_request leaver     0               shard a     shard b     -            -
//   leave_exec    peer       0               shard       leaver      epoch        -
//   leave_done    leaver     0               -           -           -            -
//   sms_members   service    set digest      shard       set size    peer         +1/-1
//   sms_reply     service    set digest      shard       set size    receiver     advertised f  (note: member ids)
//   reseat        peer       0               old shard   new shard   -            -
//   create        service    donor digest    new shard   overlap avg donor count  -
//   destroy       service    snapshot digest shard       survivors   unspent bef. unspent after
//   evict         service    0               peer        shard a     shard b      -
//   multi         client     multi id        phase       aux         -            -
//   roundstat     service    0               live peers  shard count confirms     sends
enum class EventKind : uint8_t {
  Send, Deliver, Drop, Submit, Propose, Decide, Append, Reject, View,
  Violation, Confirm, Resend, JoinRequest, JoinAssign, JoinExec, JoinAdopt,
  JoinActive, LeaveRequest, LeaveExec, LeaveDone, SmsMembers, SmsReply, Reseat,
  Create, Destroy, Evict, Multi, RoundStat,
};

const char* event_kind_name(EventKind k);
bool event_kind_from_name(const std::string& name, EventKind& out);

struct TraceEvent {
  int32_t round = 0;
  EventKind kind = EventKind::Send;
  int32_t actor = 0;
  Digest digest = 0;
  int64_t f0 = 0;
  int64_t f1 = 0;
  int64_t f2 = 0;
  int64_t f3 = 0;
  std::string note;

  bool operator==(const TraceEvent&) const = default;
};

std::string format_event(const TraceEvent& e);
bool parse_event(const std::string& line, TraceEvent& out);

// Run consumers implement this; the simulator never stores events itself.
class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void header(const std::string& key, const std::string& value) = 0;
  virtual void event(const TraceEvent& e) = 0;
};

class NullSink final : public TraceSink {
 public:
  void header(const std::string&, const std::string&) override {}
  void event(const TraceEvent&) override {}
};

// Keeps the full run in memory for checking, replay comparison, or writing.
class TraceRecorder final : public TraceSink {
 public:
  void header(const std::string& key, const std::string& value) override;
  void event(const TraceEvent& e) override;

  const std::vector<std::pair<std::string, std::string>>& headers() const {
    return headers_;
  }
  const std::vector<TraceEvent>& events() const { return events_; }

  void write(std::ostream& os) const;
  std::string to_text() const;
  // Parses a written trace; throws std::runtime_error on malformed input.
  static TraceRecorder parse(std::istream& is);

 private:
  std::vector<std::pair<std::string, std::string>> headers_;
  std::vector<TraceEvent> events_;
};

// Forwards every record to two sinks.
class TeeSink final : public TraceSink {
 public:
  TeeSink(TraceSink& a, TraceSink& b) : a_(a), b_(b) {}
  void header(const std::string& key, const std::string& value) override {
    a_.header(key, value);
    b_.header(key, value);
  }
  void event(const TraceEvent& e) override {
    a_.event(e);
    b_.event(e);
  }

 private:
  TraceSink& a_;
  TraceSink& b_;
};

}  // namespace smartshards
